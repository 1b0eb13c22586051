"""Classifier, ranking, and metric behavior."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cskn.errors import InvalidArgumentError, UndefinedMetricError
from cskn.evalkit import (
    ClassifierParams,
    RetrievalRun,
    precision_at_q,
    predict,
    rank_by_euclidean,
    roc_auc,
    top1_accuracy,
    train_svm,
)


def grid_search_linear_top1(features, labels, classes):
    """Brute-force reference: best one-vs-rest accuracy over a coarse
    weight grid, as a lower bound a trained linear classifier must meet
    on easy data (and an upper bound neither can beat on XOR)."""
    features = np.asarray(features, dtype=np.float64)
    best = 0.0
    grid = (-1.0, -0.5, 0.0, 0.5, 1.0)
    per_class = []
    for _ in classes:
        per_class.append(
            list(itertools.product(grid, repeat=features.shape[1] + 1))
        )
    # Score each class with its own best-fitting separator independently is
    # not meaningful for argmax voting, so enumerate joint choices only for
    # tiny problems; here all classes share the candidate set.
    best = 0.0
    for combo in itertools.product(*per_class):
        scores = np.stack(
            [
                features @ np.asarray(theta[:-1]) + theta[-1]
                for theta in combo
            ],
            axis=1,
        )
        predicted = [classes[i] for i in np.argmax(scores, axis=1)]
        best = max(best, top1_accuracy(predicted, labels))
    return best


class TestTrainSvm:
    def test_separable_two_class_line(self):
        rng = np.random.default_rng(0)
        neg = rng.normal(loc=-3.0, size=(20, 1))
        pos = rng.normal(loc=3.0, size=(20, 1))
        features = np.vstack([neg, pos])
        labels = ["a"] * 20 + ["b"] * 20
        params = train_svm(features, labels)
        predicted, scores = predict(features, params)
        assert top1_accuracy(predicted, labels) == 1.0
        assert scores.shape == (40, 2)

    def test_three_class_blobs(self):
        rng = np.random.default_rng(1)
        centers = {"x": (0.0, 6.0), "y": (6.0, 0.0), "z": (-6.0, -6.0)}
        features, labels = [], []
        for name, center in centers.items():
            features.append(rng.normal(loc=center, scale=0.5, size=(15, 2)))
            labels += [name] * 15
        features = np.vstack(features)
        params = train_svm(features, labels)
        assert params.classes == ("x", "y", "z")
        predicted, _ = predict(features, params)
        assert top1_accuracy(predicted, labels) == 1.0

    def test_xor_is_capped_like_any_linear_rule(self):
        # Four XOR points duplicated: no linear decision rule exceeds 0.75
        # top-1, which the exhaustive grid-search reference confirms.
        base = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        features = np.tile(base, (4, 1))
        labels = (["even", "odd", "odd", "even"]) * 4
        cap = grid_search_linear_top1(base, ["even", "odd", "odd", "even"], ("even", "odd"))
        assert cap <= 0.75
        params = train_svm(features, labels)
        predicted, _ = predict(features, params)
        assert top1_accuracy(predicted, labels) <= 0.75

    def test_duplicating_every_sample_changes_nothing(self):
        # With a mean (not sum) data term the objective is invariant to
        # replicating the training set.
        rng = np.random.default_rng(2)
        features = rng.normal(size=(30, 4))
        labels = ["p" if v > 0 else "q" for v in features[:, 0]]
        once = train_svm(features, labels)
        twice = train_svm(np.vstack([features, features]), labels + labels)
        np.testing.assert_allclose(once.weights, twice.weights, atol=1e-6)
        np.testing.assert_allclose(once.biases, twice.biases, atol=1e-6)

    def test_constant_feature_dimension_is_tolerated(self):
        rng = np.random.default_rng(3)
        informative = np.vstack(
            [rng.normal(loc=-3.0, size=(10, 1)), rng.normal(loc=3.0, size=(10, 1))]
        )
        features = np.hstack([informative, np.full((20, 1), 5.0)])
        labels = ["a" if v > 0 else "b" for v in informative[:, 0]]
        params = train_svm(features, labels)
        assert params.feature_std[1] == 1.0
        predicted, _ = predict(features, params)
        assert top1_accuracy(predicted, labels) == 1.0

    def test_validation(self):
        features = np.ones((4, 2))
        with pytest.raises(InvalidArgumentError):
            train_svm(features, ["a", "b", "a"])
        with pytest.raises(InvalidArgumentError):
            train_svm(features, ["a", "a", "a", "a"])
        with pytest.raises(InvalidArgumentError):
            train_svm(features, ["a", "b", "a", "b"], regularization=0.0)

    def test_stronger_regularization_shrinks_weights(self):
        rng = np.random.default_rng(4)
        features = rng.normal(size=(40, 3))
        labels = ["a" if v > 0 else "b" for v in features[:, 0]]
        loose = train_svm(features, labels, regularization=0.01)
        tight = train_svm(features, labels, regularization=100.0)
        assert np.linalg.norm(tight.weights) < np.linalg.norm(loose.weights)


class TestClassifierParams:
    def test_standardize_uses_training_statistics(self):
        params = ClassifierParams(
            classes=("a", "b"),
            weights=np.zeros((2, 2)),
            biases=np.zeros(2),
            feature_mean=np.array([1.0, 2.0]),
            feature_std=np.array([2.0, 4.0]),
        )
        scaled = params.standardize(np.array([[3.0, 10.0]]))
        np.testing.assert_allclose(scaled, [[1.0, 2.0]])

    def test_shape_guards(self):
        with pytest.raises(InvalidArgumentError):
            ClassifierParams(
                classes=("a",),
                weights=np.zeros((1, 2)),
                biases=np.zeros(1),
                feature_mean=np.zeros(2),
                feature_std=np.ones(2),
            )
        with pytest.raises(InvalidArgumentError):
            ClassifierParams(
                classes=("a", "b"),
                weights=np.zeros((2, 2)),
                biases=np.zeros(3),
                feature_mean=np.zeros(2),
                feature_std=np.ones(2),
            )


class TestRanking:
    def test_orders_by_distance(self):
        gallery = np.array([[0.0], [3.0], [1.0], [2.0]])
        run = rank_by_euclidean(np.array([0.9]), gallery)
        assert run.ranked_ids == (2, 0, 3, 1)
        np.testing.assert_allclose(run.distances, [0.1, 0.9, 1.1, 2.1])

    def test_ties_keep_gallery_order(self):
        gallery = np.array([[1.0], [-1.0], [1.0]])
        run = rank_by_euclidean(np.array([0.0]), gallery, gallery_ids=["p", "q", "r"])
        assert run.ranked_ids == ("p", "q", "r")

    def test_relevance_reordered_with_ranking(self):
        gallery = np.array([[5.0], [1.0], [3.0]])
        run = rank_by_euclidean(
            np.array([0.0]), gallery, relevant=[True, False, True]
        )
        assert run.relevance == (False, True, True)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            rank_by_euclidean(np.zeros(3), np.zeros((2, 2)))

    def test_empty_gallery(self):
        with pytest.raises(InvalidArgumentError):
            rank_by_euclidean(np.zeros(2), np.zeros((0, 2)))


class TestRetrievalRun:
    def test_requires_sorted_distances(self):
        with pytest.raises(InvalidArgumentError):
            RetrievalRun(0, (1, 2), np.array([2.0, 1.0]))

    def test_requires_aligned_relevance(self):
        with pytest.raises(InvalidArgumentError):
            RetrievalRun(0, (1, 2), np.array([1.0, 2.0]), relevance=(True,))


class TestPrecisionAtQ:
    def test_hand_counts(self):
        run = RetrievalRun(
            0,
            ("a", "b", "c", "d"),
            np.array([0.1, 0.2, 0.3, 0.4]),
            relevance=(True, False, True, True),
        )
        assert precision_at_q(run, 1) == 1.0
        assert precision_at_q(run, 2) == 0.5
        assert precision_at_q(run, 3) == pytest.approx(2 / 3)
        assert precision_at_q(run, 4) == 0.75

    def test_bounds_and_missing_relevance(self):
        run = RetrievalRun(
            0, ("a",), np.array([0.0]), relevance=(True,)
        )
        with pytest.raises(InvalidArgumentError):
            precision_at_q(run, 0)
        with pytest.raises(InvalidArgumentError):
            precision_at_q(run, 2)
        bare = RetrievalRun(0, ("a",), np.array([0.0]))
        with pytest.raises(InvalidArgumentError):
            precision_at_q(bare, 1)


class TestTop1Accuracy:
    def test_counts_exact_matches(self):
        assert top1_accuracy(["a", "b", "c"], ["a", "x", "c"]) == pytest.approx(2 / 3)

    def test_guards(self):
        with pytest.raises(InvalidArgumentError):
            top1_accuracy(["a"], ["a", "b"])
        with pytest.raises(InvalidArgumentError):
            top1_accuracy([], [])


class TestRocAuc:
    def test_hand_case(self):
        # Positives at ranks 4 and 2 of four: (4 + 2 - 3) / 4 = 0.75.
        assert roc_auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == 0.75

    def test_perfect_and_inverted(self):
        assert roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
        assert roc_auc([0.1, 0.2, 0.9, 0.8], [1, 1, 0, 0]) == 0.0

    def test_all_tied_scores_give_half(self):
        assert roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_partial_tie_counts_half(self):
        # Positive tied with one negative: (1 + 0.5) / 2 pairwise wins.
        assert roc_auc([0.7, 0.7, 0.1], [1, 0, 0]) == 0.75

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        scores = rng.normal(size=40)
        truths = (rng.random(40) < 0.4).astype(int)
        base = roc_auc(scores, truths)
        assert roc_auc(np.exp(scores), truths) == pytest.approx(base)
        assert roc_auc(3.0 * scores + 7.0, truths) == pytest.approx(base)

    def test_single_class_is_undefined(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [1, 1])
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [0, 0])

    def test_input_guards(self):
        with pytest.raises(InvalidArgumentError):
            roc_auc([0.1, 0.2], [0, 2])
        with pytest.raises(InvalidArgumentError):
            roc_auc([0.1], [0, 1])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**16), size=st.integers(2, 30))
    def test_matches_pair_counting(self, seed, size):
        rng = np.random.default_rng(seed)
        scores = np.round(rng.normal(size=size), 1)
        truths = rng.integers(0, 2, size=size)
        if truths.sum() in (0, size):
            truths[0] = 1 - truths[0]
        wins = half = total = 0
        for i in range(size):
            for j in range(size):
                if truths[i] == 1 and truths[j] == 0:
                    total += 1
                    if scores[i] > scores[j]:
                        wins += 1
                    elif scores[i] == scores[j]:
                        half += 1
        expected = (wins + 0.5 * half) / total
        assert roc_auc(scores, truths) == pytest.approx(expected, rel=1e-12)
