"""Linear classification and retrieval evaluation over descriptors.

The classifier is one-vs-rest ridge-regularized squared-hinge regression
fit with limited-memory quasi-Newton steps on standardized features.
Retrieval ranks a gallery by Euclidean distance. Metrics are exact
small-sample formulas: precision at a cutoff, top-1 accuracy, and the
rank-statistic area under the ROC curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import rankdata

from .errors import InvalidArgumentError, UndefinedMetricError
from .network import PyramidDescriptor

SVM_LBFGS_MEMORY = 10
SVM_LBFGS_TOL = 1e-5
SVM_LBFGS_MAX_ITER = 500
_STD_FLOOR = 1e-12


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray) and features.ndim == 2:
        return np.asarray(features, dtype=np.float64)
    rows = [
        f.values if isinstance(f, PyramidDescriptor) else np.asarray(f, dtype=np.float64)
        for f in features
    ]
    return np.stack(rows).astype(np.float64)


@dataclass(frozen=True)
class ClassifierParams:
    """A fitted one-vs-rest linear classifier plus its feature scaling."""

    classes: tuple[str, ...]
    weights: np.ndarray
    biases: np.ndarray
    feature_mean: np.ndarray
    feature_std: np.ndarray
    provenance: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        biases = np.asarray(self.biases, dtype=np.float64)
        mean = np.asarray(self.feature_mean, dtype=np.float64)
        std = np.asarray(self.feature_std, dtype=np.float64)
        if len(self.classes) < 2:
            raise InvalidArgumentError("a classifier needs at least two classes")
        if weights.shape != (len(self.classes), mean.shape[0]):
            raise InvalidArgumentError("weight matrix shape mismatch")
        if biases.shape != (len(self.classes),):
            raise InvalidArgumentError("one bias per class required")
        if std.shape != mean.shape or (std < _STD_FLOOR).any():
            raise InvalidArgumentError("feature stds must be >= 1e-12")
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "feature_mean", mean)
        object.__setattr__(self, "feature_std", std)
        object.__setattr__(self, "provenance", dict(self.provenance))

    def standardize(self, features) -> np.ndarray:
        matrix = _as_matrix(features)
        if matrix.shape[1] != self.feature_mean.shape[0]:
            raise InvalidArgumentError(
                f"classifier expects {self.feature_mean.shape[0]} features, "
                f"got {matrix.shape[1]}"
            )
        return (matrix - self.feature_mean) / self.feature_std


def _squared_hinge_objective(
    theta: np.ndarray, x: np.ndarray, y: np.ndarray, regularization: float
) -> tuple[float, np.ndarray]:
    w = theta[:-1]
    b = theta[-1]
    margins = y * (x @ w + b)
    slack = np.maximum(0.0, 1.0 - margins)
    n = x.shape[0]
    loss = regularization * float(w @ w) + float(slack @ slack) / n
    coeff = (2.0 / n) * slack * y
    grad_w = 2.0 * regularization * w - x.T @ coeff
    grad_b = -float(coeff.sum())
    return loss, np.concatenate([grad_w, [grad_b]])


def train_svm(
    features,
    labels: Sequence[str],
    regularization: float = 1.0,
    step: float = 0.1,
) -> ClassifierParams:
    """Fit one-vs-rest squared-hinge linear classifiers.

    Features are standardized with training statistics (near-constant
    dimensions fall back to unit scale). Per class the objective is
    ``regularization * ||w||^2 + mean(max(0, 1 - y * (w.x + b))^2)``,
    minimized by L-BFGS from zero. ``step`` is recorded for provenance;
    the quasi-Newton line search governs actual step lengths.
    """
    matrix = _as_matrix(features)
    labels = [str(label) for label in labels]
    if matrix.shape[0] != len(labels):
        raise InvalidArgumentError("one label per feature row required")
    if matrix.shape[0] < 2:
        raise InvalidArgumentError("training needs at least two samples")
    if regularization <= 0:
        raise InvalidArgumentError("regularization must be positive")
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise InvalidArgumentError("training needs at least two distinct classes")
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    std = np.where(std < _STD_FLOOR, 1.0, std)
    scaled = (matrix - mean) / std
    label_array = np.asarray(labels)
    weights = np.zeros((len(classes), matrix.shape[1]))
    biases = np.zeros(len(classes))
    for row, cls in enumerate(classes):
        y = np.where(label_array == cls, 1.0, -1.0)
        theta0 = np.zeros(matrix.shape[1] + 1)
        result = optimize.minimize(
            _squared_hinge_objective,
            theta0,
            args=(scaled, y, regularization),
            jac=True,
            method="L-BFGS-B",
            options={
                "maxcor": SVM_LBFGS_MEMORY,
                "maxiter": SVM_LBFGS_MAX_ITER,
                "gtol": SVM_LBFGS_TOL,
                "ftol": 1e-12,
            },
        )
        weights[row] = result.x[:-1]
        biases[row] = result.x[-1]
    return ClassifierParams(
        classes=classes,
        weights=weights,
        biases=biases,
        feature_mean=mean,
        feature_std=std,
        provenance={"regularization": float(regularization), "step": float(step)},
    )


def predict(features, params: ClassifierParams) -> tuple[list[str], np.ndarray]:
    """Class decisions and per-class scores; ties go to the earlier class."""
    scaled = params.standardize(features)
    scores = scaled @ params.weights.T + params.biases
    winners = np.argmax(scores, axis=1)
    return [params.classes[i] for i in winners], scores


@dataclass(frozen=True)
class RetrievalRun:
    """One query's ranked gallery with optional relevance flags.

    ``ranked_ids`` lists gallery identifiers by ascending distance,
    distance ties broken by gallery order. ``relevance`` (if present)
    aligns with the ranked order.
    """

    query_id: object
    ranked_ids: tuple
    distances: np.ndarray
    relevance: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        distances = np.asarray(self.distances, dtype=np.float64)
        ranked = tuple(self.ranked_ids)
        if distances.shape != (len(ranked),):
            raise InvalidArgumentError("one distance per ranked item required")
        if len(ranked) == 0:
            raise InvalidArgumentError("a retrieval run needs a nonempty gallery")
        if (np.diff(distances) < 0).any():
            raise InvalidArgumentError("ranked distances must be nondecreasing")
        relevance = self.relevance
        if relevance is not None:
            relevance = tuple(bool(r) for r in relevance)
            if len(relevance) != len(ranked):
                raise InvalidArgumentError("one relevance flag per ranked item")
        object.__setattr__(self, "ranked_ids", ranked)
        object.__setattr__(self, "distances", distances)
        object.__setattr__(self, "relevance", relevance)

    def __len__(self) -> int:
        return len(self.ranked_ids)


def rank_by_euclidean(
    query,
    gallery,
    *,
    query_id: object = 0,
    gallery_ids: Sequence | None = None,
    relevant: Sequence[bool] | None = None,
) -> RetrievalRun:
    """Rank gallery items by Euclidean distance to the query.

    ``relevant`` flags are given in gallery order and are re-ordered to
    match the ranking. Equal distances keep gallery order (stable sort).
    """
    query_vec = (
        query.values if isinstance(query, PyramidDescriptor) else np.asarray(query)
    ).astype(np.float64)
    matrix = _as_matrix(gallery)
    if matrix.shape[0] == 0:
        raise InvalidArgumentError("gallery must be nonempty")
    if query_vec.shape != (matrix.shape[1],):
        raise InvalidArgumentError("query and gallery dimensions differ")
    ids = list(gallery_ids) if gallery_ids is not None else list(range(matrix.shape[0]))
    if len(ids) != matrix.shape[0]:
        raise InvalidArgumentError("one id per gallery item required")
    if relevant is not None and len(relevant) != matrix.shape[0]:
        raise InvalidArgumentError("one relevance flag per gallery item required")
    distances = np.linalg.norm(matrix - query_vec[np.newaxis, :], axis=1)
    order = np.argsort(distances, kind="stable")
    ranked_relevance = (
        tuple(bool(relevant[i]) for i in order) if relevant is not None else None
    )
    return RetrievalRun(
        query_id=query_id,
        ranked_ids=tuple(ids[i] for i in order),
        distances=distances[order],
        relevance=ranked_relevance,
    )


def precision_at_q(run: RetrievalRun, q: int) -> float:
    """Fraction of the top q ranked items that are relevant."""
    if run.relevance is None:
        raise InvalidArgumentError("retrieval run carries no relevance flags")
    if not 1 <= q <= len(run):
        raise InvalidArgumentError(
            f"q must lie in [1, {len(run)}], got {q}"
        )
    return sum(run.relevance[:q]) / q


def top1_accuracy(predicted: Sequence[str], actual: Sequence[str]) -> float:
    """Fraction of exact label matches."""
    if len(predicted) != len(actual):
        raise InvalidArgumentError("prediction/label lengths differ")
    if len(predicted) == 0:
        raise InvalidArgumentError("accuracy over zero samples is undefined")
    hits = sum(1 for p, a in zip(predicted, actual) if p == a)
    return hits / len(predicted)


def roc_auc(scores: Sequence[float], truths: Sequence[int]) -> float:
    """Rank-statistic AUC: P(positive score > negative) + half for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truths)
    if scores.ndim != 1 or scores.shape != truth.shape:
        raise InvalidArgumentError("scores and truths must be matching vectors")
    if not np.isin(truth, (0, 1)).all():
        raise InvalidArgumentError("truths must be binary (0/1)")
    positives = int(truth.sum())
    negatives = truth.shape[0] - positives
    if positives == 0 or negatives == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    positive_rank_sum = float(ranks[truth == 1].sum())
    return (positive_rank_sum - positives * (positives + 1) / 2.0) / (
        positives * negatives
    )
