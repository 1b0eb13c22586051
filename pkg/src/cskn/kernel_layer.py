"""One layer of the sparse kernel network.

A layer compares two maps through a match kernel: every pair of sub-patch
locations contributes the product of the two patch magnitudes, a Gaussian
in the spatial distance between the locations (bandwidth beta), and a
Gaussian in the distance between the contrast-normalized patches
(bandwidth alpha). The layer approximates that kernel with a finite
embedding: per location, an activation vector

    h_i(z) = ||s_z|| * sqrt(b_i) * exp(-||W_i - s_z/||s_z||||^2 / alpha^2)

followed by Gaussian spatial pooling onto a strided grid, so that the sum
of pooled inner products approximates the kernel. Filters W and mixing
weights b are fit so that the weighted product of two activation
Gaussians reproduces the patch-similarity Gaussian on sampled pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.spatial.distance import pdist

from .errors import (
    DegeneratePoolError,
    DegenerateSampleError,
    InvalidArgumentError,
    NumericFailureError,
)
from .featmap import FeatureMap, SubPatchGrid, SubPatchPool

ALPHA_PAIR_SAMPLE_CAP = 100_000
LBFGS_MEMORY = 10
LBFGS_MAX_ITER = 200
LBFGS_PGTOL = 1e-5
WEIGHT_FLOOR = 1e-8
_OBJECTIVE_CHUNK = 65_536

INPUT_KINDS = ("patch", "gradient")


@dataclass(frozen=True)
class LayerConfig:
    """Architecture and training knobs for one layer.

    ``input_kind`` selects raw sub-patches ("patch") or the 2-D gradient
    encoding ("gradient", first layer only). ``sub_patch_size`` is the
    window side, ``subsampling_factor`` the pooling stride, and
    ``num_filters`` the embedding width.
    """

    input_kind: str
    sub_patch_size: int
    subsampling_factor: int
    num_filters: int
    alpha_quantile: float = 0.1
    num_training_pairs: int = 400_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.input_kind not in INPUT_KINDS:
            raise InvalidArgumentError(f"unknown input kind {self.input_kind!r}")
        if self.sub_patch_size < 1:
            raise InvalidArgumentError("sub_patch_size must be >= 1")
        if self.input_kind == "gradient" and self.sub_patch_size != 1:
            raise InvalidArgumentError("gradient layers use sub_patch_size 1")
        if self.subsampling_factor < 1:
            raise InvalidArgumentError("subsampling_factor must be >= 1")
        if self.num_filters < 1:
            raise InvalidArgumentError("num_filters must be >= 1")
        if not 0.0 < self.alpha_quantile < 1.0:
            raise InvalidArgumentError("alpha_quantile must lie in (0, 1)")
        if self.num_training_pairs < 1:
            raise InvalidArgumentError("num_training_pairs must be >= 1")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be nonnegative")


def _frozen_array(values, dtype=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LayerParams:
    """Learned parameters of one layer.

    ``filters`` is (num_filters, dim) and lives on (or near) the unit
    sphere after training; ``weights`` are the nonnegative mixing
    coefficients b. ``alpha`` is the patch-similarity bandwidth, ``beta``
    the spatial pooling bandwidth. Array dtype is preserved: models train
    in float64 and are sealed to float32 for persistence.
    """

    filters: np.ndarray
    weights: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        filters = _frozen_array(self.filters)
        weights = _frozen_array(self.weights)
        if filters.ndim != 2 or weights.ndim != 1:
            raise InvalidArgumentError("filters must be 2-D and weights 1-D")
        if filters.shape[0] != weights.shape[0]:
            raise InvalidArgumentError(
                f"{filters.shape[0]} filters but {weights.shape[0]} weights"
            )
        if not (np.isfinite(filters).all() and np.isfinite(weights).all()):
            raise InvalidArgumentError("layer parameters contain non-finite values")
        if (weights < 0).any():
            raise InvalidArgumentError("mixing weights must be nonnegative")
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidArgumentError("alpha and beta must be positive")
        object.__setattr__(self, "filters", filters)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def num_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def dim(self) -> int:
        return self.filters.shape[1]


@dataclass(frozen=True)
class PairBatch:
    """Sampled sub-patch pairs with their Gaussian similarity targets."""

    left: np.ndarray
    right: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        left = _frozen_array(self.left, dtype=np.float64)
        right = _frozen_array(self.right, dtype=np.float64)
        targets = _frozen_array(self.targets, dtype=np.float64)
        if left.ndim != 2 or left.shape != right.shape:
            raise InvalidArgumentError("left/right must be matching 2-D arrays")
        if targets.shape != (left.shape[0],):
            raise InvalidArgumentError("one target per pair required")
        if not (
            np.isfinite(left).all()
            and np.isfinite(right).all()
            and np.isfinite(targets).all()
        ):
            raise InvalidArgumentError("pair batch contains non-finite values")
        if (targets <= 0).any() or (targets > 1).any():
            raise InvalidArgumentError("targets must lie in (0, 1]")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return self.targets.shape[0]


def empirical_quantile(values: np.ndarray, quantile: float) -> float:
    """Order-statistic quantile with linear interpolation."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InvalidArgumentError("cannot take a quantile of an empty sample")
    if not 0.0 <= quantile <= 1.0:
        raise InvalidArgumentError("quantile must lie in [0, 1]")
    return float(np.quantile(values, quantile, method="linear"))


def _nonzero_rows(vectors: np.ndarray) -> np.ndarray:
    return vectors[np.any(vectors != 0.0, axis=1)]


def estimate_alpha(
    subpatches: np.ndarray | SubPatchPool | SubPatchGrid,
    quantile: float,
    *,
    max_pairs: int = ALPHA_PAIR_SAMPLE_CAP,
    seed: int = 0,
) -> float:
    """Similarity bandwidth: a quantile of pairwise patch distances.

    Accepts a (count, dim) matrix of normalized sub-patch vectors or any
    sub-patch collection; all-zero rows (zero-norm windows) are ignored.
    When the number of distinct unordered pairs exceeds ``max_pairs`` a
    uniform sample of that many pairs is used instead of the full set.
    """
    if isinstance(subpatches, (SubPatchPool, SubPatchGrid)):
        vectors = subpatches.normalized
    else:
        vectors = np.asarray(subpatches, dtype=np.float64)
    if vectors.ndim != 2:
        raise InvalidArgumentError("expected a (count, dim) matrix of sub-patches")
    vectors = _nonzero_rows(vectors)
    n = vectors.shape[0]
    if n < 2:
        raise DegenerateSampleError(
            "need at least two nonzero sub-patches to estimate alpha"
        )
    total_pairs = n * (n - 1) // 2
    if total_pairs <= max_pairs:
        distances = pdist(vectors)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        # Uniform over j != i: shift by a nonzero offset modulo n.
        j = (i + rng.integers(1, n, size=max_pairs)) % n
        distances = np.linalg.norm(vectors[i] - vectors[j], axis=1)
    alpha = empirical_quantile(distances, quantile)
    if alpha <= 0.0:
        raise DegenerateSampleError(
            "pairwise sub-patch distances are zero at the requested quantile"
        )
    return alpha


def compute_beta(subsampling_factor: int) -> float:
    """Spatial bandwidth tied to the pooling stride: factor / sqrt(2)."""
    if subsampling_factor < 1:
        raise InvalidArgumentError("subsampling_factor must be >= 1")
    return subsampling_factor / math.sqrt(2.0)


def _sq_dists(points: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, (points, anchors), clipped at zero."""
    d2 = (
        np.sum(points * points, axis=1)[:, np.newaxis]
        - 2.0 * points @ anchors.T
        + np.sum(anchors * anchors, axis=1)[np.newaxis, :]
    )
    return np.maximum(d2, 0.0, out=d2)


def activation_h(patches: SubPatchGrid, params: LayerParams) -> FeatureMap:
    """Per-location embedding activations, one channel per filter.

    Channel i at location z is
    ``||s_z|| * sqrt(b_i) * exp(-||W_i - s~_z||^2 / alpha^2)`` where s~_z
    is the normalized sub-patch; zero-norm locations yield zero vectors.
    """
    if patches.dim != params.dim:
        raise InvalidArgumentError(
            f"sub-patch dim {patches.dim} does not match filter dim {params.dim}"
        )
    filters = np.asarray(params.filters, dtype=np.float64)
    weights = np.asarray(params.weights, dtype=np.float64)
    d2 = _sq_dists(patches.normalized, filters)
    acts = np.exp(-d2 / (params.alpha * params.alpha))
    acts *= np.sqrt(weights)[np.newaxis, :]
    acts *= patches.norms[:, np.newaxis]
    rows, cols = patches.grid_shape
    return FeatureMap(acts.reshape(rows, cols, filters.shape[0]))


def _pooling_kernel(beta: float) -> np.ndarray:
    """Truncated Gaussian window: zero beyond Euclidean radius 3*beta."""
    radius = int(math.floor(3.0 * beta))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    d2 = offsets[:, np.newaxis] ** 2 + offsets[np.newaxis, :] ** 2
    kernel = np.exp(-d2 / (2.0 * beta * beta))
    kernel[d2 > 9.0 * beta * beta] = 0.0
    return kernel


def spatial_pool_g(
    feature_map: FeatureMap, beta: float, subsampling_factor: int
) -> FeatureMap:
    """Gaussian-pool activations onto a strided grid.

    Output location k sits at input coordinate floor(f/2) + k*f; the output
    has ceil(extent / f) entries per axis. Each output is the sum of the
    input weighted by exp(-||u - z||^2 / (2 beta^2)), truncated at radius
    3*beta. For small maps the last centers may fall past the border; the
    window clip handles that.
    """
    if beta <= 0:
        raise InvalidArgumentError("beta must be positive")
    f = int(subsampling_factor)
    if f < 1:
        raise InvalidArgumentError("subsampling_factor must be >= 1")
    vals = feature_map.values
    h, w, c = vals.shape
    kernel = _pooling_kernel(beta)
    radius = kernel.shape[0] // 2
    out_h = -(-h // f)
    out_w = -(-w // f)
    centers_r = f // 2 + f * np.arange(out_h)
    centers_c = f // 2 + f * np.arange(out_w)
    out = np.zeros((out_h, out_w, c), dtype=np.float64)
    for oi, ur in enumerate(centers_r):
        r0 = max(0, ur - radius)
        r1 = min(h, ur + radius + 1)
        if r0 >= r1:
            continue
        kr0 = r0 - (ur - radius)
        for oj, uc in enumerate(centers_c):
            c0 = max(0, uc - radius)
            c1 = min(w, uc + radius + 1)
            if c0 >= c1:
                continue
            kc0 = c0 - (uc - radius)
            window = kernel[kr0 : kr0 + (r1 - r0), kc0 : kc0 + (c1 - c0)]
            out[oi, oj] = np.tensordot(window, vals[r0:r1, c0:c1], axes=([0, 1], [0, 1]))
    return FeatureMap(out)


def approx_kernel(map_a: FeatureMap, map_b: FeatureMap) -> float:
    """Embedding-side kernel value: sum of pooled inner products.

    Both maps must be pooled outputs of the same layer (matching shapes).
    """
    if map_a.values.shape != map_b.values.shape:
        raise InvalidArgumentError(
            f"mismatched pooled maps {map_a.values.shape} vs {map_b.values.shape}"
        )
    return float(np.sum(map_a.values * map_b.values))


def _pair_objective(
    filters: np.ndarray,
    weights: np.ndarray,
    alpha: float,
    left: np.ndarray,
    right: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Sum of squared pair residuals with analytic gradients.

    The model for a pair (x, y) is
    ``sum_i b_i exp(-||W_i - x||^2 / a^2) exp(-||W_i - y||^2 / a^2)``;
    the loss is ``sum_pairs (target - model)^2``. Work is chunked so the
    (pairs, filters) temporaries stay bounded; chunk order is fixed, so
    the reduction is deterministic.
    """
    a2 = alpha * alpha
    loss = 0.0
    grad_w = np.zeros_like(filters)
    grad_b = np.zeros_like(weights)
    count = targets.shape[0]
    for start in range(0, count, _OBJECTIVE_CHUNK):
        stop = min(start + _OBJECTIVE_CHUNK, count)
        x = left[start:stop]
        y = right[start:stop]
        t = targets[start:stop]
        u = np.exp(-(_sq_dists(x, filters) + _sq_dists(y, filters)) / a2)
        residual = t - u @ weights
        loss += float(residual @ residual)
        grad_b -= 2.0 * (u.T @ residual)
        ru = u * residual[:, np.newaxis]
        col = ru.sum(axis=0)
        grad_w += (4.0 * weights / a2)[:, np.newaxis] * (
            2.0 * filters * col[:, np.newaxis] - ru.T @ (x + y)
        )
    return loss, grad_w, grad_b


def objective_and_gradient(
    params: LayerParams, batch: PairBatch
) -> tuple[float, np.ndarray, np.ndarray]:
    """Evaluate the pair-fitting loss and its gradients at ``params``.

    Returns (loss, grad_filters, grad_weights).
    """
    if params.dim != batch.left.shape[1]:
        raise InvalidArgumentError(
            f"filter dim {params.dim} does not match pair dim {batch.left.shape[1]}"
        )
    filters = np.asarray(params.filters, dtype=np.float64)
    weights = np.asarray(params.weights, dtype=np.float64)
    return _pair_objective(
        filters, weights, params.alpha, batch.left, batch.right, batch.targets
    )


def train_layer(
    pairs: PairBatch, config: LayerConfig, init: LayerParams
) -> LayerParams:
    """Fit filters and weights to the pair targets with bounded L-BFGS.

    Weights are box-constrained to [WEIGHT_FLOOR, inf); filters are free.
    Termination: projected-gradient sup-norm below LBFGS_PGTOL or
    LBFGS_MAX_ITER iterations. The returned loss never exceeds the loss at
    the (floor-clipped) initial point.
    """
    if init.num_filters != config.num_filters:
        raise InvalidArgumentError(
            f"init has {init.num_filters} filters, config wants {config.num_filters}"
        )
    if init.dim != pairs.left.shape[1]:
        raise InvalidArgumentError("init filter dim does not match pair dim")
    p, d = init.num_filters, init.dim
    w0 = np.asarray(init.filters, dtype=np.float64).copy()
    b0 = np.maximum(np.asarray(init.weights, dtype=np.float64), WEIGHT_FLOOR)
    theta0 = np.concatenate([w0.ravel(), b0])
    alpha = init.alpha
    evaluations = [0]

    def fun(theta: np.ndarray) -> tuple[float, np.ndarray]:
        evaluations[0] += 1
        filters = theta[: p * d].reshape(p, d)
        weights = theta[p * d :]
        loss, grad_w, grad_b = _pair_objective(
            filters, weights, alpha, pairs.left, pairs.right, pairs.targets
        )
        if not (
            math.isfinite(loss)
            and np.isfinite(grad_w).all()
            and np.isfinite(grad_b).all()
        ):
            raise NumericFailureError(
                f"non-finite pair objective at evaluation {evaluations[0]}"
            )
        return loss, np.concatenate([grad_w.ravel(), grad_b])

    initial_loss = fun(theta0)[0]
    bounds = [(None, None)] * (p * d) + [(WEIGHT_FLOOR, None)] * p
    result = optimize.minimize(
        fun,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={
            "maxcor": LBFGS_MEMORY,
            "maxiter": LBFGS_MAX_ITER,
            "gtol": LBFGS_PGTOL,
            "ftol": 1e-12,
        },
    )
    if not math.isfinite(result.fun) or result.fun > initial_loss:
        # Line searches are monotone; falling back keeps the guarantee
        # even if the solver bails out on a pathological instance.
        theta = theta0
    else:
        theta = result.x
    filters = theta[: p * d].reshape(p, d)
    weights = np.maximum(theta[p * d :], WEIGHT_FLOOR)
    return LayerParams(filters, weights, alpha=init.alpha, beta=init.beta)


def sample_training_pairs(
    pool: SubPatchPool | SubPatchGrid, count: int, alpha: float, seed: int
) -> PairBatch:
    """Draw pairs of nonzero sub-patches uniformly with replacement.

    Targets are ``exp(-||x - y||^2 / (2 alpha^2))`` on the normalized
    vectors; a pair may repeat one patch twice (target exactly 1).
    """
    if count < 1:
        raise InvalidArgumentError("pair count must be >= 1")
    if alpha <= 0:
        raise InvalidArgumentError("alpha must be positive")
    keep = pool.norms > 0
    vectors = pool.normalized[keep]
    n = vectors.shape[0]
    if n < 2:
        raise DegeneratePoolError(
            "need at least two nonzero sub-patches to sample pairs"
        )
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=count)
    j = rng.integers(0, n, size=count)
    left = vectors[i]
    right = vectors[j]
    d2 = np.sum((left - right) ** 2, axis=1)
    targets = np.exp(-d2 / (2.0 * alpha * alpha))
    return PairBatch(left, right, targets)
