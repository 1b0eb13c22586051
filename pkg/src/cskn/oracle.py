"""Slow, obviously correct references for validating the fast paths.

The exact match kernel evaluates the full double sum over sub-patch
locations that the embedding approximates; the finite-difference helper
checks analytic gradients; the error report summarizes how far an
approximation sits from its reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .featmap import FeatureMap, extract_subpatches

EXACT_KERNEL_MAX_EXTENT = 16
FINITE_DIFF_STEP = 1e-5


def exact_match_kernel(
    map_a: FeatureMap,
    map_b: FeatureMap,
    patch_size: int,
    alpha: float,
    beta: float,
) -> float:
    """Exact kernel value by summing over all location pairs.

    K = sum over (z, z') of ||s_z|| ||s'_z'||
        * exp(-||z - z'||^2 / (2 beta^2))
        * exp(-||s~_z - s~'_z'||^2 / (2 alpha^2))

    Locations are valid-window indices; maps larger than 16x16 are
    rejected because the double sum is meant for verification only.
    """
    if alpha <= 0 or beta <= 0:
        raise InvalidArgumentError("alpha and beta must be positive")
    for m in (map_a, map_b):
        if m.height > EXACT_KERNEL_MAX_EXTENT or m.width > EXACT_KERNEL_MAX_EXTENT:
            raise InvalidArgumentError(
                f"exact kernel is limited to {EXACT_KERNEL_MAX_EXTENT}x"
                f"{EXACT_KERNEL_MAX_EXTENT} maps, got {m.height}x{m.width}"
            )
    if map_a.channels != map_b.channels:
        raise InvalidArgumentError("maps must share a channel count")
    grid_a = extract_subpatches(map_a, patch_size)
    grid_b = extract_subpatches(map_b, patch_size)
    coords_a = grid_a.centers.astype(np.float64)
    coords_b = grid_b.centers.astype(np.float64)
    total = 0.0
    two_a2 = 2.0 * alpha * alpha
    two_b2 = 2.0 * beta * beta
    for za in range(len(grid_a)):
        norm_a = grid_a.norms[za]
        if norm_a == 0.0:
            continue
        vec_a = grid_a.normalized[za]
        spatial_d2 = np.sum((coords_b - coords_a[za]) ** 2, axis=1)
        feature_d2 = np.sum((grid_b.normalized - vec_a) ** 2, axis=1)
        terms = (
            norm_a
            * grid_b.norms
            * np.exp(-spatial_d2 / two_b2)
            * np.exp(-feature_d2 / two_a2)
        )
        total += float(terms.sum())
    return total


def finite_diff_gradient(
    func, point: np.ndarray, step: float = FINITE_DIFF_STEP
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if step <= 0:
        raise InvalidArgumentError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    if point.ndim != 1:
        raise InvalidArgumentError("point must be a flat vector")
    grad = np.empty_like(point)
    for k in range(point.shape[0]):
        forward = point.copy()
        backward = point.copy()
        forward[k] += step
        backward[k] -= step
        hi = float(func(forward))
        lo = float(func(backward))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericFailureError(
                f"non-finite function value while probing coordinate {k}"
            )
        grad[k] = (hi - lo) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class ErrorReport:
    """Elementwise error summary between an approximation and its reference."""

    max_abs_error: float
    mean_abs_error: float
    rel_frobenius_error: float

    def __post_init__(self) -> None:
        for name in ("max_abs_error", "mean_abs_error", "rel_frobenius_error"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be nonnegative")


def embedding_error_report(exact, approx) -> ErrorReport:
    """Compare approximate values against exact references elementwise."""
    exact = np.asarray(exact, dtype=np.float64)
    approx = np.asarray(approx, dtype=np.float64)
    if exact.shape != approx.shape or exact.size == 0:
        raise InvalidArgumentError("exact/approx must be matching nonempty arrays")
    diff = np.abs(approx - exact)
    ref_norm = float(np.linalg.norm(exact))
    diff_norm = float(np.linalg.norm(diff))
    if ref_norm > 0:
        relative = diff_norm / ref_norm
    else:
        relative = 0.0 if diff_norm == 0 else float("inf")
    return ErrorReport(
        max_abs_error=float(diff.max()),
        mean_abs_error=float(diff.mean()),
        rel_frobenius_error=relative,
    )
