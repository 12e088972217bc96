"""Kernel machinery, local linear weights, and the link-function estimator.

The local linear smoother produces signed weights that sum to one and have
zero first local moment; feeding them to a weighted Fréchet mean yields the
local linear estimate of the object-valued link function at an index value.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import ndtr as sp_ndtr

from .exceptions import (
    DimensionError,
    InsufficientLocalDataError,
    InvalidInputError,
    NoFeasibleBandwidthError,
)
from .metric_spaces import (
    MetricSpaceKind,
    ObjectSet,
    ObjectValue,
    make_object,
    mean_values_rows,
    squared_distance_pairs,
    stack_objects,
)

SIGMA0_TOL = 1e-12
GAUSSIAN_CUTOFF = 4.0
_GAUSSIAN_MASS = float(sp_ndtr(GAUSSIAN_CUTOFF) - sp_ndtr(-GAUSSIAN_CUTOFF))


class KernelFamily(Enum):
    EPANECHNIKOV = "epanechnikov"
    GAUSSIAN = "gaussian"  # truncated at +-4 sd, renormalized


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family together with its bandwidth (projection units)."""

    family: KernelFamily = KernelFamily.EPANECHNIKOV
    bandwidth: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise InvalidInputError("bandwidth must be positive")


def kernel_density(u: np.ndarray, family: KernelFamily) -> np.ndarray:
    """Kernel density values; integrates to one and is symmetric about zero."""
    u = np.asarray(u, dtype=float)
    if family is KernelFamily.EPANECHNIKOV:
        k = np.maximum(1.0 - u * u, 0.0)
        k *= 0.75
        return k
    dens = np.exp(-0.5 * u * u) * (1.0 / (np.sqrt(2.0 * np.pi) * _GAUSSIAN_MASS))
    dens[np.abs(u) > GAUSSIAN_CUTOFF] = 0.0
    return dens


@dataclass
class LocalWeights:
    """Empirical local moments and the per-observation smoother values."""

    mu0: float
    mu1: float
    mu2: float
    sigma0_sq: float
    s: np.ndarray


def _weight_rows(projections: np.ndarray, targets: np.ndarray,
                 kernel: KernelSpec) -> np.ndarray:
    """Local linear weight matrix of shape (len(targets), n).

    Row j holds the smoother values S_i for target t_j; each row averages to
    one over i and has zero first local moment.
    """
    t = np.asarray(projections, dtype=float)
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    b = kernel.bandwidth
    diff = t[None, :] - targets[:, None]  # (m, n) entries t_i - target_j
    k = kernel_density(diff * (1.0 / b), kernel.family)
    k *= 1.0 / b
    kd = k * diff
    mu0 = k.mean(axis=1)
    mu1 = kd.mean(axis=1)
    mu2 = (kd * diff).mean(axis=1)
    sigma0 = mu2 * mu0 - mu1 * mu1
    bad = sigma0 <= SIGMA0_TOL
    if np.any(bad):
        # exact zero spread inside the kernel window degenerates to local
        # constant weights K/mu0 (the mu2 factors cancel); anything else is
        # genuinely underdetermined
        for j in np.flatnonzero(bad):
            if mu2[j] == 0.0 and mu0[j] > SIGMA0_TOL and np.count_nonzero(k[j]) >= 2:
                continue
            raise InsufficientLocalDataError(float(targets[j]), b)
        rows = np.empty_like(k)
        ok = ~bad
        rows[ok] = (k[ok] * mu2[ok, None] - kd[ok] * mu1[ok, None]) / sigma0[ok, None]
        rows[bad] = k[bad] / mu0[bad, None]
        return rows
    rows = k * mu2[:, None]
    rows -= kd * mu1[:, None]
    rows /= sigma0[:, None]
    return rows


def empirical_weights(projections: Sequence[float], t: float,
                      kernel: KernelSpec) -> LocalWeights:
    """Empirical local moments and smoother values at one target point."""
    proj = np.asarray(projections, dtype=float)
    if proj.ndim != 1 or proj.size < 2:
        raise DimensionError("need at least two projection values")
    b = kernel.bandwidth
    diff = proj - float(t)
    k = kernel_density(diff / b, kernel.family) / b
    mu0 = float(k.mean())
    mu1 = float((k * diff).mean())
    mu2 = float((k * diff**2).mean())
    sigma0 = mu2 * mu0 - mu1**2
    if sigma0 <= SIGMA0_TOL:
        if mu2 == 0.0 and mu0 > SIGMA0_TOL and np.count_nonzero(k) >= 2:
            s = k / mu0
            return LocalWeights(mu0=mu0, mu1=mu1, mu2=mu2, sigma0_sq=float(sigma0), s=s)
        raise InsufficientLocalDataError(float(t), b)
    s = k * (mu2 - mu1 * diff) / sigma0
    return LocalWeights(mu0=mu0, mu1=mu1, mu2=mu2, sigma0_sq=float(sigma0), s=s)


def fit_values_at(objset: ObjectSet, projections: np.ndarray, targets: np.ndarray,
                  kernel: KernelSpec) -> np.ndarray:
    """Stacked local linear fits at several target index values."""
    rows = _weight_rows(projections, targets, kernel)
    return mean_values_rows(objset, rows)


def llfr_fit_at(responses: Sequence[ObjectValue], projections, t: float,
                kernel: KernelSpec, kind: MetricSpaceKind) -> ObjectValue:
    """Local linear Fréchet regression estimate of the link at index value t."""
    objset = responses if isinstance(responses, ObjectSet) else stack_objects(list(responses))
    if objset.kind is not kind:
        raise DimensionError("responses do not match the requested kind")
    proj = np.asarray(projections, dtype=float)
    if len(objset) != proj.size:
        raise DimensionError("responses and projections differ in length")
    value = fit_values_at(objset, proj, np.array([float(t)]), kernel)[0]
    return make_object(kind, value, probs=objset.probs, unit_diagonal=objset.unit_diagonal)


# ---------------------------------------------------------------------------
# Bandwidth selection
# ---------------------------------------------------------------------------


def default_bandwidth_grid(projections: np.ndarray, n_points: int = 10) -> np.ndarray:
    """Geometric grid spanning [range/20, range/2] of the projections."""
    span = float(np.max(projections) - np.min(projections))
    if span <= 0:
        raise InvalidInputError("projections have zero range")
    return np.geomspace(span / 20.0, span / 2.0, n_points)


def _cv_score(objset: ObjectSet, proj: np.ndarray, kernel: KernelSpec,
              fold_ids: np.ndarray, n_folds: int) -> float:
    n = len(objset)
    total = 0.0
    for f in range(n_folds):
        test = np.flatnonzero(fold_ids == f)
        train = np.flatnonzero(fold_ids != f)
        if test.size == 0:
            continue
        try:
            fits = fit_values_at(objset.take(train), proj[train], proj[test], kernel)
        except InsufficientLocalDataError:
            return np.inf
        total += float(squared_distance_pairs(objset.take(test), fits).sum())
    return total / n


def cv_bandwidth(responses, predictors, direction, candidates, folds: int,
                 *, kernel_family: KernelFamily = KernelFamily.EPANECHNIKOV) -> float:
    """Cross-validated bandwidth for the local linear link estimator.

    Held-out discrepancy ``(1/n) sum_i d^2(Y_i, fit_{-fold(i)}(X_i' theta))``;
    candidates whose held-out fit fails anywhere score +inf; ties break to
    the smallest bandwidth.
    """
    objset = responses if isinstance(responses, ObjectSet) else stack_objects(list(responses))
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size == 0:
        raise NoFeasibleBandwidthError("empty bandwidth grid")
    if candidates.size == 1:
        return float(candidates[0])
    X = np.asarray(predictors, dtype=float)
    theta_full = direction.full if hasattr(direction, "full") else np.asarray(direction, float)
    proj = X @ theta_full
    n = proj.size
    n_folds = n if folds >= n else max(int(folds), 2)
    fold_ids = np.arange(n) % n_folds
    best_b, best_score = None, np.inf
    for b in np.sort(candidates):
        score = _cv_score(objset, proj, KernelSpec(kernel_family, float(b)), fold_ids, n_folds)
        if score < best_score - _tie_tol(best_score):
            best_b, best_score = float(b), score
    if best_b is None:
        raise NoFeasibleBandwidthError("no candidate bandwidth produced a finite score")
    return best_b


def _tie_tol(best_score: float) -> float:
    # scores within rounding noise of the incumbent count as ties, which go
    # to the smaller candidate
    if not np.isfinite(best_score):
        return 0.0
    return 1e-12 + 1e-9 * abs(best_score)
