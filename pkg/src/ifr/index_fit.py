"""Direction parametrization, binning, the binned criterion, and the full fit.

The index direction lives on the unit hemisphere (positive first coordinate)
and is parametrized by its trailing coordinates inside the open unit ball.
Estimation minimizes the binned empirical criterion: the average squared
distance between bin-representative responses and the local linear link
fits at their projections, searched over random candidate directions with
an optional derivative-free polish.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import (
    DegenerateProjectionError,
    DimensionError,
    ExtrapolationWarning,
    FitFailureError,
    IfrError,
    OutOfBallError,
    SingularDesignError,
)
from .local_frechet import (
    KernelFamily,
    KernelSpec,
    _tie_tol,
    cv_bandwidth,
    default_bandwidth_grid,
    fit_values_at,
)
from .metric_spaces import (
    MetricSpaceKind,
    ObjectSet,
    ObjectValue,
    make_object,
    mean_value,
    squared_distance_pairs,
    stack_objects,
)

UNIT_TOL = 1e-10
ZERO_VARIANCE_TOL = 1e-14


# ---------------------------------------------------------------------------
# Direction parameter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionParam:
    """A unit direction with positive first coordinate."""

    full: np.ndarray

    def __post_init__(self):
        full = np.asarray(self.full, dtype=float)
        object.__setattr__(self, "full", full)
        if full.ndim != 1 or full.size < 2:
            raise DimensionError("direction must be a vector of length >= 2")
        if abs(np.linalg.norm(full) - 1.0) > UNIT_TOL:
            raise OutOfBallError("direction must have unit norm")
        if full[0] <= 0:
            raise OutOfBallError("leading coordinate must be positive")

    @property
    def p(self) -> int:
        return self.full.size

    @property
    def reduced(self) -> np.ndarray:
        return self.full[1:]


def lift(reduced: Sequence[float]) -> DirectionParam:
    """Map trailing coordinates in the open unit ball to a full unit direction."""
    theta = np.asarray(reduced, dtype=float)
    nrm2 = float(theta @ theta)
    if nrm2 >= 1.0:
        raise OutOfBallError("reduced coordinates must have norm < 1")
    full = np.concatenate(([np.sqrt(1.0 - nrm2)], theta))
    return DirectionParam(full)


def reduce_direction(direction: DirectionParam) -> np.ndarray:
    return direction.reduced


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinnedSample:
    """Equal-width projection bins with one representative index per bin."""

    edges: np.ndarray
    rep_index: np.ndarray
    rep_projection: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.rep_index.size


def bin_projections(projections: np.ndarray, n_bins: int) -> BinnedSample:
    """Partition the projection range into equal-width bins.

    The representative of a nonempty bin is the member whose projection is
    nearest the bin midpoint (ties to the lowest index); empty bins are
    dropped, so the effective bin count can be smaller than requested.

    Requesting at least one bin per observation yields the no-binning limit:
    every observation is its own representative, with bin edges at the
    midpoints between consecutive distinct projections (exact ties share one
    representative, the lowest index).
    """
    t = np.asarray(projections, dtype=float)
    lo, hi = float(np.min(t)), float(np.max(t))
    if hi - lo <= 0:
        raise DegenerateProjectionError("all projections are identical")
    m = max(int(n_bins), 1)
    if m >= t.size:
        order = np.argsort(t, kind="stable")
        keep = np.concatenate(([True], np.diff(t[order]) > 0))
        rep_index = order[keep]
        vals = t[rep_index]
        edges = np.concatenate(([lo], (vals[1:] + vals[:-1]) / 2.0, [hi]))
        return BinnedSample(edges=edges, rep_index=rep_index, rep_projection=vals)
    edges = np.linspace(lo, hi, m + 1)
    ids = np.clip(((t - lo) / (hi - lo) * m).astype(int), 0, m - 1)
    mids = (edges[:-1] + edges[1:]) / 2.0
    reps = []
    for b in range(m):
        members = np.flatnonzero(ids == b)
        if members.size == 0:
            continue
        local = np.abs(t[members] - mids[b])
        reps.append(members[int(np.argmin(local))])
    rep_index = np.asarray(reps, dtype=int)
    return BinnedSample(edges=edges, rep_index=rep_index, rep_projection=t[rep_index])


def make_bins(predictors, responses, direction: DirectionParam, n_bins: int) -> BinnedSample:
    """Bin observations along the projection onto a direction."""
    X = np.asarray(predictors, dtype=float)
    if responses is not None and len(responses) != X.shape[0]:
        raise DimensionError("predictors and responses differ in length")
    return bin_projections(X @ direction.full, n_bins)


# ---------------------------------------------------------------------------
# Criterion
# ---------------------------------------------------------------------------


def _as_objset(responses) -> ObjectSet:
    return responses if isinstance(responses, ObjectSet) else stack_objects(list(responses))


def _vn_eval(X: np.ndarray, objset: ObjectSet, theta_full: np.ndarray, bandwidth: float,
             n_bins: int, kernel_family: KernelFamily,
             exclude_rep: bool = False) -> tuple[float, np.ndarray | None, BinnedSample | None]:
    """Binned criterion value and fitted stacked objects for one direction.

    Returns (+inf, None, None) when the link fit fails anywhere.  With
    ``exclude_rep`` the fit at each bin drops that bin's representative
    observation from the weight sum (leave-one-bin-out).
    """
    proj = X @ theta_full
    try:
        bins = bin_projections(proj, n_bins)
    except DegenerateProjectionError:
        return np.inf, None, None
    kernel = KernelSpec(kernel_family, bandwidth)
    reps = objset.take(bins.rep_index)
    try:
        if exclude_rep:
            fitted = []
            for j, idx in enumerate(bins.rep_index):
                keep = np.ones(len(objset), dtype=bool)
                keep[idx] = False
                sub = np.flatnonzero(keep)
                fitted.append(fit_values_at(objset.take(sub), proj[sub],
                                            np.array([bins.rep_projection[j]]), kernel)[0])
            fitted = np.stack(fitted)
        else:
            fitted = fit_values_at(objset, proj, bins.rep_projection, kernel)
    except IfrError:
        return np.inf, None, None
    crit = float(squared_distance_pairs(reps, fitted).mean())
    return crit, fitted, bins


def criterion_vn(predictors, responses, direction: DirectionParam, bandwidth: float,
                 n_bins: int, kind: MetricSpaceKind,
                 kernel_family: KernelFamily = KernelFamily.EPANECHNIKOV) -> float:
    """Mean squared distance between bin representatives and their link fits."""
    objset = _as_objset(responses)
    if objset.kind is not kind:
        raise DimensionError("responses do not match the requested kind")
    X = np.asarray(predictors, dtype=float)
    value, _, _ = _vn_eval(X, objset, direction.full, bandwidth, n_bins, kernel_family)
    return value


# ---------------------------------------------------------------------------
# Direction sampling
# ---------------------------------------------------------------------------


def sample_directions(p: int, count: int, rng: np.random.Generator) -> list[DirectionParam]:
    """i.i.d. directions uniform on the hemisphere with positive first entry."""
    if p < 2 or count < 1:
        raise DimensionError("need p >= 2 and count >= 1")
    out = []
    while len(out) < count:
        v = rng.standard_normal(p)
        v[0] = abs(v[0])
        nrm = np.linalg.norm(v)
        if nrm < 1e-12 or v[0] == 0.0:
            continue
        out.append(DirectionParam(v / nrm))
    return out


def directions_matrix(directions: Sequence[DirectionParam]) -> np.ndarray:
    return np.stack([d.full for d in directions])


# ---------------------------------------------------------------------------
# Bin-count selection
# ---------------------------------------------------------------------------


def default_bin_grid(n: int) -> list[int]:
    """Candidate bin counts n^0.2, n^0.25, n^0.3 (deduplicated, ascending)."""
    cands = sorted({int(np.ceil(n**gamma)) for gamma in (0.2, 0.25, 0.3)})
    return [max(c, 2) for c in cands]


def cv_bins(predictors, responses, direction: DirectionParam, bandwidth: float,
            candidates: Sequence[int],
            kernel_family: KernelFamily = KernelFamily.EPANECHNIKOV) -> int:
    """Bin count minimizing the leave-one-bin-out binned discrepancy."""
    from .exceptions import NoFeasibleBinsError

    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise NoFeasibleBinsError("empty bin-count grid")
    if len(cands) == 1:
        return cands[0]
    objset = _as_objset(responses)
    X = np.asarray(predictors, dtype=float)
    best_m, best_score = None, np.inf
    for m in cands:
        score, _, _ = _vn_eval(X, objset, direction.full, bandwidth, m,
                               kernel_family, exclude_rep=True)
        if score < best_score - _tie_tol(best_score):
            best_m, best_score = m, score
    if best_m is None:
        raise NoFeasibleBinsError("no candidate bin count produced a finite score")
    return best_m


# ---------------------------------------------------------------------------
# Full fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """Options controlling the direction search.

    The default bin grid is the single no-binning value [n]: evaluating the
    criterion at every observation keeps the argmin comparison on identical
    summands across directions, which the binned criterion needs only for
    its limit theory, not for the search.  Pass ``default_bin_grid(n)`` (or
    any explicit grid) to select a coarser bin count by cross-validation.
    """

    n_directions: int = 500
    bandwidth_grid: np.ndarray | None = None  # None -> data-driven grid
    bin_grid: Sequence[int] | None = None  # None -> the no-binning limit [n]
    refine: bool = True
    tuning: str = "cached"  # "cached" | "per-direction"
    kernel_family: KernelFamily = KernelFamily.EPANECHNIKOV
    seed: int | None = None
    directions: np.ndarray | None = None  # explicit grid overriding sampling
    cv_folds: int | None = None  # None -> 5 when n > 30 else leave-one-out
    max_refine_evals: int = 50


@dataclass(frozen=True)
class SearchRecord:
    direction: np.ndarray
    criterion: float
    bandwidth: float
    n_bins: int
    stage: str  # "grid" | "refine"


@dataclass
class IfrFit:
    """A fitted index direction with its tuning parameters and diagnostics."""

    direction: DirectionParam
    bandwidth: float
    n_bins: int
    criterion: float
    fitted: list[ObjectValue]
    bins: BinnedSample
    search_log: list[SearchRecord]
    kind: MetricSpaceKind
    kernel_family: KernelFamily
    directions: np.ndarray  # the candidate grid, for bootstrap reuse
    refine: bool
    zero_variance: bool


def _auto_bandwidth_grid(proj: np.ndarray, config: FitConfig) -> np.ndarray:
    if config.bandwidth_grid is not None:
        return np.asarray(config.bandwidth_grid, dtype=float)
    return default_bandwidth_grid(proj)


def _refine_direction(X, objset, theta_full, bandwidth, n_bins, kernel_family,
                      log, max_evals: int):
    """Coordinate-wise golden-section polish in the reduced unit ball."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    theta = theta_full[1:].copy()
    best_theta = theta.copy()
    best_val = None
    evals = 0

    def value_at(red: np.ndarray) -> float:
        nonlocal evals
        nrm = np.linalg.norm(red)
        if nrm >= 1.0 - 1e-9:
            red = red * (1.0 - 1e-9) / nrm
        full = np.concatenate(([np.sqrt(max(1.0 - red @ red, 0.0))], red))
        v, _, _ = _vn_eval(X, objset, full, bandwidth, n_bins, kernel_family)
        evals += 1
        log.append(SearchRecord(full.copy(), v, bandwidth, n_bins, "refine"))
        return v

    best_val, _, _ = _vn_eval(X, objset, theta_full, bandwidth, n_bins, kernel_family)
    half_width = 0.25
    for _ in range(2):  # two sweeps over the coordinates
        for r in range(theta.size):
            if evals >= max_evals:
                break
            lo = best_theta[r] - half_width
            hi = best_theta[r] + half_width
            a, b = lo, hi

            def f(x):
                cand = best_theta.copy()
                cand[r] = x
                return value_at(cand)

            c = b - invphi * (b - a)
            d = a + invphi * (b - a)
            fc, fd = f(c), f(d)
            for _ in range(6):
                if evals >= max_evals:
                    break
                if fc < fd:
                    b, d, fd = d, c, fc
                    c = b - invphi * (b - a)
                    fc = f(c)
                else:
                    a, c, fc = c, d, fd
                    d = a + invphi * (b - a)
                    fd = f(d)
            x_best, v_best = (c, fc) if fc < fd else (d, fd)
            if v_best < best_val:
                best_val = v_best
                best_theta[r] = x_best
        half_width /= 2.0
    nrm = np.linalg.norm(best_theta)
    if nrm >= 1.0 - 1e-9:
        best_theta = best_theta * (1.0 - 1e-9) / nrm
    full = np.concatenate(([np.sqrt(max(1.0 - best_theta @ best_theta, 0.0))], best_theta))
    return full, best_val


def fit_ifr(predictors, responses, kind: MetricSpaceKind,
            config: FitConfig = FitConfig()) -> IfrFit:
    """Estimate the index direction by minimizing the binned criterion.

    Samples candidate directions on the hemisphere, tunes (bandwidth, bins)
    by cross-validation (once at the best pilot direction in "cached" mode,
    or per direction), and returns the direction minimizing the criterion,
    optionally polished by a derivative-free coordinate search.
    """
    X = np.asarray(predictors, dtype=float)
    objset = _as_objset(responses)
    if objset.kind is not kind:
        raise DimensionError("responses do not match the requested kind")
    n, p = X.shape
    if n < 10 or p < 2:
        raise DimensionError("need n >= 10 observations and p >= 2 predictors")
    if len(objset) != n:
        raise DimensionError("predictors and responses differ in length")

    rng = np.random.default_rng(config.seed)
    if config.directions is not None:
        dir_mat = np.asarray(config.directions, dtype=float)
    else:
        dir_mat = directions_matrix(sample_directions(p, config.n_directions, rng))
    bin_grid = list(config.bin_grid) if config.bin_grid is not None else [n]
    folds = config.cv_folds if config.cv_folds is not None else (5 if n > 30 else n)
    kf = config.kernel_family

    log: list[SearchRecord] = []

    def sweep(b: float, m: int, record: bool) -> tuple[int, float]:
        best_i, best_v = -1, np.inf
        for i, full in enumerate(dir_mat):
            v, _, _ = _vn_eval(X, objset, full, b, m, kf)
            if record:
                log.append(SearchRecord(full.copy(), v, b, m, "grid"))
            if v < best_v - _tie_tol(best_v):
                best_i, best_v = i, v
        return best_i, best_v

    def tune_at(full: np.ndarray) -> tuple[float, int]:
        proj = X @ full
        grid = _auto_bandwidth_grid(proj, config)
        d = DirectionParam(full)
        b_star = cv_bandwidth(objset, X, d, grid, folds, kernel_family=kf)
        m_star = cv_bins(X, objset, d, b_star, bin_grid, kernel_family=kf)
        return b_star, m_star

    if config.tuning == "per-direction":
        best_i, best_v, best_bm = -1, np.inf, None
        for i, full in enumerate(dir_mat):
            try:
                b_i, m_i = tune_at(full)
            except IfrError:
                log.append(SearchRecord(full.copy(), np.inf, np.nan, 0, "grid"))
                continue
            v, _, _ = _vn_eval(X, objset, full, b_i, m_i, kf)
            log.append(SearchRecord(full.copy(), v, b_i, m_i, "grid"))
            if v < best_v - _tie_tol(best_v):
                best_i, best_v, best_bm = i, v, (b_i, m_i)
        if best_i < 0:
            raise FitFailureError("criterion infinite for every candidate direction")
        b_star, m_star = best_bm
        best_full = dir_mat[best_i]
    else:
        # cached: pilot sweep at a mid-grid bandwidth, tune once at the pilot
        # best, then a final sweep with the tuned pair; with nothing to tune
        # (both grids singletons) the pilot pass is skipped
        b_grid = config.bandwidth_grid
        if b_grid is not None and len(np.atleast_1d(b_grid)) == 1 and len(bin_grid) == 1:
            b_star = float(np.atleast_1d(b_grid)[0])
            m_star = bin_grid[0]
        else:
            pilot_proj = X @ dir_mat[0]
            pilot_grid = _auto_bandwidth_grid(pilot_proj, config)
            pilot_b = float(pilot_grid[len(pilot_grid) // 2])
            pilot_m = bin_grid[len(bin_grid) // 2]
            pilot_i, pilot_v = sweep(pilot_b, pilot_m, record=False)
            if pilot_i < 0:
                raise FitFailureError("criterion infinite for every candidate direction")
            b_star, m_star = tune_at(dir_mat[pilot_i])
        best_i, best_v = sweep(b_star, m_star, record=True)
        if best_i < 0:
            raise FitFailureError("criterion infinite for every candidate direction")
        best_full = dir_mat[best_i]

    zero_variance = best_v <= ZERO_VARIANCE_TOL
    if config.refine and not zero_variance:
        refined_full, refined_v = _refine_direction(
            X, objset, best_full, b_star, m_star, kf, log, config.max_refine_evals)
        if refined_v < best_v:
            best_full, best_v = refined_full, refined_v

    criterion, fitted_values, bins = _vn_eval(X, objset, best_full, b_star, m_star, kf)
    if not np.isfinite(criterion):
        raise FitFailureError("criterion not finite at the selected direction")
    fitted = [make_object(kind, v, probs=objset.probs, unit_diagonal=objset.unit_diagonal)
              for v in fitted_values]
    return IfrFit(
        direction=DirectionParam(best_full),
        bandwidth=float(b_star),
        n_bins=int(m_star),
        criterion=float(criterion),
        fitted=fitted,
        bins=bins,
        search_log=log,
        kind=kind,
        kernel_family=kf,
        directions=dir_mat,
        refine=config.refine,
        zero_variance=bool(zero_variance),
    )


# ---------------------------------------------------------------------------
# Prediction and the global baseline
# ---------------------------------------------------------------------------


def predict(fit: IfrFit, predictors_new, predictors_train, responses_train,
            return_extrapolation_mask: bool = False):
    """Link fits at new predictor projections using the training sample.

    Points projecting outside the bandwidth-padded training range trigger an
    :class:`ExtrapolationWarning`; the optional mask marks those rows.  Their
    projections are clamped to the observed training range, so extrapolated
    rows receive the boundary fit.
    """
    X_new = np.atleast_2d(np.asarray(predictors_new, dtype=float))
    X = np.asarray(predictors_train, dtype=float)
    if X_new.shape[1] != fit.direction.p:
        raise DimensionError("new predictors have the wrong dimension")
    objset = _as_objset(responses_train)
    proj_train = X @ fit.direction.full
    proj_new = X_new @ fit.direction.full
    lo = proj_train.min() - fit.bandwidth
    hi = proj_train.max() + fit.bandwidth
    mask = (proj_new < lo) | (proj_new > hi)
    if np.any(mask):
        warnings.warn(
            f"{int(mask.sum())} prediction point(s) outside the supported "
            f"projection range [{lo:.6g}, {hi:.6g}]",
            ExtrapolationWarning,
            stacklevel=2,
        )
    kernel = KernelSpec(fit.kernel_family, fit.bandwidth)
    proj_eval = np.clip(proj_new, proj_train.min(), proj_train.max())
    values = fit_values_at(objset, proj_train, proj_eval, kernel)
    objects = [make_object(fit.kind, v, probs=objset.probs,
                           unit_diagonal=objset.unit_diagonal) for v in values]
    if return_extrapolation_mask:
        return objects, mask
    return objects


def gfr_fit(predictors, responses, kind: MetricSpaceKind, predictors_new) -> list[ObjectValue]:
    """Global Fréchet regression baseline at the query points.

    Uses the linear-regression-type weights
    ``s_i(x) = 1 + (X_i - mean)' Cov^-1 (x - mean)`` and returns the weighted
    Fréchet mean at each query point.
    """
    X = np.asarray(predictors, dtype=float)
    objset = _as_objset(responses)
    if objset.kind is not kind:
        raise DimensionError("responses do not match the requested kind")
    X_new = np.atleast_2d(np.asarray(predictors_new, dtype=float))
    xbar = X.mean(axis=0)
    xc = X - xbar
    cov = xc.T @ xc / X.shape[0]
    if np.linalg.cond(cov) > 1e12:
        raise SingularDesignError("predictor covariance is numerically singular")
    cov_inv = np.linalg.inv(cov)
    out = []
    for x in X_new:
        s = 1.0 + xc @ (cov_inv @ (x - xbar))
        w = s / s.size
        w = w / w.sum()
        value = mean_value(objset, w)
        out.append(make_object(kind, value, probs=objset.probs,
                               unit_diagonal=objset.unit_diagonal))
    return out
