"""Finite-difference derivatives, covariance estimators, and Wald inference.

The criterion is only evaluable, not differentiable in closed form, so the
gradient and Hessian are estimated by forward finite differences in the
reduced parameter, averaged over the binned sample.  The default covariance
path is the nonparametric bootstrap; the plug-in sandwich estimator is
retained as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass
from dataclasses import replace as dc_replace
from enum import Enum
from typing import Callable

import numpy as np
from scipy import special as sp_special

from .exceptions import (
    BootstrapFailureError,
    DegenerateRegionError,
    DimensionError,
    IfrError,
    RankError,
    SingularHessianError,
    StepError,
)
from .index_fit import (
    BinnedSample,
    FitConfig,
    IfrFit,
    _as_objset,
    fit_ifr,
)
from .local_frechet import KernelFamily, KernelSpec, fit_values_at
from .metric_spaces import ObjectSet, squared_distance_pairs

COND_LIMIT = 1e12
BOOT_FAILURE_FRACTION = 0.2


@dataclass(frozen=True)
class FiniteDiffConfig:
    """Forward finite-difference step in reduced-parameter units."""

    h: float

    def __post_init__(self):
        if not np.isfinite(self.h) or self.h <= 0:
            raise StepError("finite-difference step must be positive")


def default_h(n_bins: int) -> float:
    """Default step M^(-1/5); balances O(h) bias against sampling noise."""
    return float(n_bins) ** (-0.2)


class CovarianceSource(Enum):
    PLUGIN = "plugin"
    BOOTSTRAP = "bootstrap"


@dataclass
class CovarianceEstimate:
    """Covariance pieces for the reduced direction estimate."""

    sigma_hat: np.ndarray | None
    hess: np.ndarray | None
    lam: np.ndarray
    source: CovarianceSource
    jacobian: np.ndarray

    def __post_init__(self):
        for mat in (self.sigma_hat, self.hess, self.lam):
            if mat is not None and np.max(np.abs(mat - mat.T)) > 1e-8:
                raise DimensionError("covariance pieces must be symmetric")
        w = np.linalg.eigvalsh(self.lam)
        if w[0] < -1e-8 * max(abs(w[-1]), 1.0):
            raise DimensionError("covariance estimate is not PSD")


@dataclass(frozen=True)
class BinContext:
    """Everything needed to evaluate per-bin squared-distance values at a
    shifted direction: the training sample, fixed bins, and tuning."""

    predictors: np.ndarray
    responses: ObjectSet
    bins: BinnedSample
    bandwidth: float
    kernel_family: KernelFamily = KernelFamily.EPANECHNIKOV


def context_from_fit(fit: IfrFit, predictors, responses) -> BinContext:
    return BinContext(
        predictors=np.asarray(predictors, dtype=float),
        responses=_as_objset(responses),
        bins=fit.bins,
        bandwidth=fit.bandwidth,
        kernel_family=fit.kernel_family,
    )


def _f_values(ctx: BinContext, theta: np.ndarray) -> np.ndarray:
    """Squared distances from bin representatives to their link fits at the
    direction lifted from ``theta``."""
    nrm2 = float(theta @ theta)
    if nrm2 >= 1.0:
        raise StepError("shifted direction leaves the unit ball")
    full = np.concatenate(([np.sqrt(1.0 - nrm2)], theta))
    proj = ctx.predictors @ full
    kernel = KernelSpec(ctx.kernel_family, ctx.bandwidth)
    targets = proj[ctx.bins.rep_index]
    fitted = fit_values_at(ctx.responses, proj, targets, kernel)
    reps = ctx.responses.take(ctx.bins.rep_index)
    return squared_distance_pairs(reps, fitted)


def _signed_steps(theta: np.ndarray, h: float, need_double: bool) -> np.ndarray:
    """Forward steps, flipped to backward near the unit-sphere boundary."""
    k = theta.size
    steps = np.empty(k)
    for r in range(k):
        for s in (h, -h):
            cand = theta.copy()
            cand[r] += (2 * s if need_double else s)
            if cand @ cand < 1.0 - 1e-12:
                steps[r] = s
                break
        else:
            raise StepError(
                f"step {h!r} leaves the unit ball in coordinate {r}; shrink h")
    return steps


def grad_vn(ctx: BinContext, theta, h: float) -> np.ndarray:
    """Forward-difference gradient of the binned criterion."""
    theta = np.asarray(theta, dtype=float)
    steps = _signed_steps(theta, float(h), need_double=False)
    f0 = _f_values(ctx, theta)
    g = np.empty(theta.size)
    for r, s in enumerate(steps):
        shifted = theta.copy()
        shifted[r] += s
        g[r] = (_f_values(ctx, shifted) - f0).mean() / s
    return g


def hess_vn(ctx: BinContext, theta, h: float) -> np.ndarray:
    """Forward-difference Hessian of the binned criterion, symmetrized."""
    theta = np.asarray(theta, dtype=float)
    h = float(h)
    k = theta.size
    steps = _signed_steps(theta, h, need_double=True)
    f0 = _f_values(ctx, theta).mean()
    f_single = np.empty(k)
    for r in range(k):
        shifted = theta.copy()
        shifted[r] += steps[r]
        f_single[r] = _f_values(ctx, shifted).mean()
    H = np.empty((k, k))
    for r in range(k):
        for s in range(r, k):
            shifted = theta.copy()
            shifted[r] += steps[r]
            shifted[s] += steps[s]
            if shifted @ shifted >= 1.0:
                raise StepError("double step leaves the unit ball; shrink h")
            f_rs = _f_values(ctx, shifted).mean()
            H[r, s] = H[s, r] = (f_rs - f_single[r] - f_single[s] + f0) / (steps[r] * steps[s])
    return (H + H.T) / 2.0


def _difference_quotients(ctx: BinContext, theta: np.ndarray, h: float) -> np.ndarray:
    """Per-bin first difference quotients, shape (p-1, M)."""
    steps = _signed_steps(theta, h, need_double=False)
    f0 = _f_values(ctx, theta)
    rows = []
    for r, s in enumerate(steps):
        shifted = theta.copy()
        shifted[r] += s
        rows.append((_f_values(ctx, shifted) - f0) / s)
    return np.stack(rows)


def sigma_hat(ctx: BinContext, theta, h: float) -> np.ndarray:
    """Covariance of the per-bin difference quotients of the criterion.

    Mean of products of the first-difference quotients minus the product of
    their means; a Gram construction, so symmetric PSD up to rounding.
    """
    theta = np.asarray(theta, dtype=float)
    g = _difference_quotients(ctx, theta, float(h))
    m = g.shape[1]
    gbar = g.mean(axis=1)
    sig = g @ g.T / m - np.outer(gbar, gbar)
    return (sig + sig.T) / 2.0


def lambda_plugin(sigma: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Sandwich covariance (hess^-1 sigma hess^-1), symmetrized."""
    hess = np.asarray(hess, dtype=float)
    if np.linalg.cond(hess) > COND_LIMIT:
        raise SingularHessianError("finite-difference Hessian is singular")
    hinv = np.linalg.inv(hess)
    lam = hinv @ np.asarray(sigma, dtype=float) @ hinv
    return (lam + lam.T) / 2.0


def plugin_covariance(ctx: BinContext, theta, h: float | None = None) -> CovarianceEstimate:
    """Plug-in covariance estimate built from finite differences."""
    theta = np.asarray(theta, dtype=float)
    if h is None:
        h = default_h(ctx.bins.n_bins)
    sig = sigma_hat(ctx, theta, h)
    hes = hess_vn(ctx, theta, h)
    lam = lambda_plugin(sig, hes)
    return CovarianceEstimate(sigma_hat=sig, hess=hes, lam=lam,
                              source=CovarianceSource.PLUGIN, jacobian=jacobian(theta))


# ---------------------------------------------------------------------------
# Bootstrap covariance
# ---------------------------------------------------------------------------


def bootstrap_lambda(predictors, responses, fit: IfrFit, n_replicates: int,
                     rng: np.random.Generator, *, n_workers: int = 1,
                     center: str = "mean",
                     estimator: Callable[[np.ndarray, ObjectSet, np.random.Generator], np.ndarray] | None = None,
                     ) -> np.ndarray:
    """Bootstrap moment estimator of the scaled asymptotic covariance.

    Resamples observation pairs with replacement, re-estimates the direction
    with the fit's tuning (bandwidth and bin count) held fixed, and returns
    the moment estimator ``(1/B) sum M (theta*_b - c)(theta*_b - c)'`` over
    the successful replicates (failures are excluded; more than 20% failing
    is an error).

    Two design points matter for calibration.  Each replicate redraws its
    own candidate direction grid of the original size: the estimator
    randomizes over grids, so its replicates must too, or the covariance
    misses that variance component and the Wald test over-rejects.  And the
    deviations are centered at the bootstrap mean (``center="mean"``, the
    default) rather than at the original estimate: centering at the estimate
    adds the squared bootstrap bias of the noisy argmin and makes the test
    conservative.  Pass ``center="estimate"`` for the raw moment form.
    ``estimator`` can be injected for testing.
    """
    if n_replicates < 50:
        raise DimensionError("need at least 50 bootstrap replicates")
    X = np.asarray(predictors, dtype=float)
    objset = _as_objset(responses)
    n = X.shape[0]
    theta_hat = fit.direction.reduced
    m_eff = fit.bins.n_bins

    if estimator is None:
        n_dirs = fit.directions.shape[0]

        def estimator(Xb, Yb, rng_rep):
            cfg = FitConfig(
                n_directions=n_dirs,
                bandwidth_grid=np.array([fit.bandwidth]),
                bin_grid=[fit.n_bins],
                refine=fit.refine,
                tuning="cached",
                kernel_family=fit.kernel_family,
                seed=int(rng_rep.integers(2**31)),
            )
            return fit_ifr(Xb, Yb, fit.kind, cfg).direction.reduced

    seeds = rng.bit_generator.seed_seq.spawn(n_replicates)

    def one_replicate(seed_seq):
        r = np.random.default_rng(seed_seq)
        idx = r.integers(0, n, size=n)
        try:
            theta_star = estimator(X[idx], objset.take(idx), r)
        except IfrError:
            return None
        return np.asarray(theta_star, dtype=float)

    if n_workers > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_workers)(
            delayed(one_replicate)(s) for s in seeds)
    else:
        results = [one_replicate(s) for s in seeds]

    ok = [r for r in results if r is not None]
    n_failed = n_replicates - len(ok)
    if n_failed > BOOT_FAILURE_FRACTION * n_replicates:
        raise BootstrapFailureError(n_failed, n_replicates)
    stars = np.stack(ok)
    origin = theta_hat if center == "estimate" else stars.mean(axis=0)
    dev = stars - origin
    lam = m_eff * dev.T @ dev / len(ok)
    return (lam + lam.T) / 2.0


def bootstrap_covariance(predictors, responses, fit: IfrFit, n_replicates: int,
                         rng: np.random.Generator, *, n_workers: int = 1) -> CovarianceEstimate:
    lam = bootstrap_lambda(predictors, responses, fit, n_replicates, rng,
                           n_workers=n_workers)
    return CovarianceEstimate(sigma_hat=None, hess=None, lam=lam,
                              source=CovarianceSource.BOOTSTRAP,
                              jacobian=jacobian(fit.direction.reduced))


# ---------------------------------------------------------------------------
# Delta method pieces
# ---------------------------------------------------------------------------


def jacobian(theta_reduced) -> np.ndarray:
    """Jacobian of the full direction w.r.t. its reduced coordinates,
    shape (p, p-1): first row -theta'/theta_1, then the identity."""
    theta = np.asarray(theta_reduced, dtype=float)
    theta1 = np.sqrt(max(1.0 - float(theta @ theta), 0.0))
    if theta1 <= 0:
        raise DegenerateRegionError("reduced direction on the unit-ball boundary")
    return np.vstack([-theta / theta1, np.eye(theta.size)])


def full_covariance(lam: np.ndarray, theta_reduced) -> np.ndarray:
    """Delta-method covariance of the full direction, J Lambda J'."""
    J = jacobian(theta_reduced)
    out = J @ np.asarray(lam, dtype=float) @ J.T
    return (out + out.T) / 2.0


# ---------------------------------------------------------------------------
# Chi-square utilities
# ---------------------------------------------------------------------------


def chi_square_sf(x: float, df: int) -> float:
    """Upper tail probability of the chi-square distribution."""
    if df < 1:
        raise DimensionError("df must be >= 1")
    if x <= 0:
        return 1.0
    return float(sp_special.chdtrc(df, x))


def chi_square_quantile(prob: float, df: int) -> float:
    """Quantile of the chi-square distribution at cumulative probability."""
    if df < 1:
        raise DimensionError("df must be >= 1")
    if not 0.0 <= prob < 1.0:
        raise DimensionError("prob must lie in [0, 1)")
    if prob == 0.0:
        return 0.0
    return float(sp_special.chdtri(df, 1.0 - prob))


def noncentral_chi_square_sf(x: float, df: int, noncentrality: float,
                             tol: float = 1e-12) -> float:
    """Noncentral chi-square survival function via the Poisson mixture.

    Expands around the Poisson mode and truncates once the remaining
    mixture mass is below ``tol``.
    """
    if df < 1:
        raise DimensionError("df must be >= 1")
    lam = float(noncentrality)
    if lam < 0:
        raise DimensionError("noncentrality must be nonnegative")
    if lam == 0.0:
        return chi_square_sf(x, df)
    if x <= 0:
        return 1.0
    half = lam / 2.0
    mode = int(half)

    def log_pmf(j):
        return -half + j * np.log(half) - sp_special.gammaln(j + 1)

    total = 0.0
    mass = 0.0
    w = np.exp(log_pmf(mode))
    j, wj = mode, w
    while wj > 0 and mass < 1.0 - tol:
        total += wj * sp_special.chdtrc(df + 2 * j, x)
        mass += wj
        j += 1
        wj = wj * half / j
    j, wj = mode - 1, w * mode / half if half > 0 else 0.0
    while j >= 0 and wj > 0 and mass < 1.0 - tol:
        total += wj * sp_special.chdtrc(df + 2 * j, x)
        mass += wj
        wj = wj * j / half
        j -= 1
    return float(min(max(total, 0.0), 1.0))


# ---------------------------------------------------------------------------
# Wald tests, confidence regions, power
# ---------------------------------------------------------------------------


@dataclass
class TestResult:
    statistic: float
    df: int
    p_value: float
    alpha: float
    reject: bool


def wald_test(theta_hat_sub, constraint: np.ndarray, zeta, lambda_sub: np.ndarray,
              n_bins: int, alpha: float = 0.05) -> TestResult:
    """Wald statistic for the linear null ``B theta_sub = zeta``.

    ``T = (B theta - zeta)' [B (Lambda/M) B']^-1 (B theta - zeta)`` compared
    against a chi-square with q = rank(B) degrees of freedom.
    """
    theta = np.atleast_1d(np.asarray(theta_hat_sub, dtype=float))
    B = np.atleast_2d(np.asarray(constraint, dtype=float))
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    q, k = B.shape
    if k != theta.size or zeta.size != q:
        raise DimensionError("hypothesis matrix dimensions do not match")
    if np.linalg.matrix_rank(B) < q:
        raise RankError("hypothesis matrix is rank deficient")
    lam = np.asarray(lambda_sub, dtype=float) / float(n_bins)
    mid = B @ lam @ B.T
    if np.linalg.cond(mid) > COND_LIMIT:
        raise DegenerateRegionError("constraint covariance is singular")
    resid = B @ theta - zeta
    stat = float(resid @ np.linalg.solve(mid, resid))
    p = chi_square_sf(stat, q)
    return TestResult(statistic=stat, df=q, p_value=p, alpha=float(alpha),
                      reject=bool(p < alpha))


@dataclass
class ConfidenceRegion:
    """Elliptical confidence region for a block of reduced coordinates."""

    center: np.ndarray
    shape: np.ndarray  # (Lambda/M)^-1
    threshold: float  # chi-square quantile
    level: float

    def contains(self, theta) -> bool:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if float(theta @ theta) >= 1.0:
            return False
        dev = self.center - theta
        return bool(dev @ self.shape @ dev <= self.threshold)

    def ellipse_boundary(self, n_points: int = 200) -> np.ndarray:
        """Boundary points of a 2-d region, shape (n_points, 2)."""
        if self.center.size != 2:
            raise DimensionError("ellipse boundary requires a 2-d region")
        cov = np.linalg.inv(self.shape)
        L = np.linalg.cholesky((cov + cov.T) / 2.0)
        angles = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
        circle = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return self.center + np.sqrt(self.threshold) * circle @ L.T


def confidence_region(theta_hat_sub, lambda_sub: np.ndarray, n_bins: int,
                      gamma: float = 0.05) -> ConfidenceRegion:
    """100(1-gamma)% elliptical region for a trailing coordinate block."""
    theta = np.atleast_1d(np.asarray(theta_hat_sub, dtype=float))
    lam = np.asarray(lambda_sub, dtype=float) / float(n_bins)
    w = np.linalg.eigvalsh((lam + lam.T) / 2.0)
    if w[0] <= 0:
        raise DegenerateRegionError("scaled covariance is not positive definite")
    shape = np.linalg.inv((lam + lam.T) / 2.0)
    shape = (shape + shape.T) / 2.0
    threshold = chi_square_quantile(1.0 - gamma, theta.size)
    return ConfidenceRegion(center=theta, shape=shape, threshold=float(threshold),
                            level=1.0 - gamma)


def stepwise_selection(predictors, responses, kind, fit_config: FitConfig,
                       *, bootstrap_b: int = 200, alpha_enter: float = 0.05,
                       rng: np.random.Generator | None = None,
                       n_workers: int = 1) -> list[dict]:
    """Sequential predictor selection by single-coefficient Wald tests.

    The first predictor column is always kept; each step refits the index
    model with one remaining candidate appended, tests that coefficient
    against zero, and admits the smallest p-value below ``alpha_enter``.
    Returns one record per step with each candidate's coefficient and
    p-value.
    """
    X = np.asarray(predictors, dtype=float)
    objset = _as_objset(responses)
    rng = rng if rng is not None else np.random.default_rng(fit_config.seed)
    p = X.shape[1]
    model = [0]
    remaining = list(range(1, p))
    steps: list[dict] = []
    while remaining:
        record = {"model": list(model), "candidates": {}}
        best_j, best_p = None, None
        for j in remaining:
            cols = model + [j]
            cfg = dc_replace(fit_config, seed=int(rng.integers(2**31)), directions=None)
            try:
                fit = fit_ifr(X[:, cols], objset, kind, cfg)
                lam = bootstrap_lambda(X[:, cols], objset, fit, bootstrap_b, rng,
                                       n_workers=n_workers)
                k = len(cols) - 1
                B = np.zeros((1, k))
                B[0, -1] = 1.0
                res = wald_test(fit.direction.reduced, B, np.zeros(1), lam,
                                fit.bins.n_bins, alpha_enter)
            except IfrError as exc:
                record["candidates"][j] = {"error": str(exc)}
                continue
            record["candidates"][j] = {
                "coefficient": float(fit.direction.reduced[-1]),
                "statistic": res.statistic,
                "p_value": res.p_value,
            }
            if res.p_value < alpha_enter and (best_p is None or res.p_value < best_p):
                best_j, best_p = j, res.p_value
        record["entered"] = best_j
        steps.append(record)
        if best_j is None:
            break
        model.append(best_j)
        remaining.remove(best_j)
    return steps


def power_at(delta: float, n_bins: int, p: int, lambda_delta: np.ndarray,
             alpha: float = 0.05) -> float:
    """Asymptotic power of the all-coordinates test against the alternative
    with every trailing coordinate equal to delta."""
    lam = np.asarray(lambda_delta, dtype=float)
    if lam.shape != (p - 1, p - 1):
        raise DimensionError("covariance must be (p-1) x (p-1)")
    if np.linalg.cond(lam) > COND_LIMIT:
        raise DegenerateRegionError("covariance is singular")
    theta_delta = np.full(p - 1, float(delta))
    rho = float(n_bins) * float(theta_delta @ np.linalg.solve(lam, theta_delta))
    crit = chi_square_quantile(1.0 - alpha, p - 1)
    return noncentral_chi_square_sf(crit, p - 1, rho)
