"""Data generators, evaluation metrics, and Monte Carlo study drivers.

Two distributional scenarios (location-scale normals and transported
normals), a weighted-adjacency-matrix scenario, and a Euclidean scenario
are provided, each driven by an index projection of correlated predictors
through a choice of link functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, ndtri

from .exceptions import CovarianceError, DegenerateMeanError, DimensionError, IfrError
from .index_fit import DirectionParam, FitConfig, fit_ifr, gfr_fit
from .inference import bootstrap_lambda, wald_test
from .metric_spaces import (
    EuclideanVec,
    MetricSpaceKind,
    ObjectSet,
    ObjectValue,
    QuantileFunction,
    SymMatrix,
    default_prob_grid,
    distance,
    mean_value,
    stack_objects,
)

LINKS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda z: z,
    "square": lambda z: np.square(z),
    "exponential": np.exp,
    "expit": expit,
}

SCENARIOS = ("dist_setting_1", "dist_setting_2", "adjacency", "euclidean")


@dataclass(frozen=True)
class SimSpec:
    """A simulation scenario: generator family, link, sizes, and truth."""

    scenario: str
    n: int
    theta0: DirectionParam
    link: str = "identity"
    rho: float = 0.25
    prob_grid: np.ndarray = field(default_factory=default_prob_grid)
    m_nodes: int = 10
    noise_sd: float = 0.1
    predictor_style: str = "copula"  # "copula" | "truncnorm"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DimensionError(f"unknown scenario {self.scenario!r}")
        if self.link not in LINKS:
            raise DimensionError(f"unknown link {self.link!r}")
        if self.scenario == "adjacency" and self.link != "expit":
            raise DimensionError("the adjacency scenario uses the expit link")
        if self.n < 10:
            raise DimensionError("need n >= 10")

    @property
    def p(self) -> int:
        return self.theta0.p

    @property
    def kind(self) -> MetricSpaceKind:
        if self.scenario in ("dist_setting_1", "dist_setting_2"):
            return MetricSpaceKind.WASSERSTEIN2
        if self.scenario == "adjacency":
            return MetricSpaceKind.FROBENIUS
        return MetricSpaceKind.EUCLIDEAN


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------


def gen_predictors(n: int, p: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-copula predictors on (-1, 1)^p with equicorrelated normals."""
    if not (-1.0 / (p - 1) < rho < 1.0):
        raise CovarianceError(f"equicorrelation {rho!r} is not positive definite for p={p}")
    cov = np.full((p, p), rho)
    np.fill_diagonal(cov, 1.0)
    z = rng.multivariate_normal(np.zeros(p), cov, size=n, method="cholesky")
    from scipy.special import ndtr

    return 2.0 * ndtr(z) - 1.0


def gen_predictors_truncnorm(n: int, p: int, rng: np.random.Generator,
                             bound: float = 10.0) -> np.ndarray:
    """Truncated correlated normal predictors (Euclidean-response scenario).

    For p = 5 the historical correlation pattern is used (X1 with X2 and X3
    at 0.5; X2 with X3 at 0.25); otherwise an equicorrelation of 0.25.
    All variances are 0.1 and components are truncated to [-bound, bound].
    """
    if p == 5:
        corr = np.eye(5)
        corr[0, 1] = corr[1, 0] = 0.5
        corr[0, 2] = corr[2, 0] = 0.5
        corr[1, 2] = corr[2, 1] = 0.25
    else:
        corr = np.full((p, p), 0.25)
        np.fill_diagonal(corr, 1.0)
    cov = 0.1 * corr
    out = np.empty((n, p))
    filled = 0
    while filled < n:
        draw = rng.multivariate_normal(np.zeros(p), cov, size=n - filled,
                                       method="cholesky")
        keep = draw[np.all(np.abs(draw) <= bound, axis=1)]
        out[filled:filled + keep.shape[0]] = keep
        filled += keep.shape[0]
    return out


def gen_predictors_adjacency(n: int, rng: np.random.Generator,
                             bound: float = 5.0) -> np.ndarray:
    """4-d truncated normal predictors for the adjacency scenario."""
    corr = np.eye(4)
    for i, j, r in ((0, 1, 0.3), (0, 2, 0.3), (1, 2, 0.3), (0, 3, -0.4), (1, 3, -0.4)):
        corr[i, j] = corr[j, i] = r
    cov = 0.25 * corr
    out = np.empty((n, 4))
    filled = 0
    while filled < n:
        draw = rng.multivariate_normal(np.zeros(4), cov, size=n - filled,
                                       method="cholesky")
        keep = draw[np.all(np.abs(draw) <= bound, axis=1)]
        out[filled:filled + keep.shape[0]] = keep
        filled += keep.shape[0]
    return out


# ---------------------------------------------------------------------------
# Responses
# ---------------------------------------------------------------------------


def gen_response_setting1(t: float, link: str, prob_grid: np.ndarray,
                          rng: np.random.Generator) -> QuantileFunction:
    """Location-scale normal response: mean N(link(t), 0.25), scale
    exponential with mean expit(t)."""
    zeta = float(LINKS[link](np.asarray(t)))
    mu = rng.normal(zeta, 0.5)
    sigma = rng.exponential(scale=expit(t))
    return QuantileFunction(prob_grid, mu + sigma * ndtri(prob_grid))


_TRANSPORT_KS = np.array([-3, -2, -1, 1, 2, 3])


def transport_map(k: int, a: np.ndarray) -> np.ndarray:
    """Strictly increasing perturbation a - sin(k a)/|k|."""
    return a - np.sin(k * a) / abs(k)


def gen_response_setting2(t: float, link: str, prob_grid: np.ndarray,
                          rng: np.random.Generator) -> QuantileFunction:
    """Transported normal response: N(link(t), 0.25) location, fixed scale
    0.1, pushed forward by a random increasing map."""
    zeta = float(LINKS[link](np.asarray(t)))
    mu = rng.normal(zeta, 0.5)
    k = int(rng.choice(_TRANSPORT_KS))
    base = mu + 0.1 * ndtri(prob_grid)
    return QuantileFunction(prob_grid, transport_map(k, base))


def gen_response_adjacency(t: float, m_nodes: int,
                           rng: np.random.Generator) -> SymMatrix:
    """Weighted-adjacency response expit(t) I + symmetric uniform errors."""
    if m_nodes < 2:
        raise DimensionError("need at least two nodes")
    zeta = float(expit(t))
    width = min(1.0, 1.0 - zeta) - max(0.0, -zeta)
    raw = rng.uniform(max(0.0, -zeta), max(0.0, -zeta) + width,
                      size=(m_nodes, m_nodes))
    eps = np.triu(raw) + np.triu(raw, 1).T
    return SymMatrix(zeta * np.eye(m_nodes) + eps)


def gen_response_euclidean(t: float, link: str, noise_sd: float,
                           rng: np.random.Generator, dim: int = 1) -> EuclideanVec:
    """Euclidean response link(t) plus independent normal noise."""
    zeta = float(LINKS[link](np.asarray(t)))
    return EuclideanVec(zeta + noise_sd * rng.standard_normal(dim))


def true_object(spec: SimSpec, t: float) -> ObjectValue:
    """Population conditional Fréchet mean of the scenario at index value t."""
    zeta = float(LINKS[spec.link](np.asarray(t)))
    if spec.scenario == "dist_setting_1":
        return QuantileFunction(spec.prob_grid,
                                zeta + expit(t) * ndtri(spec.prob_grid))
    if spec.scenario == "dist_setting_2":
        return QuantileFunction(spec.prob_grid, zeta + 0.1 * ndtri(spec.prob_grid))
    if spec.scenario == "adjacency":
        m = spec.m_nodes
        mid = (1.0 - zeta) / 2.0
        return SymMatrix(zeta * np.eye(m) + np.full((m, m), mid))
    return EuclideanVec(np.array([zeta]))


def generate_dataset(spec: SimSpec, rng: np.random.Generator):
    """One sample (predictors, stacked responses) from the scenario."""
    if spec.scenario == "adjacency":
        if spec.p != 4:
            raise DimensionError("the adjacency scenario uses p = 4 predictors")
        X = gen_predictors_adjacency(spec.n, rng)
    elif spec.scenario == "euclidean" and spec.predictor_style == "truncnorm":
        X = gen_predictors_truncnorm(spec.n, spec.p, rng)
    else:
        X = gen_predictors(spec.n, spec.p, spec.rho, rng)
    t = X @ spec.theta0.full
    if spec.scenario == "dist_setting_1":
        objs = [gen_response_setting1(ti, spec.link, spec.prob_grid, rng) for ti in t]
    elif spec.scenario == "dist_setting_2":
        objs = [gen_response_setting2(ti, spec.link, spec.prob_grid, rng) for ti in t]
    elif spec.scenario == "adjacency":
        objs = [gen_response_adjacency(ti, spec.m_nodes, rng) for ti in t]
    else:
        objs = [gen_response_euclidean(ti, spec.link, spec.noise_sd, rng) for ti in t]
    return X, stack_objects(objs)


# ---------------------------------------------------------------------------
# Evaluation metrics
# ---------------------------------------------------------------------------


def bias_dev(estimates: Sequence[DirectionParam], theta0: DirectionParam) -> tuple[float, float]:
    """Angular bias of the spherical mean of the estimates, and the sample
    variance of the angles from each estimate to that mean."""
    if len(estimates) == 0:
        raise DimensionError("need at least one estimate")
    values = np.stack([e.full for e in estimates])
    objset = ObjectSet(MetricSpaceKind.SPHERE_GEODESIC, values)
    w = np.full(len(estimates), 1.0 / len(estimates))
    center = mean_value(objset, w)
    bias = float(np.arccos(np.clip(center @ theta0.full, -1.0, 1.0)))
    angles = np.arccos(np.clip(values @ center, -1.0, 1.0))
    dev = float(np.var(angles, ddof=1)) if angles.size > 1 else 0.0
    return bias, dev


def msd(fit_objects: Sequence[ObjectValue], truth_objects: Sequence[ObjectValue],
        kind: MetricSpaceKind) -> float:
    """Mean squared distance between two aligned object lists."""
    if len(fit_objects) != len(truth_objects):
        raise DimensionError("object lists differ in length")
    return float(np.mean([distance(a, b, kind) ** 2
                          for a, b in zip(fit_objects, truth_objects)]))


def rmpe(pred_objects: Sequence[ObjectValue], test_objects: Sequence[ObjectValue],
         kind: MetricSpaceKind) -> float:
    """Root mean squared prediction distance."""
    return float(np.sqrt(msd(pred_objects, test_objects, kind)))


# ---------------------------------------------------------------------------
# Study drivers
# ---------------------------------------------------------------------------


@dataclass
class McReport:
    """Aggregate of a Monte Carlo estimation study."""

    estimates: list[DirectionParam]
    bias: float
    dev: float
    msd_values: np.ndarray
    gfr_msd_values: np.ndarray | None
    n_failed: int


def _default_fit_config(n_directions: int) -> FitConfig:
    return FitConfig(n_directions=n_directions, tuning="cached", refine=True)


def _one_mc_run(spec: SimSpec, seed_seq, fit_config: FitConfig, compare_gfr: bool):
    rng = np.random.default_rng(seed_seq)
    X, objset = generate_dataset(spec, rng)
    cfg = replace(fit_config, seed=int(rng.integers(2**31)))
    try:
        fit = fit_ifr(X, objset, spec.kind, cfg)
    except IfrError:
        return None
    t_true = X[fit.bins.rep_index] @ spec.theta0.full
    truth = [true_object(spec, float(ti)) for ti in t_true]
    run_msd = msd(fit.fitted, truth, spec.kind)
    gfr_msd = None
    if compare_gfr:
        try:
            gfr_objs = gfr_fit(X, objset, spec.kind, X[fit.bins.rep_index])
            gfr_msd = msd(gfr_objs, truth, spec.kind)
        except IfrError:
            gfr_msd = np.nan
    return fit.direction, run_msd, gfr_msd


def run_mc_study(spec: SimSpec, runs: int, seed: int | None = None, *,
                 n_directions: int = 500, fit_config: FitConfig | None = None,
                 compare_gfr: bool = False, n_workers: int = 1) -> McReport:
    """Repeat generate -> fit over independent seeds and aggregate metrics.

    Deterministic for a given seed regardless of the worker count; failed
    runs are excluded and counted.
    """
    if runs < 1:
        raise DimensionError("need at least one run")
    cfg = fit_config if fit_config is not None else _default_fit_config(n_directions)
    seeds = np.random.SeedSequence(seed).spawn(runs)
    if n_workers > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_workers)(
            delayed(_one_mc_run)(spec, s, cfg, compare_gfr) for s in seeds)
    else:
        results = [_one_mc_run(spec, s, cfg, compare_gfr) for s in seeds]
    ok = [r for r in results if r is not None]
    n_failed = runs - len(ok)
    if not ok:
        raise DegenerateMeanError("every Monte Carlo run failed")
    estimates = [r[0] for r in ok]
    bias, dev = bias_dev(estimates, spec.theta0)
    msd_values = np.array([r[1] for r in ok])
    gfr_values = np.array([r[2] for r in ok], dtype=float) if compare_gfr else None
    return McReport(estimates=estimates, bias=bias, dev=dev, msd_values=msd_values,
                    gfr_msd_values=gfr_values, n_failed=n_failed)


def theta_for_delta(p: int, delta: float) -> DirectionParam:
    """Direction with all trailing coordinates equal to delta."""
    tail2 = (p - 1) * delta**2
    if tail2 >= 1.0:
        raise DimensionError(f"delta {delta!r} leaves the unit sphere for p={p}")
    return DirectionParam(np.concatenate(([np.sqrt(1.0 - tail2)],
                                          np.full(p - 1, delta))))


@dataclass
class PowerTable:
    """Empirical rejection rates of the all-coordinates Wald test."""

    deltas: np.ndarray
    rejection_rates: np.ndarray
    n_effective: np.ndarray
    alpha: float


def _one_test_run(spec: SimSpec, seed_seq, fit_config: FitConfig,
                  bootstrap_b: int, alpha: float):
    rng = np.random.default_rng(seed_seq)
    X, objset = generate_dataset(spec, rng)
    cfg = replace(fit_config, seed=int(rng.integers(2**31)))
    try:
        fit = fit_ifr(X, objset, spec.kind, cfg)
        lam = bootstrap_lambda(X, objset, fit, bootstrap_b, rng)
        k = spec.p - 1
        result = wald_test(fit.direction.reduced, np.eye(k), np.zeros(k), lam,
                           fit.bins.n_bins, alpha)
    except IfrError:
        return None
    return bool(result.reject)


def run_size_power_study(spec: SimSpec, deltas: Sequence[float], runs: int,
                         alpha: float = 0.05, *, bootstrap_b: int = 100,
                         seed: int | None = None, n_directions: int = 200,
                         fit_config: FitConfig | None = None,
                         n_workers: int = 1) -> PowerTable:
    """Empirical size/power of the Wald test over a grid of alternatives.

    For each delta the truth has all trailing coordinates equal to delta
    (delta = 0 is the null); each run refits and tests at level alpha.
    """
    if runs < 1:
        raise DimensionError("need at least one run")
    cfg = fit_config if fit_config is not None else _default_fit_config(n_directions)
    deltas = np.asarray(list(deltas), dtype=float)
    root = np.random.SeedSequence(seed)
    rates = np.empty(deltas.size)
    counts = np.empty(deltas.size, dtype=int)
    for j, delta in enumerate(deltas):
        spec_d = replace(spec, theta0=theta_for_delta(spec.p, float(delta)))
        seeds = root.spawn(runs)
        if n_workers > 1:
            from joblib import Parallel, delayed

            results = Parallel(n_jobs=n_workers)(
                delayed(_one_test_run)(spec_d, s, cfg, bootstrap_b, alpha)
                for s in seeds)
        else:
            results = [_one_test_run(spec_d, s, cfg, bootstrap_b, alpha)
                       for s in seeds]
        ok = [r for r in results if r is not None]
        counts[j] = len(ok)
        rates[j] = float(np.mean(ok)) if ok else np.nan
    return PowerTable(deltas=deltas, rejection_rates=rates, n_effective=counts,
                      alpha=alpha)
