import numpy as np
import pytest
from scipy.special import expit, ndtri

from ifr.exceptions import CovarianceError, DimensionError
from ifr.index_fit import DirectionParam, FitConfig, lift
from ifr.metric_spaces import (
    EuclideanVec,
    MetricSpaceKind,
    QuantileFunction,
    default_prob_grid,
    distance,
)
from ifr.simulation import (
    McReport,
    SimSpec,
    bias_dev,
    gen_predictors,
    gen_predictors_adjacency,
    gen_predictors_truncnorm,
    gen_response_adjacency,
    gen_response_euclidean,
    gen_response_setting1,
    gen_response_setting2,
    generate_dataset,
    msd,
    rmpe,
    run_mc_study,
    theta_for_delta,
    transport_map,
    true_object,
)

GRID = default_prob_grid()


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------


def test_copula_predictors_in_open_cube():
    X = gen_predictors(5000, 4, 0.25, np.random.default_rng(70))
    assert np.all(X > -1) and np.all(X < 1)


def test_copula_independence_when_rho_zero():
    X = gen_predictors(100_000, 3, 0.0, np.random.default_rng(71))
    corr = np.corrcoef(X.T)
    off = corr[np.triu_indices(3, 1)]
    assert np.max(np.abs(off)) < 3.0 / np.sqrt(100_000) * 1.5


def test_copula_correlation_matches_gaussian_value():
    # corr(2 Phi(Z1)-1, 2 Phi(Z2)-1) = (6/pi) asin(rho/2) for standard normals
    rho = 0.25
    X = gen_predictors(100_000, 2, rho, np.random.default_rng(72))
    target = 6.0 / np.pi * np.arcsin(rho / 2.0)
    got = np.corrcoef(X.T)[0, 1]
    assert abs(got - target) < 0.01


def test_invalid_equicorrelation_rejected():
    with pytest.raises(CovarianceError):
        gen_predictors(10, 3, -0.9, np.random.default_rng(0))


def test_truncnorm_predictors_bounds():
    X = gen_predictors_truncnorm(2000, 5, np.random.default_rng(73))
    assert np.all(np.abs(X) <= 10.0)
    assert X.shape == (2000, 5)


def test_adjacency_predictors_correlations():
    X = gen_predictors_adjacency(100_000, np.random.default_rng(74))
    corr = np.corrcoef(X.T)
    assert abs(corr[0, 1] - 0.3) < 0.02
    assert abs(corr[0, 3] + 0.4) < 0.02
    assert abs(corr[2, 3]) < 0.02


# ---------------------------------------------------------------------------
# responses
# ---------------------------------------------------------------------------


def test_setting1_quantiles_nondecreasing():
    rng = np.random.default_rng(75)
    for t in [-1.0, 0.0, 1.5]:
        q = gen_response_setting1(t, "identity", GRID, rng)
        assert np.all(np.diff(q.values) >= 0)


def test_setting1_population_mean_at_zero():
    # the population link object at t = 0 with the identity link is
    # 0.5 * Phi^{-1}
    obj = true_object(SimSpec("dist_setting_1", 100, lift(np.zeros(3))), 0.0)
    assert np.allclose(obj.values, 0.5 * ndtri(GRID))
    # Monte Carlo oracle: average simulated quantiles converge to it
    rng = np.random.default_rng(76)
    draws = np.stack([gen_response_setting1(0.0, "identity", GRID, rng).values
                      for _ in range(40_000)])
    mc_se = draws.std(axis=0) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - obj.values) < 4 * mc_se + 1e-3)


def test_setting1_median_mean_at_one():
    rng = np.random.default_rng(77)
    mid = GRID.size // 2
    vals = np.array([gen_response_setting1(1.0, "identity", GRID, rng).values[mid]
                     for _ in range(100_000)])
    target = 1.0 + expit(1.0) * ndtri(GRID[mid])
    assert abs(vals.mean() - target) < 3 * vals.std() / np.sqrt(vals.size)


def test_transport_map_monotone_and_odd_pairing():
    a = np.linspace(-3, 3, 500)
    for k in (-3, -2, -1, 1, 2, 3):
        assert np.all(np.diff(transport_map(k, a)) >= 0)
    assert np.allclose((transport_map(2, a) + transport_map(-2, a)) / 2.0, a)


def test_setting2_quantiles_nondecreasing_and_mean():
    rng = np.random.default_rng(78)
    for t in [-1.0, 0.2]:
        q = gen_response_setting2(t, "identity", GRID, rng)
        assert np.all(np.diff(q.values) >= 0)
    mid = GRID.size // 2
    vals = np.array([gen_response_setting2(0.0, "identity", GRID, rng).values[mid]
                     for _ in range(100_000)])
    assert abs(vals.mean()) < 3 * vals.std() / np.sqrt(vals.size)


def test_adjacency_entries_and_limits():
    rng = np.random.default_rng(79)
    for t in [-2.0, 0.0, 2.0]:
        y = gen_response_adjacency(t, 10, rng)
        assert np.all(y.entries >= 0.0) and np.all(y.entries <= 1.0)
        assert np.allclose(y.entries, y.entries.T)
    y = gen_response_adjacency(20.0, 6, rng)
    assert np.max(np.abs(np.diag(y.entries) - expit(20.0))) < 1e-8


def test_adjacency_means():
    rng = np.random.default_rng(80)
    t = 0.5
    zeta = expit(t)
    mid = (1.0 - zeta) / 2.0
    draws = np.stack([gen_response_adjacency(t, 4, rng).entries for _ in range(100_000)])
    means = draws.mean(axis=0)
    se = draws.std(axis=0) / np.sqrt(draws.shape[0])
    assert abs(means[0, 0] - (zeta + mid)) < 3 * se[0, 0]
    assert abs(means[0, 1] - mid) < 3 * se[0, 1]


def test_euclidean_responses():
    rng = np.random.default_rng(81)
    y = gen_response_euclidean(0.7, "identity", 0.0, rng)
    assert y.coords[0] == 0.7
    assert gen_response_euclidean(0.7, "square", 0.0, rng).coords[0] == \
        gen_response_euclidean(-0.7, "square", 0.0, rng).coords[0]
    # slope oracle by least squares
    t = np.linspace(-1, 1, 10_000)
    ys = np.array([gen_response_euclidean(ti, "identity", 0.2, rng).coords[0]
                   for ti in t])
    slope = np.polyfit(t, ys, 1)[0]
    assert abs(slope - 1.0) < 3 * 0.2 / np.sqrt(np.sum((t - t.mean())**2))


def test_generators_deterministic_under_seed():
    spec = SimSpec("dist_setting_1", 50, lift(np.array([0.3, 0.2, 0.1])), link="square")
    X1, Y1 = generate_dataset(spec, np.random.default_rng(5))
    X2, Y2 = generate_dataset(spec, np.random.default_rng(5))
    assert np.array_equal(X1, X2)
    assert np.array_equal(Y1.values, Y2.values)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def test_bias_dev_at_truth():
    theta0 = lift(np.array([0.4, 0.1, 0.2]))
    bias, dev = bias_dev([theta0] * 5, theta0)
    assert bias == pytest.approx(0.0, abs=1e-8)
    assert dev == pytest.approx(0.0, abs=1e-12)


def test_bias_dev_symmetric_pair():
    theta0 = DirectionParam(np.array([1.0, 0.0, 0.0]))
    alpha = 0.2
    e_plus = DirectionParam(np.array([np.cos(alpha), np.sin(alpha), 0.0]))
    e_minus = DirectionParam(np.array([np.cos(alpha), -np.sin(alpha), 0.0]))
    bias, dev = bias_dev([e_plus, e_minus], theta0)
    assert bias == pytest.approx(0.0, abs=1e-6)
    # both angles to the spherical mean equal alpha, so their variance is 0
    assert dev == pytest.approx(0.0, abs=1e-10)


def test_bias_dev_order_invariant():
    rng = np.random.default_rng(82)
    theta0 = lift(np.array([0.3, 0.1, 0.2]))
    dirs = []
    for _ in range(8):
        v = theta0.full + 0.1 * rng.standard_normal(4)
        v = np.abs(v[:1]).tolist() + v[1:].tolist()
        v = np.asarray(v)
        dirs.append(DirectionParam(v / np.linalg.norm(v)))
    b1 = bias_dev(dirs, theta0)
    b2 = bias_dev(dirs[::-1], theta0)
    # identical up to the descent's convergence tolerance
    assert b1[0] == pytest.approx(b2[0], abs=1e-7)
    assert b1[1] == pytest.approx(b2[1], abs=1e-9)


def test_msd_and_rmpe():
    a = [EuclideanVec([0.0]), EuclideanVec([0.0])]
    b = [EuclideanVec([1.0]), EuclideanVec([1.0])]
    assert msd(a, a, MetricSpaceKind.EUCLIDEAN) == 0.0
    assert msd(a, b, MetricSpaceKind.EUCLIDEAN) == pytest.approx(1.0)
    assert rmpe(a, b, MetricSpaceKind.EUCLIDEAN) == pytest.approx(1.0)
    rng = np.random.default_rng(83)
    xs = [EuclideanVec(rng.standard_normal(2)) for _ in range(7)]
    ys = [EuclideanVec(rng.standard_normal(2)) for _ in range(7)]
    assert rmpe(xs, ys, MetricSpaceKind.EUCLIDEAN) == pytest.approx(
        np.sqrt(msd(xs, ys, MetricSpaceKind.EUCLIDEAN)))
    with pytest.raises(DimensionError):
        msd(a, b[:1], MetricSpaceKind.EUCLIDEAN)


def test_theta_for_delta():
    d = theta_for_delta(4, 0.2)
    assert np.allclose(d.reduced, 0.2)
    assert abs(np.linalg.norm(d.full) - 1) < 1e-12
    with pytest.raises(DimensionError):
        theta_for_delta(4, 0.7)


# ---------------------------------------------------------------------------
# study drivers
# ---------------------------------------------------------------------------


def test_single_run_report_finite():
    spec = SimSpec("euclidean", 60, lift(np.array([0.4, 0.2])), link="identity")
    report = run_mc_study(spec, 1, seed=3, n_directions=40)
    assert len(report.estimates) == 1
    assert np.isfinite(report.bias)
    assert report.dev == 0.0
    assert report.msd_values.shape == (1,)
    assert report.n_failed == 0


def test_mc_study_worker_invariance():
    spec = SimSpec("euclidean", 60, lift(np.array([0.4, 0.2])), link="square")
    r1 = run_mc_study(spec, 4, seed=11, n_directions=30, n_workers=1)
    r2 = run_mc_study(spec, 4, seed=11, n_directions=30, n_workers=2)
    for a, b in zip(r1.estimates, r2.estimates):
        assert np.array_equal(a.full, b.full)
    assert np.array_equal(r1.msd_values, r2.msd_values)
    assert r1.bias == r2.bias
