import numpy as np
import pytest
from scipy import stats

from ifr.exceptions import (
    DegenerateRegionError,
    DimensionError,
    RankError,
    SingularHessianError,
    StepError,
)
from ifr.index_fit import FitConfig, fit_ifr, lift
from ifr.inference import (
    BinContext,
    bootstrap_lambda,
    chi_square_quantile,
    chi_square_sf,
    confidence_region,
    context_from_fit,
    default_h,
    full_covariance,
    grad_vn,
    hess_vn,
    jacobian,
    lambda_plugin,
    noncentral_chi_square_sf,
    power_at,
    sigma_hat,
    wald_test,
)
from ifr.metric_spaces import EuclideanVec, MetricSpaceKind, stack_objects
from ifr.simulation import gen_predictors


def euclid(y):
    return stack_objects([EuclideanVec([yi]) for yi in np.asarray(y)])


def make_context(n=400, p=3, link=lambda t: t, noise=0.1, seed=50,
                 theta0=None, n_directions=100):
    rng = np.random.default_rng(seed)
    X = gen_predictors(n, p, 0.25, rng)
    theta0 = theta0 if theta0 is not None else lift(np.zeros(p - 1))
    y = link(X @ theta0.full) + noise * rng.standard_normal(n)
    objs = euclid(y)
    fit = fit_ifr(X, objs, MetricSpaceKind.EUCLIDEAN,
                  FitConfig(n_directions=n_directions, seed=seed))
    return fit, context_from_fit(fit, X, objs), X, objs


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def test_grad_zero_for_constant_responses():
    rng = np.random.default_rng(51)
    X = gen_predictors(60, 3, 0.25, rng)
    objs = euclid(np.full(60, 1.0))
    fit = fit_ifr(X, objs, MetricSpaceKind.EUCLIDEAN, FitConfig(n_directions=20, seed=1))
    ctx = context_from_fit(fit, X, objs)
    g = grad_vn(ctx, np.zeros(2), 0.05)
    assert np.allclose(g, 0.0, atol=1e-12)
    H = hess_vn(ctx, np.zeros(2), 0.05)
    assert np.allclose(H, 0.0, atol=1e-12)
    S = sigma_hat(ctx, np.zeros(2), 0.05)
    assert np.allclose(S, 0.0, atol=1e-12)


def test_grad_matches_central_differences():
    fit, ctx, _, _ = make_context(n=300, link=lambda t: t**2, seed=52)
    theta = fit.direction.reduced
    from ifr.inference import _f_values

    g_fwd = grad_vn(ctx, theta + 0.15, 1e-3)
    h2 = 1e-4
    g_cen = np.empty_like(g_fwd)
    for r in range(theta.size):
        up, dn = (theta + 0.15).copy(), (theta + 0.15).copy()
        up[r] += h2
        dn[r] -= h2
        g_cen[r] = (_f_values(ctx, up).mean() - _f_values(ctx, dn).mean()) / (2 * h2)
    assert np.allclose(g_fwd, g_cen, rtol=1e-2, atol=1e-4)


def test_quadratic_toy_gradient_order_h():
    # inject a synthetic smooth objective through a stub context by using
    # euclidean responses equal to a quadratic in the projection
    fit, ctx, X, objs = make_context(n=500, link=lambda t: 2 * t, noise=0.0, seed=53)
    theta_eval = np.array([0.2, -0.1])
    hs = [0.05, 0.01]
    errs = []
    from ifr.inference import _f_values

    for h in hs:
        g = grad_vn(ctx, theta_eval, h)
        h_ref = 1e-5
        g_ref = np.empty_like(g)
        for r in range(2):
            up, dn = theta_eval.copy(), theta_eval.copy()
            up[r] += h_ref
            dn[r] -= h_ref
            g_ref[r] = (_f_values(ctx, up).mean() - _f_values(ctx, dn).mean()) / (2 * h_ref)
        errs.append(np.max(np.abs(g - g_ref)))
    # forward differences converge roughly linearly in h
    assert errs[1] < errs[0]


def test_hessian_symmetric_bitwise():
    fit, ctx, _, _ = make_context(n=200, link=np.tanh, seed=54)
    H = hess_vn(ctx, fit.direction.reduced, 0.05)
    assert np.array_equal(H, H.T)


def test_grad_small_and_hess_psd_at_minimizer():
    fit, ctx, _, _ = make_context(n=400, link=lambda t: t, noise=0.1, seed=55,
                                  theta0=lift(np.array([0.3, 0.2])))
    theta_hat = fit.direction.reduced
    h = 0.05
    g_at_min = grad_vn(ctx, theta_hat, h)
    g_away = grad_vn(ctx, theta_hat + 0.3, h)
    assert np.linalg.norm(g_at_min) < np.linalg.norm(g_away)
    assert np.linalg.norm(g_at_min) < 0.2
    H = hess_vn(ctx, theta_hat, h)
    w = np.linalg.eigvalsh(H)
    assert w[0] >= -1e-6 * max(abs(w[-1]), 1.0)


def test_step_error_when_ball_too_tight():
    fit, ctx, _, _ = make_context(n=100, seed=56, n_directions=30)
    theta = np.array([0.999, 0.0])
    with pytest.raises(StepError):
        grad_vn(ctx, theta, 0.9)


def test_backward_step_near_boundary():
    fit, ctx, _, _ = make_context(n=100, seed=57, n_directions=30)
    theta = np.array([0.9, 0.0])
    g = grad_vn(ctx, theta, 0.2)  # forward step would exit; backward works
    assert np.all(np.isfinite(g))


# ---------------------------------------------------------------------------
# covariance estimators
# ---------------------------------------------------------------------------


def test_sigma_hat_sandwich_scale():
    # identity link, theta0 = e1: the middle matrix is 4*sigma^2*E[m'(T)^2 u u']
    # with u the Jacobian-projected predictors; for the copula design the
    # coordinates are centered with variance 1/3
    n = 400
    sigma_noise = 0.3
    fit, ctx, X, objs = make_context(n=n, link=lambda t: t, noise=sigma_noise,
                                     seed=58)
    theta_hat = fit.direction.reduced
    S = sigma_hat(ctx, theta_hat, default_h(ctx.bins.n_bins))
    target_diag = 4.0 * sigma_noise**2 / 3.0
    for r in range(S.shape[0]):
        assert target_diag / 2 < S[r, r] < target_diag * 2
    w = np.linalg.eigvalsh(S)
    assert w[0] >= -1e-8 * max(abs(w[-1]), 1.0)


def test_lambda_plugin_identities():
    eye = np.eye(3)
    assert np.allclose(lambda_plugin(eye, eye), eye)
    assert np.allclose(lambda_plugin(eye, 2 * eye), eye / 4)
    with pytest.raises(SingularHessianError):
        lambda_plugin(eye, np.zeros((3, 3)))


def test_plugin_vs_bootstrap_same_scale():
    fit, ctx, X, objs = make_context(n=400, link=lambda t: t, noise=0.2, seed=59)
    theta_hat = fit.direction.reduced
    S = sigma_hat(ctx, theta_hat, 0.2)
    H = hess_vn(ctx, theta_hat, 0.2)
    lam_plug = lambda_plugin(S, H)
    lam_boot = bootstrap_lambda(X, objs, fit, 60, np.random.default_rng(60))
    for r in range(lam_plug.shape[0]):
        ratio = lam_plug[r, r] / lam_boot[r, r]
        assert 0.2 < ratio < 5.0
    for lam in (lam_plug, lam_boot):
        assert np.array_equal(lam, lam.T)
        w = np.linalg.eigvalsh(lam)
        assert w[0] >= -1e-8 * max(abs(w[-1]), 1.0)


def test_bootstrap_psd_and_stub_estimator():
    fit, ctx, X, objs = make_context(n=120, seed=61, n_directions=40)
    lam = bootstrap_lambda(X, objs, fit, 50, np.random.default_rng(61))
    w = np.linalg.eigvalsh(lam)
    assert w[0] >= -1e-10
    theta_hat = fit.direction.reduced
    stub = lambda Xb, Yb, rng: theta_hat
    lam0 = bootstrap_lambda(X, objs, fit, 50, np.random.default_rng(62), estimator=stub)
    assert np.allclose(lam0, 0.0)


def test_bootstrap_requires_enough_replicates():
    fit, ctx, X, objs = make_context(n=100, seed=63, n_directions=20)
    with pytest.raises(DimensionError):
        bootstrap_lambda(X, objs, fit, 10, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# Wald tests and confidence regions
# ---------------------------------------------------------------------------


def test_wald_zero_when_null_holds_exactly():
    theta = np.array([0.2, -0.1])
    B = np.eye(2)
    res = wald_test(theta, B, B @ theta, np.eye(2), n_bins=50)
    assert res.statistic == pytest.approx(0.0, abs=1e-20)
    assert res.p_value == pytest.approx(1.0)
    assert not res.reject


def test_wald_scale_and_permutation_invariance():
    rng = np.random.default_rng(64)
    theta = rng.normal(size=4)
    lam = rng.standard_normal((4, 4))
    lam = lam @ lam.T + np.eye(4)
    B = rng.standard_normal((2, 4))
    zeta = rng.normal(size=2)
    base = wald_test(theta, B, zeta, lam, 40).statistic
    scaled = wald_test(theta, 3.5 * B, 3.5 * zeta, lam, 40).statistic
    permuted = wald_test(theta, B[::-1], zeta[::-1], lam, 40).statistic
    assert abs(base - scaled) < 1e-10 * max(1, abs(base))
    assert abs(base - permuted) < 1e-10 * max(1, abs(base))


def test_wald_rank_deficient_errors():
    theta = np.zeros(3)
    B = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    with pytest.raises(RankError):
        wald_test(theta, B, np.zeros(2), np.eye(3), 10)


def test_confidence_region_center_and_halfwidth():
    lam = np.array([[0.25]])
    region = confidence_region(np.array([0.3]), lam, n_bins=25, gamma=0.05)
    assert region.contains(np.array([0.3]))
    se = np.sqrt(0.25 / 25)
    # boundary: (x - c)^2 / se^2 = chi2_1(0.95) -> halfwidth = 1.959964 se
    halfwidth = np.sqrt(region.threshold) * se
    assert halfwidth == pytest.approx(1.959964 * se, abs=1e-4)
    inside = 0.3 + 0.99 * halfwidth
    outside = 0.3 + 1.01 * halfwidth
    assert region.contains([inside])
    assert not region.contains([outside])


def test_confidence_region_grows_as_gamma_shrinks():
    lam = np.eye(2)
    t1 = confidence_region(np.zeros(2), lam, 30, gamma=0.10).threshold
    t2 = confidence_region(np.zeros(2), lam, 30, gamma=0.05).threshold
    t3 = confidence_region(np.zeros(2), lam, 30, gamma=0.01).threshold
    assert t1 < t2 < t3


def test_confidence_region_requires_pd():
    with pytest.raises(DegenerateRegionError):
        confidence_region(np.zeros(2), np.zeros((2, 2)), 30)


def test_ellipse_boundary_radius_for_identity():
    lam = 40.0 * np.eye(2)  # lam / n_bins = identity
    region = confidence_region(np.zeros(2), lam, n_bins=40, gamma=0.05)
    pts = region.ellipse_boundary(64)
    radii = np.linalg.norm(pts, axis=1)
    assert np.allclose(radii, np.sqrt(chi_square_quantile(0.95, 2)), atol=1e-10)


def test_region_membership_requires_unit_ball():
    lam = 1e6 * np.eye(2)
    region = confidence_region(np.zeros(2), lam, n_bins=1, gamma=0.05)
    assert not region.contains(np.array([1.2, 0.0]))


# ---------------------------------------------------------------------------
# chi-square utilities
# ---------------------------------------------------------------------------


def test_chi_square_basics():
    assert chi_square_sf(0.0, 4) == 1.0
    assert 0.0018 < chi_square_sf(18.883, 5) < 0.0026
    assert 0.0042 < chi_square_sf(23.81, 9) < 0.0050


def test_chi_square_monotone_and_roundtrip():
    xs = np.linspace(0.01, 40, 200)
    sfs = np.array([chi_square_sf(x, 6) for x in xs])
    assert np.all(np.diff(sfs) < 0)
    for prob in [0.1, 0.5, 0.9, 0.99]:
        q = chi_square_quantile(prob, 6)
        assert 1.0 - chi_square_sf(q, 6) == pytest.approx(prob, abs=1e-6)


def test_chi_square_against_scipy():
    rng = np.random.default_rng(65)
    for _ in range(100):
        df = int(rng.integers(1, 30))
        x = float(rng.uniform(0.01, 80))
        assert chi_square_sf(x, df) == pytest.approx(stats.chi2.sf(x, df), abs=1e-12)


def test_noncentral_reduces_to_central():
    for x in [0.5, 3.0, 10.0, 25.0]:
        assert noncentral_chi_square_sf(x, 4, 0.0) == chi_square_sf(x, 4)


def test_noncentral_against_scipy():
    rng = np.random.default_rng(66)
    for _ in range(100):
        df = int(rng.integers(1, 20))
        lam = float(rng.uniform(0.01, 60))
        x = float(rng.uniform(0.1, 120))
        mine = noncentral_chi_square_sf(x, df, lam)
        ref = stats.ncx2.sf(x, df, lam)
        assert mine == pytest.approx(ref, abs=1e-8)


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------


def test_power_at_null_equals_alpha():
    assert power_at(0.0, 100, 5, np.eye(4), alpha=0.05) == pytest.approx(0.05, abs=1e-10)


def test_power_known_noncentrality():
    # Lambda = I, M = 100, p = 5, delta = 0.1 -> rho = 100 * 4 * 0.01 = 4
    val = power_at(0.1, 100, 5, np.eye(4), alpha=0.05)
    # oracle: quadrature of the noncentral density above the critical value
    from scipy.integrate import quad

    crit = chi_square_quantile(0.95, 4)
    oracle, err = quad(lambda x: stats.ncx2.pdf(x, 4, 4.0), crit, np.inf)
    assert val == pytest.approx(oracle, abs=1e-6)


def test_power_increasing_in_delta():
    vals = [power_at(d, 80, 4, np.eye(3)) for d in [0.0, 0.1, 0.2, 0.3, 0.4]]
    assert all(b > a for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------------------
# delta method
# ---------------------------------------------------------------------------


def test_jacobian_shape_and_full_covariance_psd():
    theta = np.array([0.3, -0.2, 0.1])
    J = jacobian(theta)
    assert J.shape == (4, 3)
    theta1 = np.sqrt(1 - theta @ theta)
    assert np.allclose(J[0], -theta / theta1)
    assert np.allclose(J[1:], np.eye(3))
    lam = np.diag([1.0, 2.0, 3.0])
    full = full_covariance(lam, theta)
    assert np.array_equal(full, full.T)
    w = np.linalg.eigvalsh(full)
    assert w[0] >= -1e-12
