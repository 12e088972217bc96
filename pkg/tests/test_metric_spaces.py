import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr, ndtri

from ifr.exceptions import (
    DegenerateInputError,
    DegenerateMeanError,
    DimensionError,
    InvalidInputError,
    InvalidWeightsError,
)
from ifr.metric_spaces import (
    EuclideanVec,
    MetricSpaceKind,
    ObjectSet,
    QuantileFunction,
    SpherePoint,
    SymMatrix,
    default_prob_grid,
    distance,
    fiedler_value,
    make_object,
    mean_value,
    pava,
    project_to_space,
    project_value,
    stack_objects,
    weighted_frechet_mean,
)

GRID = default_prob_grid()


def random_quantile(rng, grid=GRID):
    mu = rng.normal(0, 1)
    sigma = rng.uniform(0.2, 2.0)
    return QuantileFunction(grid, mu + sigma * ndtri(grid))


def random_corr(rng, dim=4):
    a = rng.standard_normal((dim, dim + 2))
    c = np.corrcoef(a)
    return SymMatrix((c + c.T) / 2, unit_diagonal=False)


def random_sphere(rng, dim=3):
    v = rng.standard_normal(dim)
    return SpherePoint(v / np.linalg.norm(v))


def random_euclid(rng, dim=3):
    return EuclideanVec(rng.standard_normal(dim))


# ---------------------------------------------------------------------------
# distance
# ---------------------------------------------------------------------------


def test_distance_identity_is_zero():
    rng = np.random.default_rng(0)
    q = random_quantile(rng)
    assert distance(q, q, MetricSpaceKind.WASSERSTEIN2) == 0.0
    m = random_corr(rng)
    assert distance(m, m, MetricSpaceKind.FROBENIUS) == 0.0
    s = random_sphere(rng)
    assert distance(s, s, MetricSpaceKind.SPHERE_GEODESIC) == 0.0
    e = random_euclid(rng)
    assert distance(e, e, MetricSpaceKind.EUCLIDEAN) == 0.0


def test_wasserstein_normal_vs_normal():
    # d_W(N(0,1), N(1, sd 2))^2 = 1^2 + (2-1)^2 = 2.  The probability grid is
    # the normal cdf of an equispaced z grid so the trapezoid rule resolves
    # the tails.
    z = np.linspace(-5.5, 5.5, 1001)
    probs = ndtr(z)
    q1 = QuantileFunction(probs, ndtri(probs))
    q2 = QuantileFunction(probs, 1.0 + 2.0 * ndtri(probs))
    d = distance(q1, q2, MetricSpaceKind.WASSERSTEIN2)
    # independent oracle: trapezoid on a 1e5-point grid
    z5 = np.linspace(-5.5, 5.5, 100_001)
    p5 = ndtr(z5)
    oracle = np.sqrt(np.trapezoid((1.0 + ndtri(p5)) ** 2, p5))
    assert abs(d - np.sqrt(2.0)) < 1e-3
    assert abs(d - oracle) < 1e-4


def test_sphere_orthogonal_distance():
    e1 = SpherePoint([1.0, 0.0, 0.0])
    e2 = SpherePoint([0.0, 1.0, 0.0])
    assert distance(e1, e2, MetricSpaceKind.SPHERE_GEODESIC) == pytest.approx(np.pi / 2)


def test_distance_mismatch_errors():
    q = random_quantile(np.random.default_rng(1))
    e = random_euclid(np.random.default_rng(2))
    with pytest.raises(DimensionError):
        distance(q, e, MetricSpaceKind.WASSERSTEIN2)
    with pytest.raises(DimensionError):
        distance(EuclideanVec([1.0, 2.0]), EuclideanVec([1.0]), MetricSpaceKind.EUCLIDEAN)


def test_non_finite_rejected_at_construction():
    with pytest.raises(InvalidInputError):
        EuclideanVec([np.nan, 1.0])
    with pytest.raises(InvalidInputError):
        QuantileFunction(GRID, np.full(GRID.size, np.inf))


@pytest.mark.parametrize("kind,sampler", [
    (MetricSpaceKind.WASSERSTEIN2, random_quantile),
    (MetricSpaceKind.FROBENIUS, random_corr),
    (MetricSpaceKind.SPHERE_GEODESIC, random_sphere),
    (MetricSpaceKind.EUCLIDEAN, random_euclid),
])
def test_metric_axioms_on_random_triples(kind, sampler):
    rng = np.random.default_rng(42)
    for _ in range(1000):
        a, b, c = sampler(rng), sampler(rng), sampler(rng)
        dab = distance(a, b, kind)
        dba = distance(b, a, kind)
        assert dab == dba  # symmetry exactly
        dac = distance(a, c, kind)
        dcb = distance(c, b, kind)
        assert dab <= dac + dcb + 1e-9


# ---------------------------------------------------------------------------
# pava
# ---------------------------------------------------------------------------


def test_pava_feasible_unchanged():
    y = np.array([0.0, 0.5, 0.5, 2.0])
    assert np.array_equal(pava(y), y)


def test_pava_hand_example():
    assert np.allclose(pava(np.array([0.0, 2.0, 1.0, 3.0])), [0.0, 1.5, 1.5, 3.0])


def test_pava_matches_scipy():
    from scipy.optimize import isotonic_regression

    rng = np.random.default_rng(3)
    for _ in range(50):
        y = rng.standard_normal(40)
        w = rng.uniform(0.1, 2.0, 40)
        ours = pava(y, w)
        ref = isotonic_regression(y, weights=w).x
        assert np.allclose(ours, ref, atol=1e-10)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=60))
def test_pava_idempotent_and_monotone(values):
    y = np.asarray(values)
    out = pava(y)
    assert np.all(np.diff(out) >= 0)
    assert np.array_equal(pava(out), out)


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------


def test_project_sphere_normalizes():
    obj = project_to_space(np.array([3.0, 4.0]), MetricSpaceKind.SPHERE_GEODESIC)
    assert np.allclose(obj.coords, [0.6, 0.8])


def test_project_sphere_zero_vector_errors():
    with pytest.raises(DegenerateInputError):
        project_to_space(np.zeros(3), MetricSpaceKind.SPHERE_GEODESIC)


def test_projection_idempotent_bitwise():
    rng = np.random.default_rng(9)
    raw = rng.standard_normal(GRID.size)
    v1 = project_value(MetricSpaceKind.WASSERSTEIN2, raw, probs=GRID)
    v2 = project_value(MetricSpaceKind.WASSERSTEIN2, v1, probs=GRID)
    assert np.array_equal(v1, v2)

    m = rng.standard_normal((5, 5))
    p1 = project_value(MetricSpaceKind.FROBENIUS, m)
    p2 = project_value(MetricSpaceKind.FROBENIUS, p1)
    assert np.array_equal(p1, p2)

    s1 = project_value(MetricSpaceKind.SPHERE_GEODESIC, rng.standard_normal(4))
    s2 = project_value(MetricSpaceKind.SPHERE_GEODESIC, s1)
    assert np.array_equal(s1, s2)

    e = rng.standard_normal(3)
    assert np.array_equal(project_value(MetricSpaceKind.EUCLIDEAN, e), e)


def test_unit_diagonal_projection():
    rng = np.random.default_rng(10)
    raw = rng.standard_normal((4, 4))
    raw = (raw + raw.T) / 2
    out = project_value(MetricSpaceKind.FROBENIUS, raw, unit_diagonal=True)
    assert np.allclose(np.diag(out), 1.0, atol=1e-6)
    w = np.linalg.eigvalsh(out)
    assert w[0] >= -1e-7


# ---------------------------------------------------------------------------
# weighted Fréchet means
# ---------------------------------------------------------------------------


def test_point_mass_returns_first_object():
    rng = np.random.default_rng(4)
    objs = [random_quantile(rng) for _ in range(4)]
    out = weighted_frechet_mean(objs, [1.0, 0.0, 0.0, 0.0], MetricSpaceKind.WASSERSTEIN2)
    assert np.allclose(out.values, objs[0].values)


def test_wasserstein_midpoint():
    g = GRID
    out = weighted_frechet_mean(
        [QuantileFunction(g, g), QuantileFunction(g, 2 * g)],
        [0.5, 0.5], MetricSpaceKind.WASSERSTEIN2)
    assert np.allclose(out.values, 1.5 * g, atol=1e-12)


def test_wasserstein_nonnegative_weights_need_no_projection():
    rng = np.random.default_rng(5)
    objs = [random_quantile(rng) for _ in range(5)]
    w = rng.uniform(0.1, 1.0, 5)
    w = w / w.sum()
    out = weighted_frechet_mean(objs, w, MetricSpaceKind.WASSERSTEIN2)
    avg = sum(wi * o.values for wi, o in zip(w, objs))
    assert np.max(np.abs(out.values - avg)) < 1e-12


def test_wasserstein_signed_weights_give_isotonic_projection_of_average():
    rng = np.random.default_rng(6)
    objs = [random_quantile(rng) for _ in range(3)]
    w = np.array([1.4, -0.6, 0.2])
    out = weighted_frechet_mean(objs, w, MetricSpaceKind.WASSERSTEIN2)
    avg = sum(wi * o.values for wi, o in zip(w, objs))
    from ifr.metric_spaces import _trapezoid_weights

    expected = pava(avg, _trapezoid_weights(GRID))
    assert np.allclose(out.values, expected, atol=1e-12)
    assert np.all(np.diff(out.values) >= -1e-10)


def test_sphere_mean_halfway():
    out = weighted_frechet_mean(
        [SpherePoint([1.0, 0.0, 0.0]), SpherePoint([0.0, 1.0, 0.0])],
        [0.5, 0.5], MetricSpaceKind.SPHERE_GEODESIC)
    target = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)
    # oracle: dense search over the connecting great circle
    angles = np.linspace(0, np.pi / 2, 20001)
    pts = np.stack([np.cos(angles), np.sin(angles), np.zeros_like(angles)], axis=1)
    costs = 0.5 * np.arccos(np.clip(pts[:, 0], -1, 1)) ** 2 \
        + 0.5 * np.arccos(np.clip(pts[:, 1], -1, 1)) ** 2
    oracle = pts[np.argmin(costs)]
    assert np.allclose(out.coords, target, atol=1e-6)
    assert np.allclose(oracle, target, atol=1e-3)


def test_euclidean_mean_is_weighted_average():
    rng = np.random.default_rng(7)
    objs = [random_euclid(rng) for _ in range(6)]
    w = rng.normal(size=6)
    w = w - (w.sum() - 1.0) / 6.0
    out = weighted_frechet_mean(objs, w, MetricSpaceKind.EUCLIDEAN)
    avg = sum(wi * o.coords for wi, o in zip(w, objs))
    assert np.max(np.abs(out.coords - avg)) < 1e-12


def test_weights_must_sum_to_one():
    objs = [EuclideanVec([0.0]), EuclideanVec([1.0])]
    with pytest.raises(InvalidWeightsError):
        weighted_frechet_mean(objs, [0.7, 0.7], MetricSpaceKind.EUCLIDEAN)


def test_sphere_degenerate_mean_errors():
    objs = [SpherePoint([1.0, 0.0]), SpherePoint([-1.0, 0.0])]
    with pytest.raises(DegenerateMeanError):
        weighted_frechet_mean(objs, [0.5, 0.5], MetricSpaceKind.SPHERE_GEODESIC)


def test_mean_outputs_satisfy_invariants():
    rng = np.random.default_rng(8)
    quantiles = [random_quantile(rng) for _ in range(4)]
    w = np.array([0.6, 0.6, -0.4, 0.2])
    out = weighted_frechet_mean(quantiles, w, MetricSpaceKind.WASSERSTEIN2)
    assert np.all(np.diff(out.values) >= -1e-10)

    mats = [random_corr(rng) for _ in range(4)]
    out = weighted_frechet_mean(mats, w, MetricSpaceKind.FROBENIUS)
    assert out.is_psd()

    sph = [random_sphere(rng) for _ in range(4)]
    # keep the points in one hemisphere so the mean is well defined
    sph = [SpherePoint(np.abs(s.coords) / np.linalg.norm(s.coords)) for s in sph]
    out = weighted_frechet_mean(sph, w, MetricSpaceKind.SPHERE_GEODESIC)
    assert abs(np.linalg.norm(out.coords) - 1.0) < 1e-10


# ---------------------------------------------------------------------------
# fiedler value
# ---------------------------------------------------------------------------


def test_fiedler_identity_is_zero():
    assert fiedler_value(SymMatrix(np.eye(4), unit_diagonal=True)) == pytest.approx(0.0)


def test_fiedler_complete_graph():
    assert fiedler_value(SymMatrix(np.ones((3, 3)))) == pytest.approx(3.0)


@given(st.floats(0.01, 1.0))
def test_fiedler_two_nodes(w):
    mat = SymMatrix(np.array([[1.0, w], [w, 1.0]]), unit_diagonal=True)
    assert fiedler_value(mat) == pytest.approx(2.0 * w, rel=1e-9)


def test_sym_matrix_requires_square():
    with pytest.raises(DimensionError):
        SymMatrix(np.ones((2, 3)))
