"""Response object spaces: types, metrics, weighted Fréchet means, projections.

Four object spaces are supported: univariate distributions represented by
quantile functions on a shared probability grid (2-Wasserstein metric),
symmetric positive semi-definite / correlation matrices (Frobenius metric),
points on the unit sphere (geodesic metric), and plain Euclidean vectors.

Weighted Fréchet means must handle signed weights because local linear
smoother weights can be negative; each solver averages in the ambient
linearization and projects back onto the object space.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .exceptions import (
    DegenerateInputError,
    DegenerateMeanError,
    DimensionError,
    InvalidInputError,
    InvalidWeightsError,
)

WEIGHT_SUM_TOL = 1e-8
PSD_EIGEN_TOL = 1e-8  # relative to the largest eigenvalue
MONOTONE_TOL = 1e-10
SYMMETRY_TOL = 1e-10
UNIT_NORM_TOL = 1e-10


class MetricSpaceKind(Enum):
    """Which metric space a dataset of responses lives in."""

    WASSERSTEIN2 = "wasserstein"
    FROBENIUS = "frobenius"
    SPHERE_GEODESIC = "sphere"
    EUCLIDEAN = "euclidean"


def default_prob_grid(n_points: int = 101) -> np.ndarray:
    """Equispaced probability grid on [0.005, 0.995] used for quantile objects."""
    return np.linspace(0.005, 0.995, n_points)


# ---------------------------------------------------------------------------
# Object value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantileFunction:
    """A univariate distribution stored as quantile values on a shared grid."""

    probs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "values", values)
        if probs.ndim != 1 or values.shape != probs.shape:
            raise DimensionError("probs and values must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(probs)) and np.all(np.isfinite(values))):
            raise InvalidInputError("quantile function contains non-finite entries")
        if np.any(np.diff(probs) <= 0) or probs[0] < 0 or probs[-1] > 1:
            raise InvalidInputError("probs must be strictly increasing within [0, 1]")
        if np.any(np.diff(values) < -MONOTONE_TOL):
            raise InvalidInputError("quantile values must be nondecreasing")


@dataclass(frozen=True)
class SymMatrix:
    """A symmetric matrix response; optionally constrained to unit diagonal."""

    entries: np.ndarray
    unit_diagonal: bool = False

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", entries)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionError("matrix must be square")
        if not np.all(np.isfinite(entries)):
            raise InvalidInputError("matrix contains non-finite entries")
        if np.max(np.abs(entries - entries.T)) > SYMMETRY_TOL:
            raise InvalidInputError("matrix is not symmetric")
        if self.unit_diagonal and np.max(np.abs(np.diag(entries) - 1.0)) > SYMMETRY_TOL:
            raise InvalidInputError("diagonal entries must equal one")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def is_psd(self, tol: float = PSD_EIGEN_TOL) -> bool:
        w = np.linalg.eigvalsh(self.entries)
        scale = max(abs(w[-1]), 1.0)
        return bool(w[0] >= -tol * scale)


@dataclass(frozen=True)
class SpherePoint:
    """A unit vector on the sphere with the geodesic (arc length) metric."""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 1:
            raise DimensionError("sphere point must be a 1-d array")
        if not np.all(np.isfinite(coords)):
            raise InvalidInputError("sphere point contains non-finite entries")
        if abs(np.linalg.norm(coords) - 1.0) > UNIT_NORM_TOL:
            raise InvalidInputError("sphere point must have unit norm")


@dataclass(frozen=True)
class EuclideanVec:
    """A plain Euclidean vector response."""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.atleast_1d(np.asarray(self.coords, dtype=float))
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 1:
            raise DimensionError("euclidean response must be a 1-d array")
        if not np.all(np.isfinite(coords)):
            raise InvalidInputError("euclidean response contains non-finite entries")


ObjectValue = Union[QuantileFunction, SymMatrix, SpherePoint, EuclideanVec]

_KIND_BY_TYPE = {
    QuantileFunction: MetricSpaceKind.WASSERSTEIN2,
    SymMatrix: MetricSpaceKind.FROBENIUS,
    SpherePoint: MetricSpaceKind.SPHERE_GEODESIC,
    EuclideanVec: MetricSpaceKind.EUCLIDEAN,
}


def kind_of(obj: ObjectValue) -> MetricSpaceKind:
    try:
        return _KIND_BY_TYPE[type(obj)]
    except KeyError:
        raise DimensionError(f"not an object value: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Stacked representation used by the regression engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectSet:
    """A same-kind collection of objects stacked into one array.

    ``values`` has shape (n, K) for quantile functions, (n, r, r) for
    matrices, and (n, m) for sphere or Euclidean objects.  The regression
    internals work on this representation; individual :class:`ObjectValue`
    instances are materialized only at API boundaries.
    """

    kind: MetricSpaceKind
    values: np.ndarray
    probs: np.ndarray | None = None
    unit_diagonal: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if self.kind is MetricSpaceKind.WASSERSTEIN2:
            if self.probs is None:
                raise DimensionError("quantile objects need a probability grid")
            object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> ObjectValue:
        return make_object(self.kind, self.values[i], probs=self.probs,
                           unit_diagonal=self.unit_diagonal)

    def take(self, indices) -> "ObjectSet":
        return ObjectSet(self.kind, self.values[np.asarray(indices)], probs=self.probs,
                         unit_diagonal=self.unit_diagonal)

    def to_list(self) -> list[ObjectValue]:
        return [self[i] for i in range(len(self))]

    @property
    def quad_weights(self) -> np.ndarray:
        return _trapezoid_weights(self.probs)


def make_object(kind: MetricSpaceKind, value: np.ndarray, *, probs=None,
                unit_diagonal: bool = False) -> ObjectValue:
    if kind is MetricSpaceKind.WASSERSTEIN2:
        return QuantileFunction(probs, value)
    if kind is MetricSpaceKind.FROBENIUS:
        return SymMatrix(value, unit_diagonal=unit_diagonal)
    if kind is MetricSpaceKind.SPHERE_GEODESIC:
        return SpherePoint(value)
    return EuclideanVec(value)


def stack_objects(objects: Sequence[ObjectValue]) -> ObjectSet:
    """Stack a homogeneous list of objects into an :class:`ObjectSet`."""
    if len(objects) == 0:
        raise InvalidInputError("need at least one object")
    kind = kind_of(objects[0])
    for obj in objects[1:]:
        if kind_of(obj) is not kind:
            raise DimensionError("objects mix different space kinds")
    if kind is MetricSpaceKind.WASSERSTEIN2:
        probs = objects[0].probs
        for obj in objects[1:]:
            _check_same_grid(probs, obj.probs)
        values = np.stack([o.values for o in objects])
        return ObjectSet(kind, values, probs=probs)
    if kind is MetricSpaceKind.FROBENIUS:
        dim = objects[0].dim
        unit = all(o.unit_diagonal for o in objects)
        if any(o.dim != dim for o in objects):
            raise DimensionError("matrices differ in dimension")
        return ObjectSet(kind, np.stack([o.entries for o in objects]), unit_diagonal=unit)
    coords = [o.coords for o in objects]
    if any(c.shape != coords[0].shape for c in coords):
        raise DimensionError("vectors differ in dimension")
    return ObjectSet(kind, np.stack(coords))


def _check_same_grid(p1: np.ndarray, p2: np.ndarray):
    if p1.shape != p2.shape or np.max(np.abs(p1 - p2)) > 1e-12:
        raise DimensionError("quantile functions must share one probability grid")


def _trapezoid_weights(probs: np.ndarray) -> np.ndarray:
    w = np.empty_like(probs)
    w[0] = (probs[1] - probs[0]) / 2.0
    w[-1] = (probs[-1] - probs[-2]) / 2.0
    w[1:-1] = (probs[2:] - probs[:-2]) / 2.0
    return w


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def distance(a: ObjectValue, b: ObjectValue, kind: MetricSpaceKind) -> float:
    """Metric distance between two objects of the given space kind."""
    if kind_of(a) is not kind or kind_of(b) is not kind:
        raise DimensionError("object variants do not match the requested kind")
    if kind is MetricSpaceKind.WASSERSTEIN2:
        _check_same_grid(a.probs, b.probs)
        diff2 = (a.values - b.values) ** 2
        return float(np.sqrt(max(np.trapezoid(diff2, a.probs), 0.0)))
    if kind is MetricSpaceKind.FROBENIUS:
        if a.entries.shape != b.entries.shape:
            raise DimensionError("matrices differ in dimension")
        return float(np.linalg.norm(a.entries - b.entries, ord="fro"))
    if kind is MetricSpaceKind.SPHERE_GEODESIC:
        if a.coords.shape != b.coords.shape:
            raise DimensionError("sphere points differ in dimension")
        if np.array_equal(a.coords, b.coords):
            return 0.0
        return float(np.arccos(np.clip(np.dot(a.coords, b.coords), -1.0, 1.0)))
    if a.coords.shape != b.coords.shape:
        raise DimensionError("vectors differ in dimension")
    return float(np.linalg.norm(a.coords - b.coords))


def squared_distances(objset: ObjectSet, value: np.ndarray) -> np.ndarray:
    """Vector of squared distances from each object in the set to one value."""
    v = objset.values
    if objset.kind is MetricSpaceKind.WASSERSTEIN2:
        return ((v - value) ** 2) @ objset.quad_weights
    if objset.kind is MetricSpaceKind.FROBENIUS:
        return ((v - value) ** 2).sum(axis=(1, 2))
    if objset.kind is MetricSpaceKind.SPHERE_GEODESIC:
        return np.arccos(np.clip(v @ value, -1.0, 1.0)) ** 2
    return ((v - value) ** 2).sum(axis=1)


def squared_distance_pairs(a: ObjectSet, b_values: np.ndarray) -> np.ndarray:
    """Rowwise squared distances d^2(a_i, b_i) between two stacks."""
    v = a.values
    if v.shape != b_values.shape:
        raise DimensionError("stacks differ in shape")
    if a.kind is MetricSpaceKind.WASSERSTEIN2:
        return ((v - b_values) ** 2) @ a.quad_weights
    if a.kind is MetricSpaceKind.FROBENIUS:
        return ((v - b_values) ** 2).sum(axis=(1, 2))
    if a.kind is MetricSpaceKind.SPHERE_GEODESIC:
        dots = np.einsum("ij,ij->i", v, b_values)
        return np.arccos(np.clip(dots, -1.0, 1.0)) ** 2
    return ((v - b_values) ** 2).sum(axis=1)


# ---------------------------------------------------------------------------
# Isotonic projection (pool adjacent violators)
# ---------------------------------------------------------------------------


def pava(values: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Weighted L2 projection of a sequence onto nondecreasing sequences.

    Returns the input unchanged (as a copy) when it is already feasible, so
    the projection is idempotent bitwise.
    """
    y = np.asarray(values, dtype=float)
    n = y.size
    if n == 0:
        raise DegenerateInputError("empty sequence")
    if np.all(np.diff(y) >= 0):
        return y.copy()
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    means: list[float] = []
    wsums: list[float] = []
    counts: list[int] = []
    for i in range(n):
        m, ww, c = y[i], w[i], 1
        while means and means[-1] > m:
            m0, w0, c0 = means.pop(), wsums.pop(), counts.pop()
            tot = w0 + ww
            m = (w0 * m0 + ww * m) / tot if tot != 0 else (m0 + m) / 2.0
            ww = tot
            c += c0
        means.append(m)
        wsums.append(ww)
        counts.append(c)
    return np.repeat(np.asarray(means), np.asarray(counts))


# ---------------------------------------------------------------------------
# Projections onto each object space
# ---------------------------------------------------------------------------


def _project_psd(mat: np.ndarray, unit_diagonal: bool) -> np.ndarray:
    """Nearest-PSD projection; alternating with the unit-diagonal set if needed."""
    sym = (mat + mat.T) / 2.0

    def clip_psd(m):
        w, v = np.linalg.eigh(m)
        if w[0] >= 0:
            return m
        w = np.maximum(w, 0.0)
        return (v * w) @ v.T

    if not unit_diagonal:
        return clip_psd(sym)
    x = sym
    for _ in range(100):
        y = clip_psd(x)
        z = y.copy()
        np.fill_diagonal(z, 1.0)
        if np.max(np.abs(z - x)) < 1e-8:
            x = z
            break
        x = z
    return (x + x.T) / 2.0


def _matrix_feasible(mat: np.ndarray, unit_diagonal: bool) -> bool:
    if np.max(np.abs(mat - mat.T)) > SYMMETRY_TOL:
        return False
    if unit_diagonal and np.max(np.abs(np.diag(mat) - 1.0)) > SYMMETRY_TOL:
        return False
    w = np.linalg.eigvalsh(mat)
    scale = max(abs(w[-1]), 1.0)
    return bool(w[0] >= -PSD_EIGEN_TOL * scale)


def project_value(kind: MetricSpaceKind, raw: np.ndarray, *, probs=None,
                  unit_diagonal: bool = False) -> np.ndarray:
    """Project an unconstrained array onto the object space; idempotent."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise InvalidInputError("projection input contains non-finite entries")
    if kind is MetricSpaceKind.WASSERSTEIN2:
        grid = default_prob_grid(raw.size) if probs is None else np.asarray(probs, float)
        if grid.shape != raw.shape:
            raise DimensionError("value grid does not match the probability grid")
        return pava(raw, _trapezoid_weights(grid))
    if kind is MetricSpaceKind.FROBENIUS:
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
            raise DimensionError("matrix must be square")
        if _matrix_feasible(raw, unit_diagonal):
            return raw.copy()
        return _project_psd(raw, unit_diagonal)
    if kind is MetricSpaceKind.SPHERE_GEODESIC:
        nrm = np.linalg.norm(raw)
        if nrm < 1e-12:
            raise DegenerateInputError("cannot project the zero vector onto the sphere")
        if abs(nrm - 1.0) <= UNIT_NORM_TOL:
            return raw.copy()
        return raw / nrm
    return raw.copy()


def project_to_space(raw: np.ndarray, kind: MetricSpaceKind, *, probs=None,
                     unit_diagonal: bool = False) -> ObjectValue:
    """Project an unconstrained array and wrap it as an object value."""
    if kind is MetricSpaceKind.WASSERSTEIN2 and probs is None:
        probs = default_prob_grid(np.asarray(raw).size)
    value = project_value(kind, raw, probs=probs, unit_diagonal=unit_diagonal)
    return make_object(kind, value, probs=probs, unit_diagonal=unit_diagonal)


# ---------------------------------------------------------------------------
# Weighted Fréchet means
# ---------------------------------------------------------------------------


def _sphere_objective(values: np.ndarray, w: np.ndarray, x: np.ndarray) -> float:
    ang = np.arccos(np.clip(values @ x, -1.0, 1.0))
    return float(w @ ang**2)


def _sphere_descent(values: np.ndarray, w: np.ndarray, x0: np.ndarray,
                    tol: float = 1e-10, max_iter: int = 500) -> tuple[np.ndarray, float]:
    """Projected gradient descent on the sphere with step halving.

    The initial step 0.5 turns the gradient update into the tangent-space
    average of log maps, which contracts quickly for concentrated data; the
    last successful step carries over between iterations.
    """
    x = x0.copy()
    fx = _sphere_objective(values, w, x)
    step = 0.5
    for _ in range(max_iter):
        u = np.clip(values @ x, -1.0, 1.0)
        ang = np.arccos(u)
        s = np.sqrt(np.maximum(1.0 - u**2, 1e-14))
        # limit of arccos(u)/sqrt(1-u^2) at u -> 1 is 1
        factor = np.where(1.0 - u < 1e-12, 1.0, ang / s)
        grad = -2.0 * ((w * factor) @ values)
        grad_t = grad - (grad @ x) * x
        gnorm = np.linalg.norm(grad_t)
        if gnorm < tol:
            break
        trial = step
        improved = False
        while trial > 1e-14:
            cand = x - trial * grad_t
            nrm = np.linalg.norm(cand)
            if nrm > 1e-14:
                cand = cand / nrm
                fc = _sphere_objective(values, w, cand)
                if fc < fx - 1e-16:
                    x, fx = cand, fc
                    improved = True
                    step = min(trial * 2.0, 0.5)
                    break
            trial /= 2.0
        if not improved:
            break
    return x, fx


def _sphere_mean(values: np.ndarray, w: np.ndarray) -> np.ndarray:
    avg = w @ values
    nrm = np.linalg.norm(avg)
    if nrm < 1e-12:
        raise DegenerateMeanError("weighted sphere average has near-zero norm")
    best_x, best_f = _sphere_descent(values, w, avg / nrm)
    if np.any(w < 0):
        # mixed-sign objectives can be multimodal
        rng = np.random.default_rng(0)
        for _ in range(5):
            z = rng.standard_normal(values.shape[1])
            z /= np.linalg.norm(z)
            x, f = _sphere_descent(values, w, z)
            if f < best_f:
                best_x, best_f = x, f
    return best_x


def mean_value(objset: ObjectSet, weights: np.ndarray) -> np.ndarray:
    """Weighted Fréchet mean on stacked values; returns a bare array."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(objset),):
        raise DimensionError("one weight per object is required")
    total = w.sum()
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise InvalidWeightsError(f"weights sum to {total!r}, expected 1")
    if objset.kind is MetricSpaceKind.WASSERSTEIN2:
        avg = w @ objset.values
        return pava(avg, objset.quad_weights)
    if objset.kind is MetricSpaceKind.FROBENIUS:
        avg = np.tensordot(w, objset.values, axes=(0, 0))
        if _matrix_feasible(avg, objset.unit_diagonal):
            return (avg + avg.T) / 2.0
        return _project_psd(avg, objset.unit_diagonal)
    if objset.kind is MetricSpaceKind.SPHERE_GEODESIC:
        return _sphere_mean(objset.values, w)
    return w @ objset.values


def mean_values_rows(objset: ObjectSet, weight_rows: np.ndarray) -> np.ndarray:
    """Weighted Fréchet means for several weight rows at once.

    ``weight_rows`` has shape (m, n); each row is normalized to sum to one
    and produces one mean.  This is the vectorized hot path behind the local
    linear link fits.
    """
    w = np.asarray(weight_rows, dtype=float)
    w = w / w.sum(axis=1, keepdims=True)
    values = objset.values
    if objset.kind is MetricSpaceKind.WASSERSTEIN2:
        avg = w @ values
        bad = np.flatnonzero(np.any(np.diff(avg, axis=1) < 0, axis=1))
        if bad.size:
            qw = objset.quad_weights
            for i in bad:
                avg[i] = pava(avg[i], qw)
        return avg
    if objset.kind is MetricSpaceKind.FROBENIUS:
        avg = np.tensordot(w, values, axes=(1, 0))
        avg = (avg + avg.transpose(0, 2, 1)) / 2.0
        for i in range(avg.shape[0]):
            if not _matrix_feasible(avg[i], objset.unit_diagonal):
                avg[i] = _project_psd(avg[i], objset.unit_diagonal)
        return avg
    if objset.kind is MetricSpaceKind.SPHERE_GEODESIC:
        # engine path: single descent from the projected average (the public
        # weighted_frechet_mean adds random restarts for mixed-sign weights)
        out = np.empty((w.shape[0], values.shape[1]))
        for i, row in enumerate(w):
            avg = row @ values
            nrm = np.linalg.norm(avg)
            if nrm < 1e-12:
                raise DegenerateMeanError("weighted sphere average has near-zero norm")
            out[i] = _sphere_descent(values, row, avg / nrm)[0]
        return out
    return w @ values


def weighted_frechet_mean(objects: Sequence[ObjectValue], weights,
                          kind: MetricSpaceKind) -> ObjectValue:
    """Minimizer of ``sum_i w_i d^2(Y_i, omega)`` over the object space.

    Weights must sum to one; individual weights may be negative, in which
    case the linearized average is projected back onto the space.
    """
    objset = stack_objects(list(objects))
    if objset.kind is not kind:
        raise DimensionError("objects do not match the requested kind")
    value = mean_value(objset, np.asarray(weights, dtype=float))
    return make_object(kind, value, probs=objset.probs, unit_diagonal=objset.unit_diagonal)


# ---------------------------------------------------------------------------
# Graph summaries for matrix objects
# ---------------------------------------------------------------------------


def fiedler_value(corr: SymMatrix) -> float:
    """Second-smallest eigenvalue of the graph Laplacian induced by a
    correlation matrix, using the thresholded adjacency (Y - I)_+."""
    y = corr.entries
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise DimensionError("correlation matrix must be square")
    r = y.shape[0]
    adj = np.maximum(y - np.eye(r), 0.0)
    lap = np.diag(adj.sum(axis=1)) - adj
    eigvals = np.linalg.eigvalsh(lap)
    return float(eigvals[1]) if r >= 2 else 0.0
