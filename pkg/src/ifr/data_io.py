"""Dataset ingestion, result payloads, and run configuration.

All file formats are plain delimited text or JSON.  Writers are atomic
(write to a temporary file, then rename) and emit floats at full precision
so that write -> read -> write round-trips byte-identically.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DimensionError, InvalidInputError, ParseError
from .local_frechet import KernelFamily
from .metric_spaces import MetricSpaceKind, ObjectSet, SymMatrix

SCHEMA_VERSION = 1

_METRIC_NAMES = {
    "wasserstein": MetricSpaceKind.WASSERSTEIN2,
    "frobenius": MetricSpaceKind.FROBENIUS,
    "sphere": MetricSpaceKind.SPHERE_GEODESIC,
    "euclidean": MetricSpaceKind.EUCLIDEAN,
}

_KERNEL_NAMES = {
    "epanechnikov": KernelFamily.EPANECHNIKOV,
    "gaussian": KernelFamily.GAUSSIAN,
}


def metric_kind(name: str) -> MetricSpaceKind:
    try:
        return _METRIC_NAMES[name.lower()]
    except KeyError:
        raise ParseError(f"unknown metric {name!r}; choose from {sorted(_METRIC_NAMES)}")


def kernel_family(name: str) -> KernelFamily:
    try:
        return _KERNEL_NAMES[name.lower()]
    except KeyError:
        raise ParseError(f"unknown kernel {name!r}; choose from {sorted(_KERNEL_NAMES)}")


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Options shared by the command-line entry points."""

    metric: str = "euclidean"
    kernel: str = "epanechnikov"
    directions: int = 500
    bandwidth_grid: list[float] | None = None  # None = data-driven
    bin_grid: list[int] | None = None  # None = default counts
    bootstrap_b: int = 200
    seed: int | None = None
    workers: int = 1
    tuning: str = "cached"
    refine: bool = True
    sqrt_compositions: bool = False
    unit_diagonal: bool = False

    def __post_init__(self):
        if self.directions < 1 or self.bootstrap_b < 1 or self.workers < 1:
            raise InvalidInputError("counts in the run configuration must be >= 1")
        if self.tuning not in ("cached", "per-direction"):
            raise InvalidInputError("tuning must be 'cached' or 'per-direction'")


_CONFIG_PARSERS = {
    "metric": str,
    "kernel": str,
    "directions": int,
    "bandwidth_grid": lambda s: [float(x) for x in s.split()],
    "bin_grid": lambda s: [int(x) for x in s.split()],
    "bootstrap_b": int,
    "seed": int,
    "workers": int,
    "tuning": str,
    "refine": lambda s: s.lower() in ("1", "true", "yes"),
    "sqrt_compositions": lambda s: s.lower() in ("1", "true", "yes"),
    "unit_diagonal": lambda s: s.lower() in ("1", "true", "yes"),
}


def read_config(path: str | Path) -> dict:
    """Parse a flat `key = value` configuration file."""
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_PARSERS:
            raise ParseError(f"unknown configuration key {key!r}", line=lineno)
        try:
            out[key] = _CONFIG_PARSERS[key](value)
        except ValueError:
            raise ParseError(f"bad value for {key!r}: {value!r}", line=lineno)
    return out


# ---------------------------------------------------------------------------
# Atomic writes and float formatting
# ---------------------------------------------------------------------------


def atomic_write_text(path: str | Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Delimited numeric tables
# ---------------------------------------------------------------------------


def _parse_row(line: str, lineno: int) -> list[float]:
    fields = [f.strip() for f in line.split(",")]
    out = []
    for col, f in enumerate(fields, start=1):
        try:
            out.append(float(f))
        except ValueError:
            raise ParseError(f"not a number: {f!r}", line=lineno, column=col)
    return out


def read_matrix_csv(path: str | Path) -> np.ndarray:
    """Numeric comma-delimited table; a single non-numeric first row is
    treated as a header and skipped."""
    rows: list[list[float]] = []
    linenos: list[int] = []
    seen_content = False
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = _parse_row(line, lineno)
        except ParseError:
            if not seen_content:
                seen_content = True  # header row
                continue
            raise
        seen_content = True
        rows.append(row)
        linenos.append(lineno)
    if not rows:
        raise ParseError("no data rows", line=1)
    width = len(rows[0])
    for r, ln in zip(rows, linenos):
        if len(r) != width:
            raise ParseError(f"expected {width} columns, found {len(r)}", line=ln)
    return np.asarray(rows, dtype=float)


def write_matrix_csv(path: str | Path, arr: np.ndarray, header: list[str] | None = None):
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    lines = []
    if header is not None:
        lines.append(",".join(header))
    for row in arr:
        lines.append(",".join(_fmt(x) for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Response files
# ---------------------------------------------------------------------------


def read_responses(path: str | Path, kind: MetricSpaceKind, *,
                   sqrt_compositions: bool = False,
                   unit_diagonal: bool = False) -> ObjectSet:
    """Read a response file for the given metric space.

    Distributions: first row is the probability grid, each further row one
    subject's quantile values.  Matrices: long format (subject,row,col,value,
    with header) or square blocks separated by blank lines.  Sphere: rows of
    coordinates, optionally square-root-transformed compositions.  Euclidean:
    numeric rows.
    """
    if kind is MetricSpaceKind.WASSERSTEIN2:
        table = read_matrix_csv(path)
        if table.shape[0] < 2:
            raise ParseError("need a probability-grid row plus at least one subject")
        probs = table[0]
        values = table[1:]
        if np.any(np.diff(probs) <= 0) or probs[0] < 0 or probs[-1] > 1:
            raise ParseError("first row must be a strictly increasing grid in [0, 1]",
                             line=1)
        if np.any(np.diff(values, axis=1) < -1e-10):
            bad = int(np.where(np.any(np.diff(values, axis=1) < -1e-10, axis=1))[0][0])
            raise ParseError("quantile values must be nondecreasing", line=bad + 2)
        return ObjectSet(kind, values, probs=probs)
    if kind is MetricSpaceKind.FROBENIUS:
        return _read_matrix_responses(path, unit_diagonal)
    table = read_matrix_csv(path)
    if kind is MetricSpaceKind.SPHERE_GEODESIC:
        if sqrt_compositions:
            if np.any(table < 0):
                raise ParseError("compositions must be nonnegative")
            sums = table.sum(axis=1)
            if np.any(sums <= 0):
                raise ParseError("compositions must have positive totals")
            table = np.sqrt(table / sums[:, None])
        norms = np.linalg.norm(table, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-8):
            raise ParseError("sphere rows must have unit norm "
                             "(or pass the sqrt-composition flag)")
        table = table / norms[:, None]
        return ObjectSet(kind, table)
    return ObjectSet(kind, table)


def _read_matrix_responses(path: str | Path, unit_diagonal: bool) -> ObjectSet:
    text = Path(path).read_text()
    first = text.lstrip().splitlines()[0] if text.strip() else ""
    if first.lower().replace(" ", "").startswith("subject,"):
        return _read_matrix_long(text, unit_diagonal)
    return _read_matrix_blocks(text, unit_diagonal)


def _read_matrix_long(text: str, unit_diagonal: bool) -> ObjectSet:
    entries: dict[int, dict[tuple[int, int], float]] = {}
    dim = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if lineno == 1 or not line.strip():
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 4:
            raise ParseError("expected subject,row,col,value", line=lineno)
        try:
            subj, row, col = int(fields[0]), int(fields[1]), int(fields[2])
            value = float(fields[3])
        except ValueError:
            raise ParseError("bad long-format entry", line=lineno)
        entries.setdefault(subj, {})[(row, col)] = value
        dim = max(dim, row + 1, col + 1)
    if not entries:
        raise ParseError("no matrix entries")
    mats = []
    for subj in sorted(entries):
        m = np.zeros((dim, dim))
        seen = np.zeros((dim, dim), dtype=bool)
        for (r, c), v in entries[subj].items():
            m[r, c] = v
            seen[r, c] = True
            if not seen[c, r]:
                m[c, r] = v
        mats.append(m)
    values = np.stack(mats)
    _check_sym(values)
    return ObjectSet(MetricSpaceKind.FROBENIUS, values, unit_diagonal=unit_diagonal)


def _read_matrix_blocks(text: str, unit_diagonal: bool) -> ObjectSet:
    blocks: list[list[list[float]]] = [[]]
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            if blocks[-1]:
                blocks.append([])
            continue
        blocks[-1].append(_parse_row(line, lineno))
    blocks = [b for b in blocks if b]
    if not blocks:
        raise ParseError("no matrix blocks")
    dim = len(blocks[0])
    mats = []
    for b in blocks:
        if len(b) != dim or any(len(r) != dim for r in b):
            raise ParseError(f"matrix blocks must all be {dim}x{dim}")
        mats.append(np.asarray(b))
    values = np.stack(mats)
    _check_sym(values)
    return ObjectSet(MetricSpaceKind.FROBENIUS, values, unit_diagonal=unit_diagonal)


def _check_sym(values: np.ndarray):
    if np.max(np.abs(values - values.transpose(0, 2, 1))) > 1e-10:
        raise ParseError("matrix responses must be symmetric")


def write_responses(path: str | Path, objset: ObjectSet):
    """Write a response file in the layout `read_responses` expects."""
    if objset.kind is MetricSpaceKind.WASSERSTEIN2:
        table = np.vstack([objset.probs[None, :], objset.values])
        write_matrix_csv(path, table)
        return
    if objset.kind is MetricSpaceKind.FROBENIUS:
        lines = ["subject,row,col,value"]
        for i, mat in enumerate(objset.values):
            for r in range(mat.shape[0]):
                for c in range(r, mat.shape[1]):
                    lines.append(f"{i},{r},{c},{_fmt(mat[r, c])}")
        atomic_write_text(path, "\n".join(lines) + "\n")
        return
    write_matrix_csv(path, objset.values)


def pearson_correlation_matrix(signals: np.ndarray) -> SymMatrix:
    """Pearson correlation matrix of signal columns (one column per node)."""
    signals = np.asarray(signals, dtype=float)
    if signals.ndim != 2 or signals.shape[0] < 2:
        raise DimensionError("signals must be a (time x node) matrix")
    centered = signals - signals.mean(axis=0)
    denom = np.sqrt((centered**2).sum(axis=0))
    if np.any(denom <= 0):
        raise InvalidInputError("a signal column is constant")
    corr = (centered.T @ centered) / np.outer(denom, denom)
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return SymMatrix(corr, unit_diagonal=True)


# ---------------------------------------------------------------------------
# Result payloads (JSON)
# ---------------------------------------------------------------------------


def write_payload(path: str | Path, payload: dict):
    payload = dict(payload)
    payload.setdefault("schema_version", SCHEMA_VERSION)
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_payload(path: str | Path) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, column=exc.colno)
    if not isinstance(payload, dict) or "schema_version" not in payload:
        raise ParseError("payload must be a JSON object with a schema_version")
    return payload


def objset_to_jsonable(objset: ObjectSet) -> dict:
    out: dict = {"kind": objset.kind.value, "values": objset.values.tolist()}
    if objset.probs is not None:
        out["probs"] = objset.probs.tolist()
    if objset.unit_diagonal:
        out["unit_diagonal"] = True
    return out


def objset_from_jsonable(data: dict) -> ObjectSet:
    kind = metric_kind(data["kind"])
    probs = np.asarray(data["probs"], float) if "probs" in data else None
    return ObjectSet(kind, np.asarray(data["values"], float), probs=probs,
                     unit_diagonal=bool(data.get("unit_diagonal", False)))
