"""Sampling grids, boundary selection, quadrature grids and CSV ingestion."""

from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(Exception):
    pass


class DegenerateRange(DataError):
    pass


class UnknownColumn(DataError, KeyError):
    pass


class MissingColumn(DataError, KeyError):
    pass


class RaggedRows(DataError):
    pass


class IoError(DataError, OSError):
    pass


@dataclass
class SampleSet:
    """Named columns of equal length plus named index subsets."""

    columns: dict[str, np.ndarray]
    id_sets: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.columns = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in self.columns.items()}
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise RaggedRows(f"columns have different lengths {sorted(lengths)}")
        self.id_sets = {k: np.asarray(v, dtype=np.int64).ravel() for k, v in self.id_sets.items()}
        n = self.n
        for name, ids in self.id_sets.items():
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise DataError(f"id set {name!r} has indices outside [0, {n})")
            if len(np.unique(ids)) != len(ids):
                raise DataError(f"id set {name!r} has repeated indices")

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __len__(self):
        return self.n

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise UnknownColumn(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    def with_columns(self, **cols) -> SampleSet:
        merged = dict(self.columns)
        merged.update(cols)
        return SampleSet(merged, dict(self.id_sets))


def _check_range(r: Sequence[float], label: str) -> tuple[float, float]:
    lo, hi = float(r[0]), float(r[1])
    if not hi > lo:
        raise DegenerateRange(f"{label} range [{lo}, {hi}] is empty")
    return lo, hi


def uniform_grid(x_range, y_range, nx: int, ny: int, names=("x", "y")) -> SampleSet:
    """Tensor-product grid, y outer and x inner (row-major)."""
    x0, x1 = _check_range(x_range, names[0])
    y0, y1 = _check_range(y_range, names[1])
    if nx < 2 or ny < 2:
        raise DegenerateRange("a uniform grid needs at least 2 points per direction")
    X, Y = np.meshgrid(np.linspace(x0, x1, nx), np.linspace(y0, y1, ny))
    return SampleSet({names[0]: X.ravel(), names[1]: Y.ravel()})


def boundary_ids(samples: SampleSet, edges: Mapping[str, Sequence], tol: float | None = None) -> np.ndarray:
    """Indices lying within ``tol`` of any listed edge.

    ``edges`` maps a column name to edge positions; ``"min"``/``"max"`` stand
    for the column's extremes. The default tolerance is 1e-9 of each column's
    range.
    """
    hit = np.zeros(samples.n, dtype=bool)
    for name, positions in edges.items():
        if name not in samples:
            raise UnknownColumn(name)
        col = samples[name]
        lo, hi = col.min(), col.max()
        t = 1e-9 * (hi - lo) if tol is None else tol
        if isinstance(positions, (str, int, float)):
            positions = [positions]
        for p in positions:
            edge = lo if p == "min" else hi if p == "max" else float(p)
            hit |= np.abs(col - edge) <= t
    return np.nonzero(hit)[0]


def interior_ids(samples: SampleSet, boundary: np.ndarray) -> np.ndarray:
    mask = np.ones(samples.n, dtype=bool)
    mask[boundary] = False
    return np.nonzero(mask)[0]


class QuadratureGrid(SampleSet):
    """Midpoint-rule points with cell measures in ``vol``.

    The first ``n*n`` rows are cell centres; the trailing ``4*n`` rows are edge
    points with zero measure, listed in ``id_sets["boundary"]``.
    """

    @property
    def weights(self) -> np.ndarray:
        return self.columns["vol"]

    @property
    def boundary_ids(self) -> np.ndarray:
        return self.id_sets["boundary"]

    @property
    def interior_ids(self) -> np.ndarray:
        return self.id_sets["interior"]

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(np.asarray(values).ravel() * self.weights))


def quadrature_grid(x_range, y_range, n: int) -> QuadratureGrid:
    x0, x1 = _check_range(x_range, "x")
    y0, y1 = _check_range(y_range, "y")
    if n < 2:
        raise DegenerateRange("a quadrature grid needs n >= 2")
    xc = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
    yc = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
    X, Y = np.meshgrid(xc, yc)
    area = (x1 - x0) * (y1 - y0)
    ex = np.concatenate([xc, xc, np.full(n, x0), np.full(n, x1)])
    ey = np.concatenate([np.full(n, y0), np.full(n, y1), yc, yc])
    cols = {
        "x": np.concatenate([X.ravel(), ex]),
        "y": np.concatenate([Y.ravel(), ey]),
        "vol": np.concatenate([np.full(n * n, area / (n * n)), np.zeros(4 * n)]),
    }
    ids = {"interior": np.arange(n * n), "boundary": np.arange(n * n, n * n + 4 * n)}
    return QuadratureGrid(cols, ids)


# -- CSV ------------------------------------------------------------------


def load_csv(path: str | Path, column_names: Sequence[str] | None = None) -> SampleSet:
    """Read a headed, comma-separated numeric table."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise RaggedRows(f"{path}: empty file") from None
        wanted = list(column_names) if column_names else header
        for name in wanted:
            if name not in header:
                raise MissingColumn(f"{path}: no column {name!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRows(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
            rows.append([float(v) for v in row])
    table = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return SampleSet({name: table[:, header.index(name)] for name in wanted})


def save_csv(path: str | Path, samples: SampleSet | Mapping[str, np.ndarray]) -> None:
    cols = samples.columns if isinstance(samples, SampleSet) else {
        k: np.asarray(v, dtype=np.float64).ravel() for k, v in samples.items()}
    names = list(cols)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for row in zip(*(cols[n] for n in names)):
                writer.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def save_grid_csv(path: str | Path, samples: SampleSet, predictions: Mapping[str, np.ndarray],
                  truth: Mapping[str, np.ndarray] | None = None) -> None:
    """Write inputs, predicted fields and (with ``truth``) per-field absolute errors."""
    cols = dict(samples.columns)
    for name, pred in predictions.items():
        cols[name] = np.asarray(pred, dtype=np.float64).ravel()
    for name, ref in (truth or {}).items():
        cols[f"abs_err_{name}"] = np.abs(cols[name] - np.asarray(ref, dtype=np.float64).ravel())
    save_csv(path, cols)
