"""Finitely supported measures, empirical sampling and cost matrices."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, SizeExceeded

MAX_GRID_POINTS = 10**5
WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure on finitely many distinct points of R^d.

    Duplicate atoms are merged (weights summed, first-occurrence order kept)
    and zero-weight atoms are dropped. ``parent_index`` records, for measures
    drawn from a population, the population index of each atom.
    """

    atoms: np.ndarray
    weights: np.ndarray
    parent_index: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.ndim != 2 or atoms.shape[0] != weights.shape[0]:
            raise DimensionMismatch(
                f"{atoms.shape[0]} atoms but {weights.shape[0]} weights"
            )
        if weights.size == 0:
            raise ValueError("measure needs at least one atom")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        total = weights.sum()
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, expected 1")

        parent = self.parent_index
        _, first, inverse = np.unique(atoms, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.ravel()
        if first.size != atoms.shape[0]:
            order = np.argsort(first)
            rank = np.empty_like(order)
            rank[order] = np.arange(order.size)
            merged = np.zeros(first.size)
            np.add.at(merged, rank[inverse], weights)
            atoms = atoms[first[order]]
            weights = merged
            if parent is not None:
                parent = np.asarray(parent)[first[order]]
        keep = weights > 0
        if not np.all(keep):
            atoms, weights = atoms[keep], weights[keep]
            if parent is not None:
                parent = np.asarray(parent)[keep]
        weights = weights / weights.sum()
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        if parent is not None:
            parent = np.asarray(parent, dtype=np.intp)
            parent.setflags(write=False)
            object.__setattr__(self, "parent_index", parent)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]


def uniform_grid_measure(d: int, k_per_axis: int, box: Sequence[float] = (0.0, 1.0)) -> DiscreteMeasure:
    if d < 1 or k_per_axis < 1:
        raise ValueError("d and k_per_axis must be >= 1")
    if k_per_axis**d > MAX_GRID_POINTS:
        raise SizeExceeded(f"{k_per_axis}^{d} grid points exceed {MAX_GRID_POINTS}")
    lo, hi = float(box[0]), float(box[1])
    axis = np.linspace(lo, hi, k_per_axis) if k_per_axis > 1 else np.array([lo])
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    atoms = np.stack([m.ravel() for m in mesh], axis=1)
    n = atoms.shape[0]
    return DiscreteMeasure(atoms, np.full(n, 1.0 / n))


# -- randomness ----------------------------------------------------------------

def make_rng(seed, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *keys)``.

    Replicate streams are addressed by index rather than drawn sequentially,
    so results do not depend on scheduling.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def draw_indices(pop: DiscreteMeasure, n: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. population atom indices."""
    return rng.choice(pop.size, size=n, p=pop.weights)


def empirical_from_counts(pop: DiscreteMeasure, counts: np.ndarray) -> DiscreteMeasure:
    counts = np.asarray(counts)
    idx = np.flatnonzero(counts)
    n = counts.sum()
    return DiscreteMeasure(pop.atoms[idx], counts[idx] / n, parent_index=idx)


def empirical_from_indices(pop: DiscreteMeasure, indices: np.ndarray) -> DiscreteMeasure:
    return empirical_from_counts(pop, np.bincount(indices, minlength=pop.size))


def sample_empirical(pop: DiscreteMeasure, n: int, seed) -> DiscreteMeasure:
    """Empirical measure of ``n`` i.i.d. draws; atoms never drawn are dropped."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    counts = rng.multinomial(n, pop.weights)
    return empirical_from_counts(pop, counts)


# -- costs ---------------------------------------------------------------------

@dataclass(frozen=True)
class Euclidean:
    name = "euclidean"

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        diff = np.asarray(x, dtype=float)[:, None, :] - np.asarray(y, dtype=float)[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True)
class SquaredCapped:
    """``min(|x - y|^2, cap)``, bounded by construction."""

    cap: float
    name = "squared_capped"

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        diff = np.asarray(x, dtype=float)[:, None, :] - np.asarray(y, dtype=float)[None, :, :]
        return np.minimum(np.sum(diff * diff, axis=-1), self.cap)


CostKind = Union[str, Euclidean, SquaredCapped, np.ndarray]


@dataclass(frozen=True, eq=False)
class CostMatrix:
    values: np.ndarray
    sup_norm: float
    lipschitz_x: Optional[float] = None
    lipschitz_y: Optional[float] = None
    kind: Optional[object] = None

    def submatrix(self, rows: np.ndarray, cols: np.ndarray) -> "CostMatrix":
        vals = self.values[np.ix_(rows, cols)]
        return CostMatrix(vals, float(np.max(np.abs(vals))), self.lipschitz_x, self.lipschitz_y, self.kind)

    def scaled(self, factor: float) -> "CostMatrix":
        vals = self.values * factor
        lx = None if self.lipschitz_x is None else self.lipschitz_x * abs(factor)
        ly = None if self.lipschitz_y is None else self.lipschitz_y * abs(factor)
        return CostMatrix(vals, float(np.max(np.abs(vals))), lx, ly, self.kind)


def cost_from_values(values) -> CostMatrix:
    vals = np.array(values, dtype=float)
    if vals.ndim != 2:
        raise DimensionMismatch("cost table must be two-dimensional")
    vals.setflags(write=False)
    return CostMatrix(vals, float(np.max(np.abs(vals))))


def resolve_cost_kind(kind: CostKind):
    if isinstance(kind, str):
        name, _, arg = kind.partition(":")
        if name == "euclidean":
            return Euclidean()
        if name == "squared_capped":
            _, _, val = arg.partition("=")
            return SquaredCapped(float(val or arg))
        raise ValueError(f"unknown cost kind {kind!r}")
    return kind


def build_cost(mu: DiscreteMeasure, nu: DiscreteMeasure, kind: CostKind = "euclidean") -> CostMatrix:
    """Dense cost matrix between the atoms of ``mu`` and ``nu``."""
    kind = resolve_cost_kind(kind)
    if isinstance(kind, (np.ndarray, list, tuple)):
        table = cost_from_values(kind)
        if table.values.shape != (mu.size, nu.size):
            raise DimensionMismatch(
                f"cost table {table.values.shape} vs measures ({mu.size}, {nu.size})"
            )
        return table
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"ambient dimensions differ: {mu.dim} vs {nu.dim}")
    vals = kind(mu.atoms, nu.atoms)
    vals.setflags(write=False)
    lip = 1.0 if isinstance(kind, Euclidean) else None
    return CostMatrix(vals, float(np.max(np.abs(vals))), lip, lip, kind)


# -- CSV ingestion ---------------------------------------------------------------

def _renormalize(weights: np.ndarray, source: str) -> np.ndarray:
    total = weights.sum()
    if not 0.999 <= total <= 1.001:
        raise ValueError(f"{source}: weights sum to {total!r}, outside [0.999, 1.001]")
    return weights / total


def read_measure_csv(path) -> DiscreteMeasure:
    """Columns ``x1..xd,weight`` with a header row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    if not header or header[-1] != "weight":
        raise ValueError(f"{path}: last column must be 'weight'")
    coords = [c for c in header[:-1]]
    if coords != [f"x{k + 1}" for k in range(len(coords))] or not coords:
        raise ValueError(f"{path}: coordinate columns must be x1..xd")
    body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    weights = _renormalize(body[:, -1], str(path))
    return DiscreteMeasure(body[:, :-1], weights)


def read_cost_csv(path) -> CostMatrix:
    """Cost table with a header row of column indices and a leading index column."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    body = [[float(v) for v in r[1:]] for r in rows[1:]]
    return cost_from_values(body)


def write_measure_csv(path, measure: DiscreteMeasure) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(measure.dim)] + ["weight"])
        for atom, wt in zip(measure.atoms, measure.weights):
            w.writerow([repr(float(a)) for a in atom] + [repr(float(wt))])
