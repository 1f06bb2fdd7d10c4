"""Finite metric measure spaces.

A :class:`SemiMetricSpace` is a finite set of weighted points with a dense
semimetric matrix. It is the discrete stand-in for a space with a measure
and an admissible (semi)metric: every operation downstream (transport,
epsilon-entropy, iterated metrics) consumes one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

WEIGHT_TOL = 1e-12
TRIANGLE_TOL = 1e-9
SYMMETRY_TOL = 1e-12


class SpaceError(ValueError):
    """Base class for invalid metric-space input."""


class BadWeights(SpaceError):
    pass


class NonSymmetric(SpaceError):
    pass


class NegativeDistance(SpaceError):
    pass


class TriangleViolation(SpaceError):
    def __init__(self, triple: tuple[int, int, int], excess: float):
        i, j, k = triple
        super().__init__(
            f"triangle inequality violated at ({i}, {j}, {k}): "
            f"d[{i}][{k}] exceeds d[{i}][{j}] + d[{j}][{k}] by {excess:.3g}"
        )
        self.triple = triple
        self.excess = excess


class DimensionMismatch(SpaceError):
    pass


class InconsistentZeroClasses(SpaceError):
    pass


class InvalidMeasure(SpaceError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def check_weights(weights, tol: float = WEIGHT_TOL) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise BadWeights("weights must be a non-empty vector")
    if not np.all(np.isfinite(w)):
        raise BadWeights("weights must be finite")
    if np.any(w < 0):
        raise BadWeights(f"negative weight {w.min():.3g}")
    if abs(w.sum() - 1.0) > tol:
        raise BadWeights(f"weights sum to {w.sum():.15g}, not 1")
    return w


def renormalize(weights) -> np.ndarray:
    """Scale a nonnegative vector so it sums to one."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0 or np.any(w < 0):
        raise BadWeights("cannot renormalize: need nonnegative weights with positive sum")
    return w / total


def worst_triangle_excess(dist: np.ndarray) -> tuple[float, tuple[int, int, int]]:
    """Largest amount by which ``d[i,k] > d[i,j] + d[j,k]``, with its triple."""
    n = dist.shape[0]
    worst = -np.inf
    triple = (0, 0, 0)
    for j in range(n):
        excess = dist - (dist[:, j, None] + dist[None, j, :])
        flat = int(np.argmax(excess))
        value = excess.flat[flat]
        if value > worst:
            worst = float(value)
            i, k = divmod(flat, n)
            triple = (i, j, k)
    return worst, triple


@dataclass(frozen=True, eq=False)
class SemiMetricSpace:
    """N weighted points with a symmetric, zero-diagonal distance matrix.

    Arrays are read-only after construction. Use :func:`build_space` to get
    full validation; the bare constructor only normalizes types.
    """

    weights: np.ndarray
    dist: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "dist", _frozen(self.dist))

    @property
    def n_points(self) -> int:
        return self.weights.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.n_points else 0.0

    def with_dist(self, dist: np.ndarray, label: str | None = None) -> "SemiMetricSpace":
        return SemiMetricSpace(self.weights, dist, self.label if label is None else label)

    def uniform_measure(self) -> "DiscreteMeasure":
        return DiscreteMeasure.from_dense(self.weights)


def build_space(
    weights,
    dist,
    tau_tri: float = TRIANGLE_TOL,
    label: str = "",
    check_triangle: bool = True,
) -> SemiMetricSpace:
    """Validate inputs and return a :class:`SemiMetricSpace`.

    The stored matrix is exactly symmetric (the mean of ``dist`` and its
    transpose) with an exact zero diagonal.
    """
    w = check_weights(weights)
    d = np.asarray(dist, dtype=float)
    if d.shape != (w.size, w.size):
        raise DimensionMismatch(f"dist has shape {d.shape}, weights have length {w.size}")
    if not np.all(np.isfinite(d)):
        raise SpaceError("distances must be finite")
    if np.any(d < 0):
        i, j = np.unravel_index(np.argmin(d), d.shape)
        raise NegativeDistance(f"d[{i}][{j}] = {d[i, j]:.3g} < 0")
    asym = np.abs(d - d.T)
    if asym.size and asym.max() > SYMMETRY_TOL:
        i, j = np.unravel_index(np.argmax(asym), d.shape)
        raise NonSymmetric(f"d[{i}][{j}] = {d[i, j]!r} but d[{j}][{i}] = {d[j, i]!r}")
    if np.any(np.abs(np.diag(d)) > SYMMETRY_TOL):
        raise SpaceError("diagonal must be zero")
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    if check_triangle and w.size > 2:
        excess, triple = worst_triangle_excess(d)
        if excess > tau_tri:
            raise TriangleViolation(triple, excess)
    return SemiMetricSpace(w, d, label)


@dataclass(frozen=True)
class Partition:
    """Map from point index to cell id ``0..k-1``; every id is used."""

    cell_of: tuple[int, ...]

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cell_of)
        object.__setattr__(self, "cell_of", cells)
        if not cells:
            raise SpaceError("empty partition")
        used = set(cells)
        if min(used) < 0 or used != set(range(len(used))):
            raise SpaceError("cell ids must cover 0..k-1 exactly")

    @property
    def k(self) -> int:
        return max(self.cell_of) + 1

    def cell_masses(self, weights) -> np.ndarray:
        return np.bincount(np.asarray(self.cell_of), weights=np.asarray(weights, float),
                           minlength=self.k)

    @classmethod
    def from_labels(cls, labels: Sequence) -> "Partition":
        """Relabel arbitrary hashable labels to ``0..k-1`` by first occurrence."""
        ids: dict = {}
        return cls(tuple(ids.setdefault(lab, len(ids)) for lab in labels))


def join(p: Partition, q: Partition) -> Partition:
    """Common refinement of two partitions of the same points."""
    if len(p.cell_of) != len(q.cell_of):
        raise DimensionMismatch("partitions cover different point sets")
    return Partition.from_labels(list(zip(p.cell_of, q.cell_of)))


def partition_semimetric(p: Partition, weights, label: str = "") -> SemiMetricSpace:
    cells = np.asarray(p.cell_of)
    if cells.size != np.asarray(weights).size:
        raise DimensionMismatch("partition and weights differ in length")
    dist = (cells[:, None] != cells[None, :]).astype(float)
    return build_space(weights, dist, label=label or f"partition(k={p.k})",
                       check_triangle=False)


def sup_combine(spaces: Sequence[SemiMetricSpace]) -> SemiMetricSpace:
    """Pointwise maximum of semimetrics over the same weighted points."""
    if not spaces:
        raise DimensionMismatch("need at least one space")
    first = spaces[0]
    for s in spaces[1:]:
        if s.n_points != first.n_points or not np.array_equal(s.weights, first.weights):
            raise DimensionMismatch("spaces must share points and weights")
    dist = first.dist
    for s in spaces[1:]:
        dist = np.maximum(dist, s.dist)
    return SemiMetricSpace(first.weights, dist, "sup(" + ",".join(s.label for s in spaces) + ")")


def quotient_zero_classes(
    s: SemiMetricSpace, tau_zero: float = 1e-12
) -> tuple[SemiMetricSpace, np.ndarray]:
    """Merge points at distance ``<= tau_zero`` (transitive closure).

    Returns the quotient space and the map old index -> new index. Classes
    are numbered by their smallest member and represented by it.
    """
    adj = csr_matrix(s.dist <= tau_zero)
    _, labels = connected_components(adj, directed=False)
    # renumber by first occurrence so the map is order-preserving
    order: dict[int, int] = {}
    index_map = np.array([order.setdefault(int(c), len(order)) for c in labels])
    k = len(order)
    reps = np.array([int(np.flatnonzero(index_map == c)[0]) for c in range(k)])
    qdist = s.dist[np.ix_(reps, reps)]
    implied = qdist[np.ix_(index_map, index_map)]
    gap = np.abs(s.dist - implied)
    if gap.size and gap.max() > 2 * tau_zero:
        i, j = np.unravel_index(np.argmax(gap), gap.shape)
        raise InconsistentZeroClasses(
            f"points {i} and {j} disagree with their class representatives by {gap[i, j]:.3g}"
        )
    weights = np.bincount(index_map, weights=s.weights, minlength=k)
    q = SemiMetricSpace(weights, qdist, s.label)
    return q, index_map


def sample_distance_matrix(s: SemiMetricSpace, k: int, rng: np.random.Generator) -> np.ndarray:
    """Distance matrix among ``k`` points drawn i.i.d. from the weights."""
    if k < 1:
        raise ValueError("k must be >= 1")
    idx = rng.choice(s.n_points, size=k, p=s.weights)
    return s.dist[np.ix_(idx, idx)]


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Masses on a subset of the points of some space."""

    support: tuple[int, ...]
    masses: np.ndarray = field(repr=False)

    def __post_init__(self):
        support = tuple(int(i) for i in self.support)
        masses = np.asarray(self.masses, dtype=float)
        if len(support) != masses.size or masses.ndim != 1:
            raise InvalidMeasure("support and masses differ in length")
        if len(set(support)) != len(support):
            raise InvalidMeasure("support indices must be distinct")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise InvalidMeasure("masses must be finite and nonnegative")
        if abs(masses.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidMeasure(f"masses sum to {masses.sum():.15g}, not 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "masses", _frozen(masses))

    @classmethod
    def from_dense(cls, vec) -> "DiscreteMeasure":
        v = np.asarray(vec, dtype=float)
        idx = np.flatnonzero(v > 0)
        return cls(tuple(idx.tolist()), v[idx])

    @classmethod
    def delta(cls, i: int) -> "DiscreteMeasure":
        return cls((i,), np.ones(1))

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[list(self.support)] = self.masses
        return out

    def check_on(self, s: SemiMetricSpace) -> None:
        if self.support and (min(self.support) < 0 or max(self.support) >= s.n_points):
            raise InvalidMeasure("support index outside the space")


# -- plain-text matrix format ------------------------------------------------

def format_space(s: SemiMetricSpace) -> str:
    lines = [str(s.n_points), " ".join(repr(float(w)) for w in s.weights)]
    lines += [" ".join(repr(float(x)) for x in row) for row in s.dist]
    return "\n".join(lines) + "\n"


def parse_space(text: str, tau_tri: float = TRIANGLE_TOL) -> SemiMetricSpace:
    tokens = text.split()
    if not tokens:
        raise SpaceError("empty space file")
    n = int(tokens[0])
    values = np.array(tokens[1:], dtype=float)
    if values.size != n + n * n:
        raise DimensionMismatch(f"expected {n + n * n} numbers after n={n}, got {values.size}")
    return build_space(values[:n], values[n:].reshape(n, n), tau_tri=tau_tri)


def read_space(path: str | Path, tau_tri: float = TRIANGLE_TOL) -> SemiMetricSpace:
    return parse_space(Path(path).read_text(), tau_tri)


def write_space(s: SemiMetricSpace, path: str | Path) -> None:
    Path(path).write_text(format_space(s))
