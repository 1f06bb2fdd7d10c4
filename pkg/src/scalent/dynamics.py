"""Measure-preserving systems and the iteration of metrics under them.

A system is sampled once into a :class:`SampledOrbitSpace`: N points drawn
from the invariant measure, each carrying enough of its orbit that the
pullback metrics ``rho(T^i x, T^i y)`` for ``i < n_max`` are computed
without resampling. Uniform, average and p-average iterates are then
pointwise reductions over those pullbacks.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .mm_space import SemiMetricSpace

ROTATION_BITS = 52
SYMBOLIC_METRICS = ("cylinder", "hamming", "partition")
CIRCLE_METRICS = ("circle", "warped-circle", "partition")
DEFAULT_RADIUS = {"cylinder": 16, "hamming": 16, "partition": 1,
                  "circle": 0, "warped-circle": 0}


class DynamicsError(ValueError):
    pass


class WindowTooSmall(DynamicsError):
    pass


class SpecMismatch(DynamicsError):
    pass


class StepOutOfRange(DynamicsError):
    pass


class BadExponent(DynamicsError):
    pass


class MaximalPath(DynamicsError):
    pass


# -- systems -----------------------------------------------------------------

@dataclass(frozen=True)
class SystemModel:
    """A measure-preserving system described by its kind and parameters.

    Build instances with :func:`bernoulli`, :func:`markov`, :func:`rotation`,
    :func:`pascal_adic` or :func:`tt_inverse`.
    """

    kind: str
    params: tuple = ()

    def param(self, name, default=None):
        return dict(self.params).get(name, default)

    @property
    def metrics(self) -> tuple[str, ...]:
        if self.kind in ("bernoulli", "markov", "pascal_adic"):
            return SYMBOLIC_METRICS
        if self.kind == "rotation":
            return CIRCLE_METRICS
        return ("hamming", "partition")

    def describe(self) -> str:
        if self.kind == "bernoulli":
            return "bernoulli(" + ",".join(f"{p:g}" for p in self.param("probs")) + ")"
        if self.kind == "markov":
            rows = ";".join(",".join(f"{x:g}" for x in r) for r in self.param("matrix"))
            return f"markov([{rows}])"
        if self.kind == "rotation":
            return f"rotation({self.param('alpha'):.15g})"
        if self.kind == "pascal_adic":
            return f"pascal_adic(depth={self.param('depth')})"
        return f"tt_inverse(d={self.param('d')})"


def _check_probs(probs) -> tuple[float, ...]:
    p = np.asarray(probs, float)
    if p.ndim != 1 or p.size < 1 or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
        raise DynamicsError(f"invalid probability vector {probs!r}")
    return tuple(float(x) for x in p)


def bernoulli(probs: Sequence[float]) -> SystemModel:
    return SystemModel("bernoulli", (("probs", _check_probs(probs)),))


def stationary_vector(matrix) -> np.ndarray:
    """Unique stationary distribution of an irreducible stochastic matrix."""
    P = np.asarray(matrix, float)
    k = P.shape[0]
    A = np.vstack([P.T - np.eye(k), np.ones(k)])
    rhs = np.r_[np.zeros(k), 1.0]
    if np.linalg.matrix_rank(A) < k:
        raise DynamicsError("stationary vector is not unique; pass pi explicitly")
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return pi


def markov(matrix, pi=None) -> SystemModel:
    P = np.asarray(matrix, float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0):
        raise DynamicsError("transition matrix must be square and nonnegative")
    if np.abs(P.sum(axis=1) - 1).max() > 1e-12:
        raise DynamicsError("transition matrix rows must sum to 1")
    pi = stationary_vector(P) if pi is None else np.asarray(pi, float)
    _check_probs(pi)
    if np.abs(pi @ P - pi).max() > 1e-10:
        raise DynamicsError("pi is not stationary for the matrix")
    return SystemModel("markov", (("matrix", tuple(map(tuple, P.tolist()))),
                                  ("pi", tuple(pi.tolist()))))


def rotation(alpha: float) -> SystemModel:
    alpha = float(alpha) % 1.0
    approx = Fraction(alpha).limit_denominator(10**6)
    if abs(alpha - float(approx)) < 1e-14:
        raise DynamicsError(f"rotation number {alpha!r} is rational to working precision ({approx})")
    return SystemModel("rotation", (("alpha", alpha),))


GOLDEN_CONJUGATE = (5 ** 0.5 - 1) / 2


def pascal_adic(depth: int = 64) -> SystemModel:
    if depth < 2:
        raise DynamicsError("pascal_adic needs depth >= 2")
    return SystemModel("pascal_adic", (("depth", int(depth)),))


def tt_inverse(d: int = 1) -> SystemModel:
    if d not in (1, 2, 3):
        raise DynamicsError("tt_inverse supports d in {1, 2, 3}")
    return SystemModel("tt_inverse", (("d", int(d)),))


def identity_system(k: int = 2) -> SystemModel:
    """The identity map, as a Markov chain that never leaves its start state."""
    return markov(np.eye(k), np.full(k, 1.0 / k))


# -- the Pascal adic ---------------------------------------------------------

def pascal_successor(word) -> tuple[int, ...]:
    """Successor of a finite path in the Pascal graph's adic order.

    Find the first ``i`` with ``(w[i], w[i+1]) == (1, 0)``, swap that pair to
    ``(0, 1)`` and rewrite ``w[0:i]`` as its ones followed by its zeros.
    Words without a ``(1, 0)`` pattern are maximal.
    """
    w = [int(b) for b in word]
    for i in range(len(w) - 1):
        if w[i] == 1 and w[i + 1] == 0:
            ones = sum(w[:i])
            return tuple([1] * ones + [0] * (i - ones) + [0, 1] + w[i + 2:])
    raise MaximalPath(f"{tuple(w)} is maximal in the adic order")


def _pascal_step(words: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized successor; returns (new words, mask of maximal rows)."""
    n, D = words.shape
    pat = (words[:, :-1] == 1) & (words[:, 1:] == 0)
    has = pat.any(axis=1)
    i = np.argmax(pat, axis=1)
    out = words.copy()
    cols = np.arange(D)[None, :]
    prefix = cols < i[:, None]
    ones = np.where(prefix, words, 0).sum(axis=1)
    rewritten = np.where(cols < ones[:, None], 1, 0)
    out = np.where(prefix, rewritten, out)
    rows = np.flatnonzero(has)
    out[rows, i[rows]] = 0
    out[rows, i[rows] + 1] = 1
    out[~has] = words[~has]
    return out.astype(words.dtype), ~has


# -- sampling ----------------------------------------------------------------

@dataclass
class OrbitPoints:
    """Sampled points with whatever orbit data their system needs."""

    system: SystemModel
    n_max: int
    radius: int
    data: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return next(iter(self.data.values())).shape[0]


def _sample_markov_paths(P, pi, N, W, rng):
    P = np.asarray(P, float)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    out = np.empty((N, W), dtype=np.int8)
    out[:, 0] = rng.choice(len(pi), size=N, p=np.asarray(pi) / np.sum(pi))
    u = rng.random((N, W))
    for t in range(1, W):
        prev = out[:, t - 1]
        out[:, t] = (u[:, t, None] > cum[prev]).sum(axis=1)
    return out


def sample_points(m: SystemModel, N: int, rng: np.random.Generator, n_max: int = 1,
                  radius: int = 16, window: int | None = None) -> OrbitPoints:
    """Draw ``N`` i.i.d. points from the invariant measure of ``m``.

    Symbolic points are windows of ``window >= n_max + radius`` coordinates;
    rotation points are fixed-point reals; Pascal points are binary paths;
    ``tt_inverse`` points are (scenery patch, walk increments) pairs.
    """
    if N < 2:
        raise DynamicsError("need N >= 2 sample points")
    need = n_max + radius
    if window is None:
        window = need
    if window < need:
        raise WindowTooSmall(f"window {window} < n_max + radius = {need}")
    pts = OrbitPoints(m, n_max, radius)
    if m.kind == "bernoulli":
        probs = m.param("probs")
        pts.data["words"] = rng.choice(len(probs), size=(N, window), p=probs).astype(np.int8)
    elif m.kind == "markov":
        pts.data["words"] = _sample_markov_paths(m.param("matrix"), m.param("pi"), N, window, rng)
    elif m.kind == "rotation":
        pts.data["fixed"] = rng.integers(0, 2**ROTATION_BITS, size=N, dtype=np.int64)
    elif m.kind == "pascal_adic":
        D = m.param("depth")
        words = rng.integers(0, 2, size=(N, D), dtype=np.int8)
        # resample paths that reach the maximal path within n_max steps
        for _ in range(1000):
            cur = words
            bad = np.zeros(N, bool)
            for _ in range(n_max - 1):
                cur, maximal = _pascal_step(cur)
                bad |= maximal
            if not bad.any():
                break
            words[bad] = rng.integers(0, 2, size=(int(bad.sum()), D), dtype=np.int8)
        pts.data["words"] = words
    elif m.kind == "tt_inverse":
        d = m.param("d")
        R = n_max + radius + 1
        side = 2 * R + 1
        pts.data["scenery"] = rng.integers(0, 2, size=(N,) + (side,) * d, dtype=np.int8)
        steps = rng.integers(0, 2 * d, size=(N, n_max + 1))
        pts.data["steps"] = steps
    else:
        raise DynamicsError(f"unknown system kind {m.kind!r}")
    return pts


# -- metrics on orbit images -------------------------------------------------

def _pairwise_neq(cols: np.ndarray) -> np.ndarray:
    return cols[:, None] != cols[None, :]


def _symbolic_metric(words: np.ndarray, metric: str) -> np.ndarray:
    N, L = words.shape
    if metric == "partition":
        return _pairwise_neq(words[:, 0]).astype(float)
    if metric == "hamming":
        acc = np.zeros((N, N))
        for k in range(L):
            acc += _pairwise_neq(words[:, k])
        return acc / L
    if metric == "cylinder":
        dist = np.zeros((N, N))
        open_ = np.ones((N, N), bool)
        for k in range(L):
            hit = open_ & _pairwise_neq(words[:, k])
            dist[hit] = 2.0 ** -k
            open_ &= ~hit
        return dist
    raise SpecMismatch(f"metric {metric!r} is not defined for symbolic systems")


def _circle_metric(fixed: np.ndarray, metric: str) -> np.ndarray:
    M = np.int64(2**ROTATION_BITS)
    if metric == "partition":
        cell = fixed >= M // 2
        return _pairwise_neq(cell).astype(float)
    diff = np.mod(fixed[:, None] - fixed[None, :], M)
    arc = np.minimum(diff, M - diff).astype(float) / float(M)
    if metric == "circle":
        return arc
    if metric == "warped-circle":
        return np.sqrt(2.0 * arc)
    raise SpecMismatch(f"metric {metric!r} is not defined for rotations")


def _walk_positions(steps: np.ndarray, d: int) -> np.ndarray:
    """Positions (N, T+1, d) of walks starting at the origin."""
    N, T = steps.shape
    moves = np.zeros((N, T, d), dtype=np.int64)
    axis = steps // 2
    sign = np.where(steps % 2 == 0, 1, -1)
    for a in range(d):
        moves[:, :, a] = np.where(axis == a, sign, 0)
    pos = np.zeros((N, T + 1, d), dtype=np.int64)
    pos[:, 1:] = np.cumsum(moves, axis=1)
    return pos


def _tt_observation(pts: OrbitPoints, i: int) -> np.ndarray:
    """Scenery patch of the given radius around the walker at time i, plus its next step."""
    d = pts.system.param("d")
    scen = pts.data["scenery"]
    R = (scen.shape[1] - 1) // 2
    r = pts.radius
    pos = _walk_positions(pts.data["steps"][:, :i], d)[:, -1, :] if i else np.zeros((scen.shape[0], d), np.int64)
    offsets = np.stack(np.meshgrid(*([np.arange(-r, r + 1)] * d), indexing="ij"), -1).reshape(-1, d)
    N = scen.shape[0]
    idx = pos[:, None, :] + offsets[None, :, :] + R
    flat = scen.reshape(N, -1)
    lin = np.ravel_multi_index(tuple(idx[..., a] for a in range(d)), (2 * R + 1,) * d)
    readings = np.take_along_axis(flat, lin, axis=1)
    return np.concatenate([readings, pts.data["steps"][:, i:i + 1].astype(np.int8)], axis=1)


def image_distances(pts: OrbitPoints, metric: str, i: int) -> np.ndarray:
    """Matrix of ``rho(T^i x, T^i y)`` over the sampled points."""
    m = pts.system
    if metric not in m.metrics:
        raise SpecMismatch(f"metric {metric!r} is not available for {m.kind}")
    if m.kind in ("bernoulli", "markov"):
        L = max(pts.radius, 1) if metric != "partition" else 1
        return _symbolic_metric(pts.data["words"][:, i:i + L], metric)
    if m.kind == "rotation":
        M = np.int64(2**ROTATION_BITS)
        alpha = np.int64(round(m.param("alpha") * 2**ROTATION_BITS))
        shifted = np.mod(pts.data["fixed"] + np.int64(i) * alpha, M)
        return _circle_metric(shifted, metric)
    if m.kind == "pascal_adic":
        words = pts.data["words"]
        cache = pts.data.setdefault("_pascal_images", {0: words})
        last = max(k for k in cache if k <= i)
        cur = cache[last]
        for k in range(last, i):
            cur, _ = _pascal_step(cur)
        cache[i] = cur
        L = cur.shape[1] if metric != "partition" else 1
        return _symbolic_metric(cur[:, :L], metric)
    obs = _tt_observation(pts, i)
    return _symbolic_metric(obs, metric)


def base_metric(m: SystemModel, pts: OrbitPoints, metric: str) -> SemiMetricSpace:
    if metric not in m.metrics:
        raise SpecMismatch(f"metric {metric!r} is not available for {m.kind}")
    N = pts.size
    return SemiMetricSpace(np.full(N, 1.0 / N), image_distances(pts, metric, 0),
                           f"{m.describe()}:{metric}")


# -- orbit spaces and iterated metrics ---------------------------------------

class SampledOrbitSpace:
    """Sampled points of a system with lazily computed pullback metrics.

    Pullbacks are computed on demand; running sup/sum aggregates are
    extended incrementally so increasing ``n`` never recomputes a step.
    All public results are fresh read-only spaces.
    """

    def __init__(self, system: SystemModel, points: OrbitPoints, metric: str):
        self.system = system
        self.points = points
        self.metric = metric
        self.n_max = points.n_max
        self.base = base_metric(system, points, metric)
        self._lock = threading.Lock()
        self._done = 0
        self._sup = None
        self._sum = None
        self._psums: dict[float, np.ndarray] = {}
        self._snapshots: dict[tuple, np.ndarray] = {}

    @property
    def weights(self) -> np.ndarray:
        return self.base.weights

    def _check_step(self, i: int, upper: int) -> None:
        if not 0 <= i < upper:
            raise StepOutOfRange(f"step {i} outside [0, {upper})")

    def matrix(self, i: int) -> np.ndarray:
        self._check_step(i, self.n_max)
        if i == 0:
            return self.base.dist
        return image_distances(self.points, self.metric, i)

    def _aggregate(self, kind: str, n: int, p: float = 1.0) -> np.ndarray:
        if not 1 <= n <= self.n_max:
            raise StepOutOfRange(f"n = {n} outside [1, {self.n_max}]")
        key = (kind, n, p)
        with self._lock:
            if key in self._snapshots:
                return self._snapshots[key]
            if n < self._done or (kind == "p" and p not in self._psums and self._done):
                # restart the running aggregates from scratch
                self._done, self._sup, self._sum = 0, None, None
                self._psums = {}
            if kind == "p":
                self._psums.setdefault(p, None)
            while self._done < n:
                d = self.matrix(self._done)
                if self._sup is None:
                    self._sup = d.copy()
                    self._sum = d.copy()
                    for q in self._psums:
                        self._psums[q] = d ** q
                else:
                    np.maximum(self._sup, d, out=self._sup)
                    self._sum += d
                    for q in self._psums:
                        self._psums[q] += d ** q
                self._done += 1
            if kind == "sup":
                out = self._sup.copy()
            elif kind == "mean":
                out = self._sum / n
            else:
                out = (self._psums[p] / n) ** (1.0 / p)
            out.setflags(write=False)
            self._snapshots[key] = out
            return out

    def pullback(self, i: int) -> SemiMetricSpace:
        return self.base.with_dist(self.matrix(i), f"{self.base.label}@T^{i}")

    def uniform_iterate(self, n: int) -> SemiMetricSpace:
        if n == 1:
            return self.base
        return self.base.with_dist(self._aggregate("sup", n), f"{self.base.label}:uniform({n})")

    def average_iterate(self, n: int) -> SemiMetricSpace:
        if n == 1:
            return self.base
        return self.base.with_dist(self._aggregate("mean", n), f"{self.base.label}:average({n})")

    def p_average_iterate(self, n: int, p: float) -> SemiMetricSpace:
        if not p >= 1:
            raise BadExponent(f"p must be >= 1, got {p}")
        if p == 1:
            return self.average_iterate(n)
        if n == 1:
            return self.base
        return self.base.with_dist(self._aggregate("p", n, float(p)), f"{self.base.label}:p{p:g}({n})")

    def iterate(self, kind: str, n: int) -> SemiMetricSpace:
        """Dispatch on ``uniform``, ``average`` or ``p-average:<p>``."""
        if kind == "uniform":
            return self.uniform_iterate(n)
        if kind == "average":
            return self.average_iterate(n)
        if kind.startswith("p-average"):
            return self.p_average_iterate(n, float(kind.split(":", 1)[1]))
        raise DynamicsError(f"unknown metric kind {kind!r}")


def sample_orbit_space(system: SystemModel, N: int, n_max: int, metric: str,
                       rng: np.random.Generator, radius: int | None = None) -> SampledOrbitSpace:
    if metric not in system.metrics:
        raise SpecMismatch(f"metric {metric!r} is not available for {system.kind}")
    if radius is None:
        radius = DEFAULT_RADIUS.get(metric, 4)
        if system.kind == "tt_inverse":
            radius = 2
    pts = sample_points(system, N, rng, n_max=n_max, radius=radius)
    return SampledOrbitSpace(system, pts, metric)


def pullback(s: SampledOrbitSpace, i: int) -> SemiMetricSpace:
    return s.pullback(i)


def uniform_iterate(s: SampledOrbitSpace, n: int) -> SemiMetricSpace:
    return s.uniform_iterate(n)


def average_iterate(s: SampledOrbitSpace, n: int) -> SemiMetricSpace:
    return s.average_iterate(n)


def p_average_iterate(s: SampledOrbitSpace, n: int, p: float) -> SemiMetricSpace:
    return s.p_average_iterate(n, p)


def symbol_sequence(pts: OrbitPoints, n: int, cells: int = 2) -> np.ndarray:
    """Generator-partition symbols of ``T^i x`` for ``i < n`` (shape ``(N, n)``).

    Shifts use coordinate 0, rotations use ``cells`` equal arcs, the Pascal
    adic uses the first bit of the path.
    """
    m = pts.system
    if m.kind in ("bernoulli", "markov"):
        return pts.data["words"][:, :n].astype(np.int64)
    if m.kind == "rotation":
        M = 2**ROTATION_BITS
        alpha = np.int64(round(m.param("alpha") * M))
        out = np.empty((pts.size, n), dtype=np.int64)
        for i in range(n):
            x = np.mod(pts.data["fixed"] + np.int64(i) * alpha, np.int64(M))
            out[:, i] = (x.astype(float) / M * cells).astype(np.int64)
        return out
    if m.kind == "pascal_adic":
        out = np.empty((pts.size, n), dtype=np.int64)
        cur = pts.data["words"]
        for i in range(n):
            out[:, i] = cur[:, 0]
            cur, _ = _pascal_step(cur)
        return out
    return pts.data["steps"][:, :n].astype(np.int64)
