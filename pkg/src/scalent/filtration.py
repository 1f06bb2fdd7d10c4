"""Finite decreasing filtrations and the Kantorovich iteration of metrics.

A filtration of depth D is stored as a tree: level 0 is a finite metric
measure space, and each cell of level j carries a conditional distribution
over cells of level j - 1. The metric on level j is the Kantorovich distance
between those conditional distributions, computed with respect to the
metric already built on level j - 1.

Levels with many distinct cells are quantized: cells whose children have the
same representatives are merged exactly. If more than ``max_cells`` remain,
the level measure is replaced by the empirical measure of ``max_cells``
mass-weighted draws, and every cell is indexed by its nearest drawn cell.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .entropy import epsilon_entropy
from .mm_space import SemiMetricSpace, build_space
from .scaling import FitError, fit_class
from .transport import transport_cost

DEFAULT_MAX_CELLS = 1024


class FiltrationError(ValueError):
    pass


class TooShallow(FiltrationError):
    pass


@dataclass
class FiltrationTree:
    """Level-0 space plus per-level child tables.

    ``children[j - 1]`` has shape ``(n_j, k_j)``: the level-(j-1) cells below
    each level-j cell. ``child_weights[j - 1]`` gives the conditional masses
    (rows sum to one) or is ``None`` for uniform conditionals.
    ``top_masses`` is the measure on the top level.
    """

    base: SemiMetricSpace
    children: list[np.ndarray]
    top_masses: np.ndarray
    child_weights: list[np.ndarray | None] = field(default_factory=list)

    def __post_init__(self):
        self.children = [np.asarray(c, dtype=np.int64) for c in self.children]
        if not self.child_weights:
            self.child_weights = [None] * len(self.children)
        if len(self.child_weights) != len(self.children):
            raise FiltrationError("child_weights must match children level by level")
        sizes = [self.base.n_points] + [c.shape[0] for c in self.children]
        for j, c in enumerate(self.children, start=1):
            if c.ndim != 2 or c.min() < 0 or c.max() >= sizes[j - 1]:
                raise FiltrationError(f"level {j} children do not index level {j - 1}")
            w = self.child_weights[j - 1]
            if w is not None and (w.shape != c.shape or np.abs(w.sum(axis=1) - 1).max() > 1e-12):
                raise FiltrationError(f"level {j} conditional weights are not row-stochastic")
        masses = self.masses()
        if np.abs(masses[0] - self.base.weights).max() > 1e-9:
            raise FiltrationError("level-0 weights disagree with the pushed-down top measure")

    @property
    def depth(self) -> int:
        return len(self.children)

    def to_json(self) -> str:
        doc = {
            "base": {"label": self.base.label, "weights": self.base.weights.tolist(),
                     "dist": self.base.dist.tolist()},
            "levels": [{"children": c.tolist(), "weights": None if w is None else np.asarray(w).tolist()}
                       for c, w in zip(self.children, self.child_weights)],
            "top_masses": np.asarray(self.top_masses, float).tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "FiltrationTree":
        doc = json.loads(text)
        b = doc["base"]
        base = build_space(np.array(b["weights"]), np.array(b["dist"]), label=b.get("label", ""))
        return cls(base, [np.array(lv["children"]) for lv in doc["levels"]], np.array(doc["top_masses"]),
                   [None if lv["weights"] is None else np.array(lv["weights"]) for lv in doc["levels"]])

    def masses(self) -> list[np.ndarray]:
        """Measures on every level, pushed down from the top."""
        out = [np.asarray(self.top_masses, float)]
        for j in range(self.depth, 0, -1):
            kids = self.children[j - 1]
            w = self.child_weights[j - 1]
            share = out[0][:, None] * (w if w is not None else np.full(kids.shape, 1.0 / kids.shape[1]))
            n_below = self.base.n_points if j == 1 else self.children[j - 2].shape[0]
            out.insert(0, np.bincount(kids.ravel(), weights=share.ravel(), minlength=n_below))
        return out


@dataclass
class FiltrationLevels:
    """Quantized metric measure space for each level, bottom (0) to top."""

    spaces: list[SemiMetricSpace]
    label: str = ""

    @property
    def diameters(self) -> np.ndarray:
        return np.array([s.diameter for s in self.spaces])

    @property
    def sizes(self) -> list[int]:
        return [s.n_points for s in self.spaces]


def uniform_w1(prev: np.ndarray, a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Kantorovich distances between uniform measures on k points each.

    Rows of ``a`` (shape ``(U, k)``) and ``b`` (``(R, k)``) index points of
    a space with distance matrix ``prev``. Between two uniform measures with
    equal support sizes some optimal plan is a permutation, so the minimum
    over the ``k!`` matchings is exact.
    """
    k = a.shape[1]
    perms = list(itertools.permutations(range(k)))
    out = np.empty((a.shape[0], b.shape[0]))
    for lo in range(0, a.shape[0], chunk):
        aa = a[lo:lo + chunk]
        best = np.full((aa.shape[0], b.shape[0]), np.inf)
        for p in perms:
            cost = np.zeros_like(best)
            for t in range(k):
                cost += prev[aa[:, t][:, None], b[:, p[t]][None, :]]
            np.minimum(best, cost / k, out=best)
        out[lo:lo + chunk] = best
    return out


def _general_w1(prev: np.ndarray, a: np.ndarray, wa: np.ndarray, b: np.ndarray, wb: np.ndarray) -> np.ndarray:
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = transport_cost(prev[np.ix_(a[i], b[j])], wa[i], wb[j])
    return out


def quantize_level(prev: np.ndarray, child_ids: np.ndarray, child_w: np.ndarray | None,
                   masses: np.ndarray, max_cells: int, rng: np.random.Generator):
    """Distances among level representatives and the cell-to-representative map.

    Returns ``(dist, rep_masses, cell_to_rep)``.
    """
    live = masses > 0
    cells = np.flatnonzero(live)
    ids = child_ids[cells]
    if child_w is None:
        sig = np.sort(ids, axis=1)
        uniq, inverse = np.unique(sig, axis=0, return_inverse=True)
        uw = None
    else:
        key = np.concatenate([ids, child_w[cells]], axis=1)
        _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
        uniq, uw = ids[first], child_w[cells][first]
    inverse = inverse.ravel()
    umass = np.bincount(inverse, weights=masses[cells], minlength=len(uniq))

    def w1(ia, ib):
        if uw is None:
            return uniform_w1(prev, uniq[ia], uniq[ib])
        return _general_w1(prev, uniq[ia], uw[ia], uniq[ib], uw[ib])

    if len(uniq) <= max_cells:
        reps = np.arange(len(uniq))
        assign = reps
        rep_masses = umass
    else:
        # the level measure becomes an empirical sample; the nearest
        # representative only serves to index cells from the level above
        draws = rng.choice(len(uniq), size=max_cells, replace=True, p=umass / umass.sum())
        reps, counts = np.unique(draws, return_counts=True)
        assign = reps[np.argmin(w1(np.arange(len(uniq)), reps), axis=1)]
        assign[reps] = reps
        rep_masses = counts / counts.sum()
    dist = w1(reps, reps)
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    slot = np.full(len(uniq), -1)
    slot[reps] = np.arange(len(reps))
    rep_of_uniq = slot[assign]
    cell_to_rep = np.full(len(masses), -1, dtype=np.int64)
    cell_to_rep[cells] = rep_of_uniq[inverse]
    return dist, rep_masses, cell_to_rep


def kantorovich_iteration(tree: FiltrationTree, max_cells: int = DEFAULT_MAX_CELLS,
                          rng: np.random.Generator | None = None) -> FiltrationLevels:
    """Build the iterated metric on every level of ``tree``."""
    rng = np.random.default_rng(0) if rng is None else rng
    masses = tree.masses()
    spaces = [tree.base]
    prev = tree.base.dist
    rep = np.arange(tree.base.n_points)
    for j in range(1, tree.depth + 1):
        kids = rep[tree.children[j - 1]]
        dist, rm, rep = quantize_level(prev, kids, tree.child_weights[j - 1], masses[j], max_cells, rng)
        spaces.append(SemiMetricSpace(rm / rm.sum(), dist, f"level {j}"))
        prev = dist
    return FiltrationLevels(spaces, tree.base.label)


# -- concrete filtrations -----------------------------------------------------

def build_bernoulli_filtration(depth: int, branching: int = 2, probs=None,
                               metric: str = "cylinder") -> FiltrationTree:
    """Tail filtration of a Bernoulli shift truncated to ``depth + 1`` coordinates.

    Leaves are words of length ``depth + 1``; a level-j cell is a word with
    its first j letters forgotten, and its conditional is the law of the
    forgotten letter.
    """
    if depth < 1 or branching < 2:
        raise FiltrationError("need depth >= 1 and branching >= 2")
    probs = np.full(branching, 1.0 / branching) if probs is None else np.asarray(probs, float)
    L = depth + 1
    words = np.array(list(itertools.product(range(branching), repeat=L)), dtype=np.int64)
    neq = words[:, None, :] != words[None, :, :]
    if metric == "cylinder":
        first = np.where(neq.any(axis=2), np.argmax(neq, axis=2), L)
        dist = np.where(first < L, 2.0 ** -first.astype(float), 0.0)
    elif metric == "hamming":
        dist = neq.mean(axis=2)
    else:
        raise FiltrationError(f"unknown leaf metric {metric!r}")
    leaf_mass = np.prod(probs[words], axis=1)
    base = SemiMetricSpace(leaf_mass, dist, f"bernoulli filtration depth {depth}")
    children, weights = [], []
    uniform = np.allclose(probs, probs[0])
    for j in range(1, depth + 1):
        # a level-j cell is a word of length L - j; prepend each letter to get level j - 1
        n_j = branching ** (L - j)
        kids = np.arange(branching)[None, :] * n_j + np.arange(n_j)[:, None]
        children.append(kids)
        weights.append(None if uniform else np.tile(probs, (n_j, 1)))
    top = np.prod(probs[np.array(list(itertools.product(range(branching), repeat=L - depth)))], axis=1)
    return FiltrationTree(base, children, top, weights)


def _window_offsets(d: int, radius: int) -> np.ndarray:
    return np.stack(np.meshgrid(*([np.arange(-radius, radius + 1)] * d), indexing="ij"), -1).reshape(-1, d)


def _observation_space(d: int, radius: int) -> np.ndarray:
    """Distances between observations (increment, scenery window).

    The distance is the mean of the increment mismatch and the normalized
    Hamming distance between windows. Observation ``e * 2**w + code``
    packs increment ``e`` with the window bits ``code``.
    """
    w = (2 * radius + 1) ** d
    ids = np.arange(2 * d * 2 ** w)
    e, code = ids >> w, ids & (2 ** w - 1)
    bits = (code[:, None] >> np.arange(w)[None, :]) & 1
    ham = (bits[:, None, :] != bits[None, :, :]).mean(axis=2)
    return ((e[:, None] != e[None, :]).astype(float) + ham) / 2


def build_rwre_filtration(d: int, depth: int, M: int, rng: np.random.Generator,
                          max_cells: int = 512, window: int = 0) -> FiltrationLevels:
    """Tail filtration of the random walk in random scenery, built bottom up.

    A level-j cell is a scenery (one of ``M`` samples) with a walker
    position; its conditional is uniform over the ``2d`` previous
    positions. Level 0 holds observations: the last increment together with
    the scenery in a box of radius ``window`` around the walker. The top
    level holds the ``M`` sceneries with the walker at the origin.
    """
    if d not in (1, 2, 3) or depth < 1 or M < 2 or window < 0:
        raise FiltrationError("need d in {1, 2, 3}, depth >= 1, M >= 2 and window >= 0")
    if (2 * window + 1) ** d > 16:
        raise FiltrationError("observation window too large to enumerate")
    R = depth + window + 1
    side = 2 * R + 1
    scenery = rng.integers(0, 2, size=(M,) + (side,) * d, dtype=np.int64).reshape(M, -1)
    moves = np.zeros((2 * d, d), dtype=np.int64)
    for k in range(2 * d):
        moves[k, k // 2] = 1 if k % 2 == 0 else -1
    grid = _window_offsets(d, R)
    box = np.all(np.abs(grid) <= depth, axis=1)

    def flat(pos):
        return np.ravel_multi_index(tuple((pos + R).T), (side,) * d)

    # masses on (scenery, position) pushed down from the top
    masses = [None] * (depth + 1)
    top = np.zeros((M, side ** d))
    top[:, flat(np.zeros((1, d), np.int64))[0]] = 1.0 / M
    masses[depth] = top
    for j in range(depth, 0, -1):
        below = np.zeros_like(top)
        for mv in moves:
            src = np.flatnonzero(box & np.all(np.abs(grid - mv) <= depth, axis=1))
            below[:, flat(grid[src] - mv)] += masses[j][:, src] / (2 * d)
        masses[j - 1] = below

    offsets = _window_offsets(d, window)
    wbits = offsets.shape[0]
    obs_dist = _observation_space(d, window)
    obs_mass = np.zeros(obs_dist.shape[0])
    spaces = []
    rep = None
    prev = obs_dist
    for j in range(1, depth + 1):
        m_j = masses[j]
        live_m, live_p = np.nonzero(m_j)
        kids = np.empty((live_m.size, 2 * d), dtype=np.int64)
        for k, mv in enumerate(moves):
            back = grid[live_p] - mv
            if j == 1:
                code = np.zeros(live_m.size, dtype=np.int64)
                for t, off in enumerate(offsets):
                    code |= scenery[live_m, flat(back + off)] << t
                kids[:, k] = (k << wbits) | code
            else:
                kids[:, k] = rep[live_m, flat(back)]
        if j == 1:
            np.add.at(obs_mass, kids.ravel(), np.repeat(m_j[live_m, live_p], 2 * d) / (2 * d))
            seen = np.flatnonzero(obs_mass > 0)
            spaces.append(SemiMetricSpace(obs_mass[seen], obs_dist[np.ix_(seen, seen)], "observations"))
        dist, rm, cell_rep = quantize_level(prev, kids, None, m_j[live_m, live_p], max_cells, rng)
        rep = np.full(m_j.shape, -1, dtype=np.int64)
        rep[live_m, live_p] = cell_rep
        spaces.append(SemiMetricSpace(rm / rm.sum(), dist, f"rwre d={d} level {j}"))
        prev = dist
    return FiltrationLevels(spaces, f"rwre d={d} depth={depth} M={M}")


# -- diagnostics --------------------------------------------------------------

@dataclass(frozen=True)
class StandardnessVerdict:
    label: str  # "standard-like", "nonstandard-like" or "inconclusive"
    diameters: tuple[float, ...]
    final_ratio: float
    slope: float
    p_value: float
    fitted_decline: float
    start: int


MIN_DECLINE = 0.10


def standardness_diagnostic(diameters, tau_contract: float = 0.1, alpha: float = 0.05,
                            start: int = 0) -> StandardnessVerdict:
    """Classify a diameter sequence by contraction and trend.

    Only ``diameters[start:]`` is used; pass ``start=1`` for iterated
    sequences whose level 0 is the raw base metric.

    Standard-like: monotone decrease over the last half of the levels and a
    final diameter below ``tau_contract`` times the initial one.
    Nonstandard-like: final diameter at least 0.2 times the initial one and
    no decreasing trend. The trend is an OLS fit of log-diameter on level;
    it counts as decreasing when the slope is negative at one-sided level
    ``alpha`` and the fitted decline across the levels exceeds 10%.
    """
    diam = np.asarray(diameters, float)[start:]
    if diam.size < 4:
        raise TooShallow(f"need at least 4 levels, got {diam.size}")
    ratio = float(diam[-1] / diam[0]) if diam[0] > 0 else 0.0
    half = diam[diam.size // 2:]
    monotone = bool(np.all(np.diff(half) < 0))
    slope, p_one, decline = 0.0, 1.0, 0.0
    if np.all(diam > 0):
        fit = stats.linregress(np.arange(diam.size), np.log(diam))
        slope = float(fit.slope)
        if fit.stderr > 0:
            p_one = float(stats.t.cdf(slope / fit.stderr, diam.size - 2))
        else:
            p_one = 0.0 if slope < 0 else 1.0
        decline = 1.0 - math.exp(min(slope, 0.0) * (diam.size - 1))
    decreasing = p_one < alpha and decline > MIN_DECLINE
    if monotone and ratio < tau_contract:
        label = "standard-like"
    elif ratio >= 0.2 and not decreasing:
        label = "nonstandard-like"
    else:
        label = "inconclusive"
    return StandardnessVerdict(label, tuple(diam.tolist()), ratio, slope, p_one, decline, start)


@dataclass
class FiltrationScalingReport:
    levels: list[int]
    eps_values: list[float]
    H: np.ndarray
    fit: object  # ScalingClassFit or the FitError raised
    theta_interval: tuple[float, float] | None


def filtration_scaling_report(levels: FiltrationLevels, eps_values, first_level: int = 1,
                              candidates=("bounded", "poly")) -> FiltrationScalingReport:
    """Epsilon-entropy of every level and the fitted growth in the level index."""
    idx = list(range(first_level, len(levels.spaces)))
    eps_values = sorted(eps_values, reverse=True)
    H = np.array([[epsilon_entropy(levels.spaces[j], None, e).value for e in eps_values] for j in idx])
    try:
        fit = fit_class(idx, eps_values, H, candidates)
    except FitError as exc:
        fit = exc
    interval = None
    if not isinstance(fit, Exception) and fit.cls == "poly":
        interval = (fit.parameter - 2 * fit.stderr, fit.parameter + 2 * fit.stderr)
    return FiltrationScalingReport(idx, eps_values, H, fit, interval)
