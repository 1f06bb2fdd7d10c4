"""Shannon, restricted and epsilon-entropy of finite metric measure spaces.

All entropies are in nats. The epsilon-entropy is an infimum over measures
within Kantorovich distance epsilon of the reference measure; it is computed
here by a heuristic that always returns a validated upper bound together
with its witness measure.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import SystemModel, sample_points, symbol_sequence
from .mm_space import DiscreteMeasure, SemiMetricSpace
from .transport import NumericalFailure, kantorovich

VALIDATION_MARGIN = 1e-12  # relative to epsilon, so budgets scale exactly
PUSH_SIZE = 4096
NEIGHBOURS = 8


class EntropyError(ValueError):
    pass


class EpsilonOutOfRange(EntropyError):
    pass


class TooLarge(EntropyError):
    pass


class BudgetExceeded(EntropyError):
    pass


class NotStochastic(EntropyError):
    pass


class NotStationary(EntropyError):
    pass


def shannon(p) -> float:
    """Entropy ``-sum p log p`` of a probability vector (zeros contribute 0)."""
    p = np.asarray(p, float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise EntropyError("not a probability vector")
    nz = p[p > 0]
    if nz.size == 1:
        return 0.0  # a point mass, even when rounding left it at 1 + ulp
    return float(-(nz * np.log(nz)).sum()) + 0.0


def _entropy_after(masses: np.ndarray, removal: np.ndarray) -> float:
    kept = masses - removal
    kept[kept < 0] = 0.0
    total = kept.sum()
    q = kept[kept > 0] / total
    return float(-(q * np.log(q)).sum()) + 0.0


def _check_share(eps: float) -> None:
    if not 0.0 <= eps <= 1.0:
        raise EpsilonOutOfRange(f"epsilon must lie in [0, 1], got {eps}")


def _check_radius(eps: float) -> None:
    if not (eps > 0 and math.isfinite(eps)):
        raise EpsilonOutOfRange(f"epsilon must be positive and finite, got {eps}")


def _greedy_removal(m: np.ndarray, eps: float) -> tuple[np.ndarray, int]:
    """Remove up to ``eps`` of mass from the smallest cells, keeping the largest."""
    order = np.argsort(m, kind="stable")
    removal = np.zeros_like(m)
    budget = eps
    partial = -1
    for c in order[:-1]:
        if m[c] <= 0:
            continue
        if m[c] <= budget:
            removal[c] = m[c]
            budget -= m[c]
        else:
            removal[c] = budget
            partial = int(c)
            break
    return removal, partial


def restricted_entropy(masses, eps: float) -> tuple[float, np.ndarray]:
    """Least entropy of the conditional measure on a set of mass above ``1 - eps``.

    Greedy full removal of the smallest cells, partial removal on the next
    one, then a local search that moves the partial removal to every other
    kept cell. Returns the value and the per-cell removal vector.
    """
    _check_share(eps)
    m = np.asarray(masses, float)
    if m.ndim != 1 or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
        raise EntropyError("masses must be a probability vector")
    removal, partial = _greedy_removal(m, eps)
    if not removal.any():
        return shannon(m), removal
    best = _entropy_after(m, removal)
    if partial >= 0:
        amount = removal[partial]
        base = removal.copy()
        base[partial] = 0.0
        for c in np.flatnonzero((base == 0) & (m > 0)):
            trial = base.copy()
            trial[c] = min(amount, m[c])
            if np.count_nonzero(m - trial > 0) == 0:
                continue
            h = _entropy_after(m, trial)
            if h < best - 1e-15:
                best, removal = h, trial
    return best, removal


def restricted_entropy_oracle(masses, eps: float, resolution: float = 1e-3) -> float:
    """Grid search: every fully removed subset times a partial removal on one cell."""
    _check_share(eps)
    m = np.asarray(masses, float)
    k = m.size
    if k > 12:
        raise TooLarge("the grid oracle handles at most 12 cells")
    best = np.inf
    for r in range(k):
        for full in itertools.combinations(range(k), r):
            gone = float(m[list(full)].sum())
            if gone > eps + 1e-15:
                continue
            rest = [c for c in range(k) if c not in full and m[c] > 0]
            if not rest:
                continue
            base = np.zeros(k)
            base[list(full)] = m[list(full)]
            best = min(best, _entropy_after(m, base))
            left = eps - gone
            for c in rest:
                top = min(left, m[c])
                steps = np.append(np.arange(resolution, top, resolution), top)
                for t in steps:
                    trial = base.copy()
                    trial[c] = t
                    if np.all(m - trial <= 0):
                        continue
                    best = min(best, _entropy_after(m, trial))
    return float(best)


# -- epsilon-entropy ---------------------------------------------------------

@dataclass(frozen=True)
class EpsilonEntropyResult:
    """Upper bound on the epsilon-entropy with a witness measure.

    ``distance`` is the exact Kantorovich distance from the reference
    measure to ``witness``; it is always below ``epsilon``.
    """

    value: float
    witness: DiscreteMeasure
    distance: float
    epsilon: float
    n_clusters: int


class _Clusters:
    """Agglomerative medoid clustering under a transport-cost budget."""

    def __init__(self, dist: np.ndarray, w: np.ndarray):
        self.dist = dist
        self.w = w
        self.members: dict[int, np.ndarray] = {}
        self.medoid: dict[int, int] = {}
        self.cost: dict[int, float] = {}
        self.parent = list(range(len(w)))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def add(self, cid: int, members: np.ndarray) -> None:
        med, cost = self.best_medoid(members)
        self.members[cid] = members
        self.medoid[cid] = med
        self.cost[cid] = cost

    def best_medoid(self, members: np.ndarray) -> tuple[int, float]:
        sub = self.dist[np.ix_(members, members)]
        costs = self.w[members] @ sub
        j = int(np.argmin(costs))
        return int(members[j]), float(costs[j])

    def merge_delta(self, a: int, b: int) -> float:
        both = np.concatenate([self.members[a], self.members[b]])
        _, cost = self.best_medoid(both)
        return cost - self.cost[a] - self.cost[b]

    def nearest(self, a: int, k: int) -> list[int]:
        ids = [c for c in self.members if c != a]
        if not ids:
            return []
        meds = np.array([self.medoid[c] for c in ids])
        d = self.dist[self.medoid[a], meds]
        pick = np.argsort(d, kind="stable")[:k]
        return [ids[i] for i in pick]


def _cluster(dist: np.ndarray, w: np.ndarray, budget: float) -> _Clusters:
    n = len(w)
    cl = _Clusters(dist, w)
    # exact zero-distance groups merge for free
    seen = np.zeros(n, bool)
    for i in range(n):
        if seen[i]:
            continue
        group = np.flatnonzero(dist[i] == 0)
        group = group[~seen[group]]
        seen[group] = True
        for g in group:
            cl.parent[g] = i
        cl.add(i, group)
    heap: list[tuple[float, int, int, int, int]] = []
    version = dict.fromkeys(cl.members, 0)

    def push(a: int) -> None:
        for b in cl.nearest(a, NEIGHBOURS):
            lo, hi = min(a, b), max(a, b)
            heapq.heappush(heap, (cl.merge_delta(a, b), lo, hi, version[lo], version[hi]))

    for a in list(cl.members):
        push(a)
    total = sum(cl.cost.values())
    while heap and len(cl.members) > 1:
        delta, a, b, va, vb = heapq.heappop(heap)
        if a not in cl.members or b not in cl.members:
            ra, rb = cl.find(a), cl.find(b)
            if ra != rb:
                lo, hi = min(ra, rb), max(ra, rb)
                heapq.heappush(heap, (cl.merge_delta(lo, hi), lo, hi, version[lo], version[hi]))
            continue
        if (va, vb) != (version[a], version[b]):
            heapq.heappush(heap, (cl.merge_delta(a, b), a, b, version[a], version[b]))
            continue
        if total + delta > budget:
            break
        both = np.concatenate([cl.members.pop(a), cl.members.pop(b)])
        for c in (a, b):
            cl.medoid.pop(c)
            total -= cl.cost.pop(c)
        cl.parent[b] = a
        cl.add(a, both)
        version[a] += 1
        total += cl.cost[a]
        push(a)
    return cl


def _trim_cost(cl: _Clusters, ids: list[int], removal: np.ndarray) -> tuple[float, np.ndarray]:
    """Proxy transport cost and target masses after trimming clusters.

    Removed mass leaves each cluster proportionally from its points and is
    spread over the kept medoids in proportion to their remaining mass.
    """
    mass = np.array([cl.w[cl.members[c]].sum() for c in ids])
    kept = mass - removal
    kept[kept < 0] = 0.0
    share = kept / kept.sum()
    meds = np.array([cl.medoid[c] for c in ids])
    cost = 0.0
    for k, c in enumerate(ids):
        pts = cl.members[c]
        frac = removal[k] / mass[k] if mass[k] > 0 else 0.0
        wx = cl.w[pts]
        to_own = cl.dist[pts, meds[k]]
        to_kept = cl.dist[np.ix_(pts, meds)] @ share
        cost += float(wx @ ((1 - frac) * to_own + frac * to_kept))
    return cost, share


def epsilon_entropy(s: SemiMetricSpace, mu: DiscreteMeasure | None, eps: float) -> EpsilonEntropyResult:
    """Upper bound on ``inf { H(nu) : K(mu, nu) < eps }`` with its witness.

    Points are merged into medoid clusters while the assignment cost stays
    under budget; the cluster masses are then trimmed like a restricted
    entropy, bisecting the trimming budget against the same cost. The final
    witness is checked with an exact transport solve.
    """
    _check_radius(eps)
    if mu is None:
        mu = s.uniform_measure()
    mu.check_on(s)
    support = np.asarray(mu.support)
    keep = mu.masses > 0
    support, w = support[keep], mu.masses[keep]
    w = w / w.sum()
    budget = eps * (1 - VALIDATION_MARGIN)
    dist = s.dist[np.ix_(support, support)]

    cl = _cluster(dist, w, budget)
    ids = sorted(cl.members)
    mass = np.array([w[cl.members[c]].sum() for c in ids])
    base_cost, share = _trim_cost(cl, ids, np.zeros(len(ids)))
    best_h, best_share = shannon(share), share

    if base_cost < budget and len(ids) > 1:
        lo, hi = 0.0, 1.0 - 1e-12
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            _, removal = restricted_entropy(mass, mid)
            cost, sh = _trim_cost(cl, ids, removal)
            if cost <= budget:
                h = shannon(sh)
                if h < best_h:
                    best_h, best_share = h, sh
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-10:
                break

    meds = np.array([cl.medoid[c] for c in ids])
    nz = best_share > 0
    pts = support[meds[nz]]
    order = np.argsort(pts)
    pts, share = pts[order], best_share[nz][order] / best_share[nz].sum()
    share = _exact_push(s, mu, pts, share, budget)
    keep = share > 0
    witness = DiscreteMeasure(tuple(pts[keep].tolist()), share[keep] / share[keep].sum())
    exact, _ = kantorovich(s, mu, witness)
    if exact >= eps:
        raise NumericalFailure(f"witness at distance {exact:.3g} is not within epsilon {eps}")
    return EpsilonEntropyResult(shannon(witness.masses), witness, exact, eps, int(keep.sum()))


def _exact_push(s, mu, pts, share, budget, max_solves: int = 64):
    """Move mass from the smallest atoms onto the largest while exact cost allows.

    Skipped when points times atoms exceeds ``PUSH_SIZE``: the solves would
    dominate the run time.

    Transport cost is convex along each move, so a bisection on the moved
    amount finds the largest feasible one. Each move lowers the entropy.
    """
    if share.size < 2 or s.n_points * share.size > PUSH_SIZE:
        return share
    share = share.copy()
    top = int(np.argmax(share))
    solves = 0

    def cost(trial):
        nonlocal solves
        solves += 1
        keep = trial > 0
        return kantorovich(s, mu, DiscreteMeasure(tuple(pts[keep].tolist()), trial[keep] / trial[keep].sum()))[0]

    for a in np.argsort(share, kind="stable"):
        if a == top or solves >= max_solves:
            continue
        trial = share.copy()
        trial[top] += trial[a]
        trial[a] = 0.0
        if cost(trial) <= budget:
            share = trial
            continue
        lo, hi = 0.0, share[a]
        while solves < max_solves and hi - lo > 1e-9 * share[a]:
            mid = 0.5 * (lo + hi)
            trial = share.copy()
            trial[a] -= mid
            trial[top] += mid
            if cost(trial) <= budget:
                lo = mid
            else:
                hi = mid
        share[a] -= lo
        share[top] += lo
        break
    return share


def _compositions(parts: int, steps: int):
    for cuts in itertools.combinations(range(1, steps), parts - 1):
        edges = (0,) + cuts + (steps,)
        yield tuple(edges[i + 1] - edges[i] for i in range(parts))


def epsilon_entropy_oracle(s: SemiMetricSpace, mu: DiscreteMeasure | None, eps: float,
                           max_support: int = 3, grid: float = 0.05) -> EpsilonEntropyResult:
    """Exhaustive search over witnesses with small support and grid masses.

    Candidates are visited in order of increasing entropy and the first one
    within distance ``eps`` (boundary included) is returned. Only for spaces of at most 8 points.
    """
    _check_radius(eps)
    if s.n_points > 8:
        raise TooLarge("the oracle handles at most 8 points")
    if mu is None:
        mu = s.uniform_measure()
    steps = int(round(1 / grid))
    comps = []
    for parts in range(1, max_support + 1):
        for c in _compositions(parts, steps):
            q = np.array(c, float) / steps
            comps.append((shannon(q), c, q))
    comps.sort(key=lambda t: (t[0], t[1]))
    for _, _, q in comps:
        for pts in itertools.combinations(range(s.n_points), q.size):
            nu = DiscreteMeasure(pts, q)
            d, _ = kantorovich(s, mu, nu)
            # closed constraint: the infimum over d < eps is attained in the closure
            if d <= eps + 1e-12:
                return EpsilonEntropyResult(shannon(q), nu, d, eps, q.size)
    # the full measure itself is always feasible
    return EpsilonEntropyResult(shannon(mu.masses), mu, 0.0, eps, len(mu.support))


# -- dynamical entropy -------------------------------------------------------

def conditional_entropy_rate(P, pi) -> float:
    """``-sum_i pi_i sum_j P_ij log P_ij`` for a stationary Markov chain."""
    P = np.asarray(P, float)
    pi = np.asarray(pi, float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0):
        raise NotStochastic("transition matrix must be square and nonnegative")
    if np.abs(P.sum(axis=1) - 1).max() > 1e-12:
        raise NotStochastic("rows must sum to 1")
    if np.any(pi < 0) or abs(pi.sum() - 1) > 1e-12 or np.abs(pi @ P - pi).max() > 1e-10:
        raise NotStationary("pi is not a stationary distribution of P")
    logs = np.where(P > 0, np.log(np.where(P > 0, P, 1.0)), 0.0)
    return float(-(pi[:, None] * P * logs).sum())


def word_distribution(system: SystemModel, n: int, budget: int = 1 << 22) -> np.ndarray:
    """Probabilities of all length-``n`` words of the generating partition."""
    if system.kind == "bernoulli":
        P = np.tile(np.asarray(system.param("probs")), (len(system.param("probs")), 1))
        pi = np.asarray(system.param("probs"))
    elif system.kind == "markov":
        P = np.asarray(system.param("matrix"))
        pi = np.asarray(system.param("pi"))
    else:
        raise EntropyError(f"exact word distributions need a Bernoulli or Markov system, not {system.kind}")
    k = len(pi)
    if k ** n > budget:
        raise BudgetExceeded(f"{k}^{n} words exceed the budget of {budget}")
    # the last axis of the flattened index is the word's final symbol
    words = pi.copy()
    for _ in range(n - 1):
        words = (words.reshape(-1, k)[:, :, None] * P[None, :, :]).reshape(-1)
    return words


def sinai_sequence(system: SystemModel, n_max: int, mode: str = "exact",
                   samples: int = 100_000, seed: int = 0, budget: int = 1 << 22) -> np.ndarray:
    """``H(xi^n)`` for ``n = 1..n_max`` where ``xi`` generates the system.

    ``exact`` enumerates word probabilities (shifts only); ``empirical``
    counts words along sampled orbits.
    """
    out = np.empty(n_max)
    if mode == "exact":
        for n in range(1, n_max + 1):
            out[n - 1] = shannon(word_distribution(system, n, budget))
        return out
    if mode != "empirical":
        raise EntropyError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    pts = sample_points(system, samples, rng, n_max=n_max, radius=0 if system.kind != "tt_inverse" else 1)
    sym = symbol_sequence(pts, n_max)
    for n in range(1, n_max + 1):
        _, counts = np.unique(sym[:, :n], axis=0, return_counts=True)
        out[n - 1] = shannon(counts / counts.sum())
    return out
