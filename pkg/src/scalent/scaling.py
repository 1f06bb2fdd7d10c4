"""Entropy grids over (n, epsilon) and their classification into growth classes.

A grid holds ``H(n, eps)``: the epsilon-entropy of the n-th iterated metric.
:func:`fit_class` reads off the growth of ``H`` in ``n`` at a plateau value
of ``eps`` and names one of four classes: bounded, log_power (a power of
``log n``), poly (``n**theta`` with ``0 < theta < 1``) or linear.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import SystemModel, sample_orbit_space
from .entropy import epsilon_entropy, restricted_entropy, word_distribution

CLASSES = ("bounded", "log_power", "poly", "linear")
CSV_HEADER = ("n", "epsilon", "H", "metric_kind", "system", "N", "seed")
NOISE_FLOOR = 0.2
PLATEAU_REL = 0.10
AMBIGUITY = 0.05
MIN_MARGIN = 0.05
RATIO_BAND = (0.5, 2.0)


class FitError(ValueError):
    pass


class NoPlateau(FitError):
    pass


class AmbiguousFit(FitError):
    def __init__(self, message: str, candidates: list):
        super().__init__(message)
        self.candidates = candidates


class GridError(ValueError):
    pass


@dataclass
class ScalingGrid:
    n_values: list[int]
    eps_values: list[float]
    H: np.ndarray
    metric_kind: str
    system: str
    N: int
    seed: int
    metric: str = ""
    mode: str = "sampled"

    def __post_init__(self):
        self.H = np.asarray(self.H, float)
        if self.H.shape != (len(self.n_values), len(self.eps_values)):
            raise GridError("H must have shape (len(n_values), len(eps_values))")

    def check(self, tol: float = 0.05) -> list[str]:
        """Invariant violations, up to a Monte Carlo tolerance in nats.

        H is nonnegative, nonincreasing in epsilon and, for the uniform
        kind, nondecreasing in n.
        """
        problems = []
        if np.any(self.H < -tol):
            problems.append("negative entropy")
        order = np.argsort(self.eps_values)
        if np.any(np.diff(self.H[:, order], axis=1) > tol):
            problems.append("H increases with epsilon")
        if self.metric_kind == "uniform" and np.any(np.diff(self.H, axis=0) < -tol):
            problems.append("H decreases in n under the uniform iterate")
        return problems

    def rows(self):
        for i, n in enumerate(self.n_values):
            for j, e in enumerate(self.eps_values):
                yield (n, e, float(self.H[i, j]), self.metric_kind, self.system, self.N, self.seed)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows():
            w.writerow([r[0], repr(r[1]), repr(r[2]), *r[3:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ScalingGrid":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or tuple(rows[0].keys()) != CSV_HEADER:
            raise GridError(f"CSV header must be {','.join(CSV_HEADER)}")
        ns = sorted({int(r["n"]) for r in rows})
        es = sorted({float(r["epsilon"]) for r in rows}, reverse=True)
        H = np.full((len(ns), len(es)), np.nan)
        for r in rows:
            H[ns.index(int(r["n"])), es.index(float(r["epsilon"]))] = float(r["H"])
        if np.isnan(H).any():
            raise GridError("CSV does not fill the (n, epsilon) grid")
        first = rows[0]
        return cls(ns, es, H, first["metric_kind"], first["system"], int(first["N"]), int(first["seed"]))


def _grouped_bernoulli_entropy(probs, n: int, eps: float) -> float:
    """Greedy restricted entropy of the length-n word distribution via type classes.

    Words with the same symbol counts share a probability, so the greedy
    removal works class by class without listing the words.
    """
    classes = []
    for counts in _count_vectors(n, len(probs)):
        if any(c and p == 0 for c, p in zip(counts, probs)):
            continue
        p = math.exp(sum(c * math.log(q) for c, q in zip(counts, probs) if c))
        mult = math.factorial(n)
        for c in counts:
            mult //= math.factorial(c)
        classes.append((p, mult))
    classes.sort()
    budget = eps
    kept = []  # (word mass, number of words)
    for idx, (p, mult) in enumerate(classes):
        limit = mult - 1 if idx == len(classes) - 1 else mult
        full = min(limit, int(budget // p)) if budget > 0 else 0
        budget -= full * p
        rest = mult - full
        if full < limit and budget > 0:
            kept.append((p - budget, 1))
            rest -= 1
            budget = 0.0
        if rest:
            kept.append((p, rest))
    total = sum(m * c for m, c in kept)
    return -sum(c * (m / total) * math.log(m / total) for m, c in kept if m > 0)


def _count_vectors(n: int, k: int):
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _count_vectors(n - first, k - 1):
            yield (first,) + rest


def exact_partition_entropy(system: SystemModel, n: int, eps: float) -> float:
    """Epsilon-entropy of the n-step partition metric, from word probabilities.

    For a partition semimetric the epsilon-entropy is the restricted entropy
    of the cell masses; for a shift those cells are the length-n words.
    Bernoulli systems use type classes and so reach large ``n``.
    """
    if system.kind == "bernoulli":
        return _grouped_bernoulli_entropy(system.param("probs"), n, eps)
    return restricted_entropy(word_distribution(system, n), eps)[0]


def compute_grid(system: SystemModel, metric: str, metric_kind: str, n_values, eps_values,
                 N: int = 512, seed: int = 0, mode: str = "sampled", radius: int | None = None,
                 progress=None, threads: int = 1) -> ScalingGrid:
    """Fill ``H(n, eps)`` for every pair of the grid.

    ``sampled`` draws ``N`` points once and evaluates the iterated metrics on
    them; ``exact`` (shifts with the partition metric only) works from the
    exact word distribution.
    """
    n_values = sorted(int(n) for n in n_values)
    eps_values = sorted((float(e) for e in eps_values), reverse=True)
    if not n_values or n_values[0] < 1:
        raise GridError("n values must be positive integers")
    if not eps_values or not all(0 < e < 1 for e in eps_values):
        raise GridError("epsilon values must lie in (0, 1)")
    H = np.empty((len(n_values), len(eps_values)))
    if mode == "exact":
        if metric != "partition" or metric_kind != "uniform" or system.kind not in ("bernoulli", "markov"):
            raise GridError("exact mode needs a Bernoulli or Markov system with the uniform partition metric")
        for i, n in enumerate(n_values):
            for j, e in enumerate(eps_values):
                H[i, j] = exact_partition_entropy(system, n, e)
        return ScalingGrid(n_values, eps_values, H, metric_kind, system.describe(), 0, seed, metric, mode)
    if mode != "sampled":
        raise GridError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    orbit = sample_orbit_space(system, N, n_values[-1], metric, rng, radius=radius)
    spaces = [orbit.iterate(metric_kind, n) for n in n_values]
    cells = [(i, j) for i in range(len(n_values)) for j in range(len(eps_values))]

    def one(cell):
        i, j = cell
        h = epsilon_entropy(spaces[i], None, eps_values[j]).value
        if progress:
            progress(n_values[i], eps_values[j], h)
        return h

    # every cell is a pure function of its space and epsilon, so the
    # result does not depend on the worker count
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for (i, j), h in zip(cells, pool.map(one, cells)):
            H[i, j] = h
    return ScalingGrid(n_values, eps_values, H, metric_kind, system.describe(), N, seed, metric, mode)


# -- classification -----------------------------------------------------------

@dataclass
class CandidateFit:
    cls: str
    parameter: float
    stderr: float
    residual: float
    admissible: bool
    ratio_ok: bool = True
    ratio_median: float = float("nan")


@dataclass
class ScalingClassFit:
    cls: str
    parameter: float
    stderr: float
    normalized_entropy: float | None
    epsilon: float
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=float)


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Least squares with standard errors; returns (coef, se, residual scale)."""
    m, p = x.shape
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    res = y - x @ coef
    dof = max(m - p, 1)
    s2 = float(res @ res) / dof
    cov = s2 * np.linalg.pinv(x.T @ x)
    return coef, np.sqrt(np.maximum(np.diag(cov), 0.0)), math.sqrt(s2)


def _shape(cls: str, n: np.ndarray, param: float) -> np.ndarray:
    if cls == "bounded":
        return np.ones_like(n)
    if cls == "log_power":
        return np.log(n) ** param
    if cls == "poly":
        return n ** param
    return n.copy()


def _candidates(n: np.ndarray, H: np.ndarray, allowed) -> list[CandidateFit]:
    y = np.log(H)
    ones = np.ones_like(n)
    out = []
    if "bounded" in allowed:
        coef, se, r = _ols(ones[:, None], y)
        out.append(CandidateFit("bounded", float(np.exp(coef[0])), float(np.exp(coef[0]) * se[0]), r, True))
    if "log_power" in allowed and np.all(n > 1):
        coef, se, r = _ols(np.column_stack([ones, np.log(np.log(n))]), y)
        k, sk = float(coef[1]), float(se[1])
        out.append(CandidateFit("log_power", k, sk, r, k - max(2 * sk, MIN_MARGIN) > 0))
    if "poly" in allowed:
        coef, se, r = _ols(np.column_stack([ones, np.log(n)]), y)
        t, st = float(coef[1]), float(se[1])
        m = max(2 * st, MIN_MARGIN)
        out.append(CandidateFit("poly", t, st, r, t - m > 0 and t + m < 1))
    if "linear" in allowed:
        coef, _, r = _ols(ones[:, None], y - np.log(n))
        out.append(CandidateFit("linear", 1.0, 0.0, r, True))
    for c in out:
        ratio = H / _shape(c.cls, n, c.parameter)
        med = float(np.median(ratio))
        c.ratio_median = med
        c.ratio_ok = bool(np.all((ratio >= RATIO_BAND[0] * med) & (ratio <= RATIO_BAND[1] * med)))
    return out


def plateau_column(H: np.ndarray, eps_values) -> int:
    """Index of the smallest epsilon on the plateau.

    A column is on the plateau when its growth profile (the column divided
    by its median) agrees with that of the next larger epsilon to within
    10% over the top quartile of ``n``. Raises :class:`NoPlateau`.
    """
    order = np.argsort(eps_values)  # smallest epsilon first
    quartile = max(1, math.ceil(len(H) / 4))
    prof = (H / np.maximum(np.median(H, axis=0), 1e-12))[-quartile:]
    for small, large in zip(order[:-1], order[1:]):
        x, y = prof[:, small], prof[:, large]
        rel = np.abs(x - y) / np.maximum(np.maximum(np.abs(x), np.abs(y)), 1e-9)
        if np.all(rel < PLATEAU_REL):
            return int(small)
    raise NoPlateau("no adjacent epsilon pair has growth profiles within 10% over the top "
                    "quartile of n; try a denser epsilon grid")


def fit_class(n_values, eps_values, H, candidates=CLASSES, require_grid: bool = True) -> ScalingClassFit:
    """Classify the growth of ``H(n, eps)`` in ``n``.

    The plateau epsilon is chosen first; then ``log H`` is regressed on the
    top half of ``n`` for each candidate shape. Shapes whose fitted
    parameter falls outside its open range (with a margin) are dropped, as
    are shapes whose ratio ``H / c_n`` leaves ``[0.5, 2]`` times its median.
    The best remaining residual wins unless another is within 5% of it.
    """
    n = np.asarray(n_values, float)
    H = np.asarray(H, float)
    if require_grid:
        if len(n) < 4 or n.max() / n.min() < 10:
            raise FitError("need at least 4 n values spanning a decade")
        if len(eps_values) < 3:
            raise FitError("need at least 3 epsilon values")
    if H.max() < NOISE_FLOOR:
        j = int(np.argmin(eps_values))
        return ScalingClassFit("bounded", float(H[:, j].mean()), float(H[:, j].std()), None,
                               float(eps_values[j]), {"reason": "below noise floor"})
    j = plateau_column(H, eps_values)
    top = slice(len(n) - math.ceil(len(n) / 2), None)
    nn, hh = n[top], H[top, j]
    if np.any(hh <= 0):
        return ScalingClassFit("bounded", float(hh.mean()), float(hh.std()), None,
                               float(eps_values[j]), {"reason": "zero entropy in fit range"})
    fits = _candidates(nn, hh, candidates)
    ok = sorted((f for f in fits if f.admissible and f.ratio_ok), key=lambda f: f.residual)
    diag = {"candidates": [asdict(f) for f in fits], "fit_n": nn.tolist()}
    if not ok:
        raise AmbiguousFit("no candidate class is admissible", fits)
    best = ok[0]
    close = [f for f in ok[1:] if f.residual - best.residual <= AMBIGUITY * f.residual and f.residual > 1e-9]
    if close:
        raise AmbiguousFit(f"{best.cls} and {close[0].cls} fit equally well", [best] + close)
    norm = best.ratio_median if best.cls == "linear" else None
    return ScalingClassFit(best.cls, best.parameter, best.stderr, norm, float(eps_values[j]), diag)


def fit_grid(grid: ScalingGrid, candidates=CLASSES) -> ScalingClassFit:
    return fit_class(grid.n_values, grid.eps_values, grid.H, candidates)


def _agree(a: ScalingClassFit, b: ScalingClassFit) -> bool:
    if a.cls != b.cls:
        return False
    if a.cls in ("poly", "log_power"):
        joint = max(2 * math.hypot(a.stderr, b.stderr), MIN_MARGIN)
        return abs(a.parameter - b.parameter) <= joint
    return True


def _fit_or_error(grid: ScalingGrid):
    try:
        return fit_grid(grid)
    except FitError as exc:
        return exc


def metric_independence_report(system: SystemModel, metrics, metric_kind: str, n_values, eps_values,
                               N: int = 512, seed: int = 0, threads: int = 1) -> dict:
    """Fit the same system under several metrics and report whether the classes agree."""
    grids = {m: compute_grid(system, m, metric_kind, n_values, eps_values, N, seed, threads=threads)
             for m in metrics}
    return compare_grids(grids)


def uniform_vs_average_report(system: SystemModel, metric: str, n_values, eps_values,
                              N: int = 512, seed: int = 0, threads: int = 1) -> dict:
    """Side-by-side fits under the uniform and the average iterate; no verdict is implied."""
    grids = {k: compute_grid(system, metric, k, n_values, eps_values, N, seed, threads=threads)
             for k in ("uniform", "average")}
    return compare_grids(grids)


def compare_grids(grids: dict) -> dict:
    """Fit each named grid and report whether all fitted classes agree."""
    fits = {k: _fit_or_error(g) for k, g in grids.items()}
    good = [f for f in fits.values() if isinstance(f, ScalingClassFit)]
    agree = len(good) == len(fits) and all(_agree(good[0], f) for f in good[1:])
    return {
        "agree": agree,
        "fits": {k: (asdict(f) if isinstance(f, ScalingClassFit) else {"error": str(f)})
                 for k, f in fits.items()},
        "grids": grids,
    }
