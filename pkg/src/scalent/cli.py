"""Command-line experiment driver.

Every command is a config (flat TOML, or flags that build one) executed into
an output directory: data CSVs, a JSON report, an SVG plot and a manifest.
The manifest is written on every path, including failures.

Exit codes: 0 success, 1 internal error, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, dynamics
from .entropy import epsilon_entropy
from .filtration import (build_bernoulli_filtration, build_rwre_filtration, filtration_scaling_report,
                         kantorovich_iteration, standardness_diagnostic)
from .mm_space import DiscreteMeasure, read_space
from .scaling import (FitError, ScalingClassFit, ScalingGrid, compute_grid, fit_grid,
                      metric_independence_report, uniform_vs_average_report)
from .transport import NumericalFailure, kantorovich

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("scalent")

KINDS = ("transport", "entropy", "grid", "fit", "metric-independence", "uniform-vs-average",
         "filtration", "rwre-scaling")
REQUIRED = {
    "transport": ("space_file", "measures_file"),
    "entropy": ("space_file", "eps_values"),
    "grid": ("system", "metric", "n_values", "eps_values", "N"),
    "fit": ("csv",),
    "metric-independence": ("system", "metrics", "n_values", "eps_values", "N"),
    "uniform-vs-average": ("system", "metric", "n_values", "eps_values", "N"),
    "filtration": ("depth",),
    "rwre-scaling": ("d", "depth", "M", "eps_values"),
}


class ConfigError(ValueError):
    pass


class RunFailure(RuntimeError):
    """Raised after outputs are written when the run ends without a verdict."""


# -- config handling ------------------------------------------------------------

def parse_system(desc: str) -> dynamics.SystemModel:
    """``bernoulli:0.5,0.5``, ``markov:0.9,0.1;0.3,0.7``, ``rotation:golden``,
    ``pascal_adic:64`` or ``tt_inverse:1``."""
    kind, _, arg = desc.partition(":")
    try:
        if kind == "bernoulli":
            return dynamics.bernoulli([float(x) for x in arg.split(",")])
        if kind == "markov":
            return dynamics.markov([[float(x) for x in row.split(",")] for row in arg.split(";")])
        if kind == "rotation":
            return dynamics.rotation(dynamics.GOLDEN_CONJUGATE if arg in ("", "golden") else float(arg))
        if kind == "pascal_adic":
            return dynamics.pascal_adic(int(arg) if arg else 64)
        if kind == "tt_inverse":
            return dynamics.tt_inverse(int(arg) if arg else 1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid system {desc!r}: {exc}") from exc
    raise ConfigError(f"invalid system {desc!r}: unknown kind {kind!r}")


def validate_config(cfg: dict) -> dict:
    """Check a config against the target module's preconditions; returns it normalized."""
    cfg = dict(cfg)
    if "seed" not in cfg:
        raise ConfigError("missing required field 'seed'")
    seed = cfg["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"field 'seed' must be an unsigned 64-bit integer, got {seed!r}")
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"field 'kind' must be one of {', '.join(KINDS)}, got {kind!r}")
    for key in REQUIRED[kind]:
        if key not in cfg:
            raise ConfigError(f"{kind} config is missing required field '{key}'")
    if "system" in cfg:
        parse_system(cfg["system"])
    if "n_values" in cfg:
        ns = cfg["n_values"]
        if not ns or not all(isinstance(n, int) and n >= 1 for n in ns):
            raise ConfigError("field 'n_values' must be a list of positive integers")
    if "eps_values" in cfg:
        es = cfg["eps_values"]
        if not es or not all(isinstance(e, (int, float)) and 0 < e < 1 for e in es):
            raise ConfigError("field 'eps_values' must be a list of numbers in (0, 1)")
    for key in ("N", "depth", "M"):
        if key in cfg and (not isinstance(cfg[key], int) or cfg[key] < 2 - (key == "depth")):
            raise ConfigError(f"field '{key}' must be an integer of sensible size, got {cfg[key]!r}")
    if "metric_kind" in cfg and cfg["metric_kind"] not in ("uniform", "average") \
            and not str(cfg["metric_kind"]).startswith("p-average:"):
        raise ConfigError("field 'metric_kind' must be uniform, average or p-average:<p>")
    return cfg


def load_config(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc


def presets() -> dict[str, str]:
    """Bundled configs by name, with their one-line descriptions."""
    out = {}
    for entry in sorted(resources.files("scalent").joinpath("presets").iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".toml"):
            cfg = tomllib.loads(entry.read_text())
            out[entry.name[:-5]] = cfg.get("description", "")
    return out


def preset_config(name: str) -> dict:
    path = resources.files("scalent").joinpath("presets", f"{name}.toml")
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; see `scalent presets`")
    return tomllib.loads(path.read_text())


# -- outputs --------------------------------------------------------------------

def _plot(path: Path, title: str, xlabel: str, ylabel: str, series: dict, loglog: bool = True) -> None:
    import matplotlib
    from matplotlib.figure import Figure

    matplotlib.rcParams["svg.hashsalt"] = "scalent"
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    for label, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = (x > 0) & (y > 0) if loglog else np.ones_like(x, bool)
        ax.plot(x[keep], y[keep], marker="o", label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})


def _grid_plot(path: Path, grid: ScalingGrid) -> None:
    series = {f"eps={e:g}": (grid.n_values, grid.H[:, j]) for j, e in enumerate(grid.eps_values)}
    _plot(path, f"{grid.system} {grid.metric} {grid.metric_kind}", "n", "H (nats)", series)


def _num(x) -> str:
    """Shortest round-trip text of a float, numpy scalars included."""
    return repr(float(x))


def _json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, ScalingClassFit):
        return asdict(x)
    return str(x)


def _fit_payload(fit) -> dict:
    return asdict(fit) if isinstance(fit, ScalingClassFit) else {"error": str(fit), "type": type(fit).__name__}


# -- experiment kinds ---------------------------------------------------------------

def _run_grid(cfg, out, threads):
    system = parse_system(cfg["system"])
    grid = compute_grid(system, cfg["metric"], cfg.get("metric_kind", "uniform"), cfg["n_values"],
                        cfg["eps_values"], cfg["N"], cfg["seed"], mode=cfg.get("mode", "sampled"),
                        threads=threads)
    (out / "grid.csv").write_text(grid.to_csv())
    _grid_plot(out / "grid.svg", grid)
    try:
        fit = fit_grid(grid)
    except FitError as exc:
        fit = exc
    _json(out / "fit.json", {"fit": _fit_payload(fit), "invariant_violations": grid.check()})
    if isinstance(fit, Exception):
        raise RunFailure(f"scaling fit: {fit}")
    log.info("class %s, parameter %.4g", fit.cls, fit.parameter)
    return {"class": fit.cls, "normalized_entropy": fit.normalized_entropy}


def _run_comparison(cfg, out, threads):
    system = parse_system(cfg["system"])
    args = (cfg["n_values"], cfg["eps_values"], cfg["N"], cfg["seed"], threads)
    if cfg["kind"] == "metric-independence":
        report = metric_independence_report(system, cfg["metrics"], cfg.get("metric_kind", "uniform"), *args)
    else:
        report = uniform_vs_average_report(system, cfg["metric"], *args)
    grids = report.pop("grids")
    for name, grid in grids.items():
        (out / f"grid-{name}.csv").write_text(grid.to_csv())
    series = {f"{name} eps={grid.eps_values[-1]:g}": (grid.n_values, grid.H[:, -1]) for name, grid in grids.items()}
    _plot(out / "comparison.svg", cfg["kind"], "n", "H (nats)", series)
    _json(out / "report.json", report)
    return {"agree": report["agree"]}


def _run_filtration(cfg, out, threads):
    tree = build_bernoulli_filtration(cfg["depth"], cfg.get("branching", 2), cfg.get("probs"),
                                      cfg.get("leaf_metric", "cylinder"))
    levels = kantorovich_iteration(tree, rng=np.random.default_rng(cfg["seed"]))
    return _levels_outputs(cfg, out, levels, scaling=False)


def _run_rwre(cfg, out, threads):
    levels = build_rwre_filtration(cfg["d"], cfg["depth"], cfg["M"], np.random.default_rng(cfg["seed"]),
                                   max_cells=cfg.get("max_cells", 512), window=cfg.get("window", 0))
    return _levels_outputs(cfg, out, levels, scaling=True)


def _levels_outputs(cfg, out, levels, scaling):
    diam = levels.diameters
    verdict = standardness_diagnostic(diam, cfg.get("tau_contract", 0.1), start=cfg.get("trend_start", 1))
    payload = {"verdict": asdict(verdict)}
    series = {"diameter": (np.arange(len(diam)), diam)}
    header = "level,diameter,cells"
    cols = []
    if scaling:
        rep = filtration_scaling_report(levels, cfg["eps_values"])
        header += "".join(f",H_eps={e:g}" for e in rep.eps_values)
        cols = [[""] * len(diam) for _ in rep.eps_values]
        for i, j in enumerate(rep.levels):
            for k in range(len(rep.eps_values)):
                cols[k][j] = _num(rep.H[i, k])
        payload["fit"] = _fit_payload(rep.fit)
        payload["theta_2sigma"] = rep.theta_interval
        for k, e in enumerate(rep.eps_values):
            series[f"H eps={e:g}"] = (rep.levels, rep.H[:, k])
    rows = [header]
    for j, (d, n) in enumerate(zip(diam, levels.sizes)):
        rows.append(f"{j},{_num(d)},{n}" + "".join("," + c[j] for c in cols))
    (out / "trace.csv").write_text("\n".join(rows) + "\n")
    _plot(out / "levels.svg", levels.label, "level", "value", series, loglog=False)
    _json(out / "report.json", payload)
    return {"verdict": verdict.label}


def _run_transport(cfg, out, threads):
    space = read_space(cfg["space_file"])
    lines = Path(cfg["measures_file"]).read_text().split("\n")
    rows = [ln for ln in lines if ln.strip()]
    if len(rows) != 2:
        raise ConfigError("measures file must hold two lines of masses")
    mu, nu = (DiscreteMeasure.from_dense([float(x) for x in r.split()]) for r in rows)
    dist, coupling = kantorovich(space, mu, nu)
    body = ["source,target,mass"] + [f"{i},{j},{_num(m)}" for i, j, m in coupling.pairs]
    (out / "coupling.csv").write_text("\n".join(body) + "\n")
    _json(out / "report.json", {"distance": dist})
    print(f"distance {_num(dist)}")
    print("\n".join(body))
    return {"distance": dist}


def _run_entropy(cfg, out, threads):
    space = read_space(cfg["space_file"])
    lines = ["epsilon,H,distance,support"]
    witnesses = {}
    for e in sorted(cfg["eps_values"], reverse=True):
        r = epsilon_entropy(space, None, e)
        lines.append(f"{_num(e)},{_num(r.value)},{_num(r.distance)},{len(r.witness.support)}")
        witnesses[repr(e)] = {"support": list(r.witness.support), "masses": r.witness.masses.tolist()}
        print(f"eps={e:g} H={r.value:.6f} nats ({r.value / np.log(2):.6f} bits)")
    (out / "entropy.csv").write_text("\n".join(lines) + "\n")
    _json(out / "report.json", {"witnesses": witnesses})
    return {}


def _run_fit(cfg, out, threads):
    grid = ScalingGrid.from_csv(Path(cfg["csv"]).read_text())
    fit = fit_grid(grid)
    _json(out / "fit.json", {"fit": asdict(fit)})
    print(f"class {fit.cls}, parameter {fit.parameter:.4g} +- {fit.stderr:.2g}")
    return {"class": fit.cls}


RUNNERS = {
    "grid": _run_grid, "metric-independence": _run_comparison, "uniform-vs-average": _run_comparison,
    "filtration": _run_filtration, "rwre-scaling": _run_rwre, "transport": _run_transport,
    "entropy": _run_entropy, "fit": _run_fit,
}


def execute(cfg: dict, out: Path, threads: int) -> int:
    """Validate and run one config, always leaving a manifest behind."""
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    manifest = {"config": cfg, "versions": _versions(), "status": "ok", "exit_code": 0}
    try:
        cfg = validate_config(cfg)
        manifest["summary"] = RUNNERS[cfg["kind"]](cfg, out, threads)
    except (RunFailure, NumericalFailure, FitError) as exc:
        manifest.update(status="numerical failure", error=str(exc), exit_code=3)
    except (ValueError, OSError) as exc:
        manifest.update(status="validation error", error=f"{type(exc).__name__}: {exc}", exit_code=2)
    except Exception as exc:  # still leave a manifest behind
        log.exception("run failed")
        manifest.update(status="internal error", error=f"{type(exc).__name__}: {exc}", exit_code=1)
    manifest["wall_time_s"] = round(time.perf_counter() - start, 3)
    manifest["outputs"] = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    _json(out / "manifest.json", manifest)
    if manifest["exit_code"]:
        print(f"error: {manifest['error']}", file=sys.stderr)
    return manifest["exit_code"]


def _versions() -> dict:
    import numba
    import scipy

    return {"scalent": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


# -- argument parsing ---------------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config; flags override its fields")
    common.add_argument("--out", default="scalent-out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker cap")
    common.add_argument("--space-file", dest="space_file", help="space in the plain-text matrix format")

    parser = argparse.ArgumentParser(prog="scalent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transport", parents=[common], help="Kantorovich distance between two measures")
    p.add_argument("--measures", dest="measures_file", help="file with two lines of masses (mu, nu)")

    p = sub.add_parser("entropy", parents=[common], help="epsilon-entropy of a space file")
    p.add_argument("--eps", dest="eps_values", type=_floats)

    p = sub.add_parser("grid", parents=[common], help="H(n, eps) grid and scaling fit")
    p.add_argument("--system")
    p.add_argument("--metric")
    p.add_argument("--metric-kind", dest="metric_kind")
    p.add_argument("--n", dest="n_values", type=_ints)
    p.add_argument("--eps", dest="eps_values", type=_floats)
    p.add_argument("--N", dest="N", type=int)
    p.add_argument("--mode", choices=("sampled", "exact"))

    p = sub.add_parser("fit", parents=[common], help="classify a grid CSV")
    p.add_argument("csv", nargs="?")

    p = sub.add_parser("filtration", parents=[common], help="Kantorovich iteration along a filtration")
    p.add_argument("--system", choices=("bernoulli", "rwre"), default="bernoulli")
    p.add_argument("--depth", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--M", dest="M", type=int)
    p.add_argument("--eps", dest="eps_values", type=_floats)

    sub.add_parser("presets", help="list bundled configs")

    p = sub.add_parser("run", parents=[common], help="run a config file or a bundled preset")
    p.add_argument("target", nargs="?", help="preset name or config path")
    return parser


def _config_from_args(args) -> dict:
    if args.command == "run":
        if args.target is None and args.config is None:
            raise ConfigError("run needs a preset name or a config path")
        target = args.target or args.config
        cfg = load_config(target) if (target.endswith(".toml") or os.path.exists(target)) else preset_config(target)
    else:
        cfg = load_config(args.config) if args.config else {}
        kind = {"filtration": "rwre-scaling" if getattr(args, "system", None) == "rwre" else "filtration"}
        cfg.setdefault("kind", kind.get(args.command, args.command))
        skip = {"command", "config", "out", "seed", "threads", "target"}
        if args.command == "filtration":
            skip.add("system")
        for key, value in vars(args).items():
            if key not in skip and value is not None:
                cfg[key] = value
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "space_file", None):
        cfg["space_file"] = args.space_file
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SCALENT_LOG", "error").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        for name, desc in presets().items():
            print(f"{name}\t{desc}")
        return 0
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    out = Path(args.out)
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        out.mkdir(parents=True, exist_ok=True)
        _json(out / "manifest.json", {"config": None, "versions": _versions(), "status": "validation error",
                                      "error": str(exc), "exit_code": 2})
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return execute(cfg, out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
