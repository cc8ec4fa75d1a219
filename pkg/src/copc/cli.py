"""Command-line interface: simulate, learn, ida, cstar and aggregate.

Every option can also be set in a flat ``key = value`` file passed with
``--config``; keys use the long option name (dashes or underscores).  Values
given on the command line win over the file, which wins over the defaults.
The default worker count comes from the ``COPC_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import secrets
import sys
import time
from pathlib import Path

from . import __version__
from .dot import STYLES, pdag_to_dot, read_dot, summary_to_dot
from .errors import InputError, NumericalError
from .graph import aggregate_cpdags, count_edge_kinds
from .ida import estimate_effects
from .io import (
    histogram_rows,
    ingest_csv,
    load_kv,
    manifest_path,
    write_json,
    write_manifest,
    write_table,
)
from .pc import VARIANTS, LearnConfig, run
from .sim import METRIC_COLUMNS, SimScenario, run_comparison
from .stability import StabilityConfig, cstar, select

log = logging.getLogger("copc")

THREADS_ENV = "COPC_THREADS"

COMMON_DEFAULTS = {"outdir": "out", "threads": None, "record_timing": False}
LEARN_DEFAULTS = {
    "outcome": None,
    "tier_map": None,
    "impute": None,
    "variant": "copc-stable",
    "alpha": 0.02,
    "max_level": None,
    "dot_style": "plain",
    "vstruct_within_tier_only": False,
    "no_rule4": False,
}
DEFAULTS = {
    "simulate": {
        "scenario": None,
        "seed": None,
        "replicates": None,
        "visits": None,
        "per_visit": None,
        "n_obs": None,
        "alpha": None,
        "rho": None,
        "shd_mode": None,
        "target": None,
        "effects": False,
    },
    "learn": dict(LEARN_DEFAULTS),
    "ida": dict(LEARN_DEFAULTS, bins=None),
    "cstar": dict(
        LEARN_DEFAULTS,
        seed=None,
        runs=300,
        subsample=30,
        q=None,
        pcer=0.005,
        bins=None,
        save_graphs=False,
    ),
    "aggregate": {"threshold": 0.2, "dot_style": "plain", "pattern": "*.dot"},
}
FLAGS = {"record_timing", "effects", "vstruct_within_tier_only", "no_rule4", "save_graphs"}
INTS = {"threads", "seed", "replicates", "visits", "per_visit", "n_obs", "max_level", "runs", "subsample", "q", "bins"}
FLOATS = {"alpha", "rho", "pcer", "threshold"}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file with option defaults")
    p.add_argument("-o", "--outdir", help="output directory (default: out)")
    p.add_argument("--threads", type=int, help=f"worker cap (default: ${THREADS_ENV} or 1)")
    p.add_argument("--record-timing", action="store_true", default=None, help="add wall times to JSON outputs")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", nargs="?", help="CSV with NAME.vK columns")
    p.add_argument("--outcome", help="binary outcome column")
    p.add_argument("--tier-map", help="key = value file mapping column to tier (overrides .vK)")
    p.add_argument("--impute", choices=("mean",), help="mean-impute missing covariate cells")


def _add_learn(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=VARIANTS, help="default: copc-stable")
    p.add_argument("--alpha", type=float, help="CI test level (default: 0.02)")
    p.add_argument("--max-level", type=int, help="largest conditioning set size")
    p.add_argument("--dot-style", choices=STYLES, help="plain (-- for undirected) or graphviz")
    p.add_argument(
        "--vstruct-within-tier-only",
        action="store_true",
        default=None,
        help="only orient colliders whose three vertices share a tier",
    )
    p.add_argument("--no-rule4", action="store_true", default=None, help="skip the fourth orientation rule")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"copc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="compare PC-stable and COPC-stable on simulated data")
    _add_common(p)
    p.add_argument("--scenario", help="key = value scenario file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a scenario field")
    p.add_argument("--seed", type=int, help="master seed (generated and printed when absent)")
    p.add_argument("--replicates", type=int)
    p.add_argument("--visits", type=int)
    p.add_argument("--per-visit", type=int)
    p.add_argument("--n-obs", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--shd-mode", choices=("full", "adjacency-only"))
    p.add_argument("--target", choices=("tiered", "cpdag"), help="reference graph for SHD")
    p.add_argument("--effects", action="store_true", default=None, help="also score effect MSE")

    p = sub.add_parser("learn", help="learn a CPDAG and write it as DOT")
    _add_common(p)
    _add_data(p)
    _add_learn(p)

    p = sub.add_parser("ida", help="per-covariate effect lower bounds on the outcome")
    _add_common(p)
    _add_data(p)
    _add_learn(p)
    p.add_argument("--bins", type=int, help="also write binned counts of the lower bounds")

    p = sub.add_parser("cstar", help="stability ranking over subsamples")
    _add_common(p)
    _add_data(p)
    _add_learn(p)
    p.add_argument("--seed", type=int, help="master seed (generated and printed when absent)")
    p.add_argument("--runs", type=int, help="number of subsamples (default: 300)")
    p.add_argument("--subsample", type=int, help="subsample size (default: 30)")
    p.add_argument("--q", type=int, help="top-list size (default: ceil(p/10))")
    p.add_argument("--pcer", type=float, help="selection threshold (default: 0.005)")
    p.add_argument("--bins", type=int, help="also write binned counts of the median effects")
    p.add_argument("--save-graphs", action="store_true", default=None, help="write each run's CPDAG to runs/")

    p = sub.add_parser("aggregate", help="edge frequencies across a directory of CPDAG DOT files")
    _add_common(p)
    p.add_argument("directory", nargs="?")
    p.add_argument("--threshold", type=float, help="minimum edge frequency (default: 0.2)")
    p.add_argument("--dot-style", choices=STYLES)
    p.add_argument("--pattern", help="file glob inside the directory (default: *.dot)")
    return parser


def _convert(key: str, value: str):
    try:
        if key in FLAGS:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if key in INTS:
            return int(value)
        if key in FLOATS:
            return float(value)
    except ValueError:
        raise InputError(f"config: bad value {value!r} for {key!r}") from None
    return value


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Merge command line, config file and defaults, in that order of priority."""
    defaults = dict(COMMON_DEFAULTS, **DEFAULTS[command])
    file_values = {}
    if getattr(args, "config", None):
        for key, value in load_kv(args.config).items():
            k = key.replace("-", "_")
            if k not in defaults and k not in ("data", "directory"):
                raise InputError(f"config: unknown option {key!r} for {command}")
            file_values[k] = value if k in ("data", "directory") else _convert(k, value)
    out = {}
    for key in list(defaults) + [k for k in ("data", "directory") if hasattr(args, k)]:
        cli = getattr(args, key, None)
        if cli is not None:
            out[key] = cli
        elif key in file_values:
            out[key] = file_values[key]
        else:
            out[key] = defaults.get(key)
    if out.get("threads") is None:
        env = os.environ.get(THREADS_ENV)
        try:
            out["threads"] = int(env) if env else 1
        except ValueError:
            raise InputError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if out["threads"] < 1:
        raise InputError("--threads must be at least 1")
    return out


def _seed(opts: dict) -> int:
    if opts.get("seed") is None:
        opts["seed"] = secrets.randbelow(2**31)
        print(f"seed: {opts['seed']}", file=sys.stderr)
    return opts["seed"]


def _outdir(opts: dict) -> Path:
    out = Path(opts["outdir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(opts: dict, need_outcome: bool):
    if not opts.get("data"):
        raise InputError("a data CSV is required")
    if need_outcome and not opts.get("outcome"):
        raise InputError("--outcome is required for this command")
    return ingest_csv(opts["data"], opts.get("outcome"), opts.get("tier_map"), opts.get("impute"))


def _learn_config(opts: dict) -> LearnConfig:
    return LearnConfig(
        alpha=opts["alpha"],
        variant=opts["variant"],
        max_level=opts["max_level"],
        rule4=not opts["no_rule4"],
        vstruct_within_tier_only=bool(opts["vstruct_within_tier_only"]),
    )


def _inputs(opts: dict) -> list:
    return [p for p in (opts.get("data"), opts.get("tier_map"), opts.get("config")) if p]


def cmd_simulate(opts: dict) -> int:
    values = load_kv(opts["scenario"]) if opts["scenario"] else {}
    for item in opts.get("set") or []:
        if "=" not in item:
            raise InputError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    direct = {
        "replicates": "n_replicates",
        "visits": "n_visits",
        "per_visit": "p_per_visit",
        "n_obs": "n_obs",
        "alpha": "alpha",
        "rho": "rho",
        "shd_mode": "shd_mode",
        "target": "target",
        "effects": "effects",
    }
    for opt, field_name in direct.items():
        if opts.get(opt) not in (None, False):
            values[field_name] = opts[opt]
    if opts.get("seed") is None and "master_seed" in values:
        opts["seed"] = int(values["master_seed"])
    values["master_seed"] = _seed(opts)
    sc = SimScenario.from_mapping(values)
    out = _outdir(opts)
    mpath = manifest_path(out)

    t0 = time.perf_counter()
    res = run_comparison(sc, n_jobs=opts["threads"])
    elapsed = time.perf_counter() - t0

    cols = ["replicate", "variant", *METRIC_COLUMNS, "true_edges"]
    write_table(out / "replicates.csv", cols, ([r[c] for c in cols] for r in res.rows))
    summary = res.summary()
    write_table(
        out / "summary.csv",
        ["variant", "metric", "mean", "sd", "se"],
        ([v, m, *stats] for (v, m), stats in summary.items()),
    )
    doc = {
        "manifest": mpath.name,
        "scenario": sc.resolved(),
        "replicates": sc.n_replicates,
        "failed_replicates": res.failed,
        "summary": {f"{v}/{m}": {"mean": s[0], "sd": s[1], "se": s[2]} for (v, m), s in summary.items()},
    }
    if opts["record_timing"]:
        doc["wall_time_s"] = round(elapsed, 6)
    write_json(out / "summary.json", doc)
    for v in ("pc-stable", "copc-stable"):
        sens, shd_ = summary[(v, "sensitivity")], summary[(v, "shd")]
        print(f"{v:12s} sensitivity {sens[0]:.3f} ({sens[1]:.3f})  shd {shd_[0]:.1f} ({shd_[1]:.1f})")
    warnings = [f"{len(res.failed)} replicates failed"] if res.failed else []
    write_manifest(
        out,
        "simulate",
        {**opts, "scenario_resolved": sc.resolved()},
        seeds={"master_seed": sc.master_seed, "replicate_seed": "SeedSequence([master_seed, k]).spawn(3)"},
        inputs=[p for p in (opts["scenario"], opts.get("config")) if p],
        artifacts=[out / "replicates.csv", out / "summary.csv", out / "summary.json"],
        warnings=warnings,
        timings={"total_s": round(elapsed, 6)} if opts["record_timing"] else None,
        path=mpath,
    )
    return 0


def _learn(opts: dict, need_outcome: bool):
    data, warnings = _load(opts, need_outcome)
    for w in warnings:
        log.warning(w)
    res = run(data, _learn_config(opts))
    return data, warnings, res


def _write_graph(out: Path, res, opts: dict, mpath: Path) -> Path:
    path = out / "cpdag.dot"
    path.write_text(
        pdag_to_dot(res.cpdag, style=opts["dot_style"], comments=[f"variant={res.config.variant} alpha={res.config.alpha}", f"manifest={mpath.name}"])
    )
    return path


def _diagnostics(res, opts: dict, mpath: Path) -> dict:
    kinds = count_edge_kinds(res.cpdag)
    return {
        "manifest": mpath.name,
        **res.record(timing=opts["record_timing"]),
        "directed": kinds.directed,
        "undirected": kinds.undirected,
        "non_chronological": kinds.non_chronological,
    }


def cmd_learn(opts: dict) -> int:
    data, warnings, res = _learn(opts, need_outcome=False)
    out = _outdir(opts)
    mpath = manifest_path(out)
    dot_path = _write_graph(out, res, opts, mpath)
    diag = _diagnostics(res, opts, mpath)
    write_json(out / "learn.json", diag)
    print(f"{diag['edges']} edges ({diag['directed']} directed, {diag['undirected']} undirected), {res.n_tests} CI tests")
    write_manifest(
        out,
        "learn",
        opts,
        inputs=_inputs(opts),
        artifacts=[dot_path, out / "learn.json"],
        warnings=warnings,
        timings={"learn_s": round(res.wall_time, 6)} if opts["record_timing"] else None,
        path=mpath,
    )
    return 0


def cmd_ida(opts: dict) -> int:
    data, warnings, res = _learn(opts, need_outcome=True)
    t0 = time.perf_counter()
    effects = estimate_effects(data, res.cpdag)
    elapsed = time.perf_counter() - t0
    out = _outdir(opts)
    mpath = manifest_path(out)
    dot_path = _write_graph(out, res, opts, mpath)
    names = data.names
    rows = []
    for m, s in effects:
        sets = ";".join("{" + ",".join(names[k] for k in sorted(ps)) + "}" for ps in m.parent_sets)
        rows.append([s.name, s.tier, s.ambiguity, s.lower_bound, s.median_effect, sets])
    write_table(out / "effects.csv", ["covariate", "visit", "ambiguity", "lower_bound", "median_effect", "parent_sets"], rows)
    artifacts = [dot_path, out / "effects.csv"]
    if opts["bins"]:
        write_table(out / "effects_hist.csv", ["lower", "upper", "count"], histogram_rows([s.lower_bound for _, s in effects], opts["bins"]))
        artifacts.append(out / "effects_hist.csv")
    diag = _diagnostics(res, opts, mpath)
    diag["skipped_fits"] = sum(m.skipped for m, _ in effects)
    if opts["record_timing"]:
        diag["effects_s"] = round(elapsed, 6)
    write_json(out / "ida.json", diag)
    artifacts.append(out / "ida.json")
    for _, s in sorted(effects, key=lambda e: (-e[1].lower_bound, e[1].name))[:10]:
        print(f"{s.name:20s} lower bound {s.lower_bound:.4f}  ambiguity {s.ambiguity}")
    write_manifest(out, "ida", opts, inputs=_inputs(opts), artifacts=artifacts, warnings=warnings, path=mpath)
    return 0


def cmd_cstar(opts: dict) -> int:
    data, warnings = _load(opts, need_outcome=True)
    seed = _seed(opts)
    cfg = StabilityConfig(
        n_runs=opts["runs"],
        subsample_size=opts["subsample"],
        q=opts["q"],
        alpha=opts["alpha"],
        variant=opts["variant"],
        pcer_threshold=opts["pcer"],
        master_seed=seed,
    )
    t0 = time.perf_counter()
    rep = cstar(data, cfg, n_jobs=opts["threads"], keep_graphs=opts["save_graphs"])
    elapsed = time.perf_counter() - t0
    out = _outdir(opts)
    mpath = manifest_path(out)
    chosen = select(rep)

    rows = [
        [rep.names[k], rep.tiers[k], rep.pi[k], rep.pcer[k], bool(rep.selected[k]), rep.median_effect[k]]
        for k in rep.order()
    ]
    write_table(out / "stability.csv", ["covariate", "visit", "pi", "pcer", "selected", "median_effect"], rows)
    write_table(
        out / "runs.csv",
        ["run", "attempt", "covariate", "rank", "lower_bound", "ambiguity", "top"],
        (
            [r.run, r.attempt, rep.names[k], int(r.ranks[k]), r.lower_bounds[k], int(r.ambiguity[k]), bool(r.top[k])]
            for r in rep.runs
            for k in range(rep.p)
        ),
    )
    write_table(out / "ambiguity.csv", ["ambiguity", "count"], rep.ambiguity_distribution().items())
    artifacts = [out / "stability.csv", out / "runs.csv", out / "ambiguity.csv"]
    if opts["bins"]:
        write_table(out / "effects_hist.csv", ["lower", "upper", "count"], histogram_rows(rep.median_effect, opts["bins"]))
        artifacts.append(out / "effects_hist.csv")
    if opts["save_graphs"]:
        gdir = out / "runs"
        gdir.mkdir(exist_ok=True)
        for r in rep.runs:
            path = gdir / f"run_{r.run:04d}.dot"
            path.write_text(pdag_to_dot(r.cpdag, name=f"run_{r.run}", style=opts["dot_style"]))
            artifacts.append(path)
    doc = {
        "manifest": mpath.name,
        "q": rep.q,
        "p": rep.p,
        "n_runs": cfg.n_runs,
        "failed_runs": rep.failed_runs,
        "selected": chosen,
        "pcer_threshold": cfg.pcer_threshold,
    }
    if opts["record_timing"]:
        doc["wall_time_s"] = round(elapsed, 6)
    write_json(out / "stability.json", doc)
    artifacts.append(out / "stability.json")
    print(f"q={rep.q} p={rep.p} runs={len(rep.runs)} failed={len(rep.failed_runs)}")
    print("selected: " + (", ".join(chosen) if chosen else "(none)"))
    write_manifest(
        out,
        "cstar",
        {**opts, "q_resolved": rep.q},
        seeds={"master_seed": seed, "run_seed": "SeedSequence([master_seed, run, attempt])"},
        inputs=_inputs(opts),
        artifacts=artifacts,
        warnings=warnings + ([f"{len(rep.failed_runs)} runs failed"] if rep.failed_runs else []),
        timings={"total_s": round(elapsed, 6)} if opts["record_timing"] else None,
        path=mpath,
    )
    return 0


def cmd_aggregate(opts: dict) -> int:
    if not opts.get("directory"):
        raise InputError("a directory of DOT files is required")
    src = Path(opts["directory"])
    if not src.is_dir():
        raise InputError(f"{src} is not a directory")
    files = sorted(src.glob(opts["pattern"]))
    if not files:
        raise InputError(f"no files matching {opts['pattern']} in {src}")
    graphs = [read_dot(f.read_text()) for f in files]
    s = aggregate_cpdags(graphs, opts["threshold"])
    out = _outdir(opts)
    mpath = manifest_path(out)
    names = [v.name for v in s.vertices]
    (out / "summary.dot").write_text(summary_to_dot(s, style=opts["dot_style"], comments=[f"manifest={mpath.name}"]))
    write_table(
        out / "edges.csv",
        ["from", "to", "mark", "count", "frequency", "count_forward", "count_backward", "count_undirected"],
        ([names[e.a], names[e.b], e.mark.value, e.count, float(e.frequency), e.count_ab, e.count_ba, e.count_undirected] for e in s.edges),
    )
    print(f"{len(s.edges)} edges at frequency >= {opts['threshold']} across {s.n_graphs} graphs")
    write_manifest(
        out,
        "aggregate",
        opts,
        inputs=files + ([opts["config"]] if opts.get("config") else []),
        artifacts=[out / "summary.dot", out / "edges.csv"],
        path=mpath,
    )
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "learn": cmd_learn,
    "ida": cmd_ida,
    "cstar": cmd_cstar,
    "aggregate": cmd_aggregate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(args.command, args)
        opts["config"] = args.config
        if args.command == "simulate":
            opts["set"] = args.set
        return COMMANDS[args.command](opts)
    except NumericalError as exc:
        print(f"copc: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"copc: input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
