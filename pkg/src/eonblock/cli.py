"""Command-line entry point: ``eonblock {exact,approx,sim,counts,compare}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from .model import ALL_MODES, ConfigError, OperationMode, ScenarioConfig, load_config
from .report import (
    ReportKeyMismatch, ReportRow, Tolerance, compare, od_labels, read_report, select, write_csv,
    write_report,
)

log = logging.getLogger("eonblock")

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_ENGINE = 4

WORKERS_ENV = "EONBLOCK_WORKERS"


# ------------------------------------------------------------------ helpers

def builtin_configs() -> list[str]:
    root = resources.files("eonblock") / "configs"
    return sorted(p.name.rsplit(".", 1)[0] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_config(name: str) -> ScenarioConfig:
    """Load a config file, or a bundled scenario by name (``link10``, ``nsf100``...)."""
    path = Path(name)
    if path.exists():
        return load_config(path)
    stem = path.name.split(".", 1)[0]
    bundled = resources.files("eonblock") / "configs" / f"{stem}.yaml"
    if bundled.is_file():
        return load_config(bundled.read_text())
    raise ConfigError("--config", f"no such file or bundled scenario: {name!r} "
                                  f"(bundled: {', '.join(builtin_configs())})")


def parse_floats(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(flag, f"expected comma-separated numbers, got {text!r}") from None


def parse_modes(text: str | None, config: ScenarioConfig) -> list[OperationMode]:
    if not text:
        return [config.mode]
    if text.strip().lower() == "all":
        return list(ALL_MODES)
    try:
        return [OperationMode.parse(m.strip()) for m in text.split(",") if m.strip()]
    except ValueError as exc:
        raise ConfigError("--modes", str(exc)) from None


def workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"expected an integer, got {raw!r}") from None


def sweep(config: ScenarioConfig, args) -> list[ScenarioConfig]:
    loads = parse_floats(args.loads, "--loads") if args.loads else list(config.loads)
    if not loads:
        raise ConfigError("--loads", "no loads given on the command line or in the config")
    modes = parse_modes(args.modes, config)
    # each point carries its own load so rows are labelled correctly
    return [config.with_mode(m).at_load(load).replace(loads=(load,)) for m in modes for load in loads]


# ------------------------------------------------------------------ engines

def run_exact_point(config: ScenarioConfig, max_states: int, method: str) -> ReportRow:
    from .exact import solve_exact

    res = solve_exact(config, max_states=max_states, method=method)
    meta = {"states": res.states, "component_sizes": res.component_sizes, "solver": method}
    return ReportRow(config.mode.name, "exact", "", config.loads[0], od_labels(config),
                     tuple(tuple(r) for r in res.bp), res.overall, res.runtime_s, meta)


def run_approx_point(config: ScenarioConfig, variant: str, trace_dir: str | None) -> ReportRow:
    from .approx import count_table_for, fixed_point, write_trace_csv

    table = count_table_for(config)
    rep = fixed_point(config, variant, table=table)
    meta = {
        "iterations": rep.iterations, "converged": rep.converged, "max_delta": rep.max_delta,
        "damped": rep.damped, "epsilon": config.epsilon,
        "counts": f"{table.policy.value}-{'enumerated' if table.policy.value == 'ff' else 'closed-form'}",
    }
    if trace_dir:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
        name = f"trace_{config.mode.name}_{variant}_{config.loads[0]:g}.csv"
        with open(Path(trace_dir) / name, "w", newline="") as fh:
            write_trace_csv(rep, fh)
    return ReportRow(config.mode.name, "approx", variant, config.loads[0], od_labels(config),
                     tuple(tuple(r) for r in rep.bp), rep.overall, rep.runtime_s, meta)


def run_sim_point(config: ScenarioConfig, replications: int) -> ReportRow:
    from .sim import pool_results, run_sim

    results = [run_sim(config, stream=s) for s in range(replications)]
    res = results[0] if replications == 1 else pool_results(config, results)
    meta = res.meta()
    meta.pop("ci")
    meta["replications"] = replications
    return ReportRow(config.mode.name, "sim", "", config.loads[0], od_labels(config),
                     tuple(tuple(r) for r in res.bp), res.overall, res.runtime_s, meta,
                     tuple(tuple(r) for r in res.ci))


def _dispatch(fn, points: list, extra: tuple) -> list[ReportRow]:
    n = min(workers(), len(points))
    if n <= 1:
        return [fn(p, *extra) for p in points]
    with ProcessPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(fn, p, *extra) for p in points]
        return [f.result() for f in futures]


def emit(rows: list[ReportRow], out: str | None) -> None:
    if out:
        csv_path, json_path = write_report(rows, out)
        log.info("wrote %s and %s", csv_path, json_path)
    else:
        write_csv(rows, sys.stdout)


# ------------------------------------------------------------------ commands

def cmd_exact(args) -> int:
    config = resolve_config(args.config)
    points = sweep(config, args)
    if args.dump_states:
        from .exact import build_state_space, components, dump_state_space

        Path(args.dump_states).mkdir(parents=True, exist_ok=True)
        for mode in dict.fromkeys(p.mode for p in points):
            cfg = config.with_mode(mode)
            for g, group in enumerate(components(cfg)):
                space = build_state_space(cfg, group, args.max_states)
                with open(Path(args.dump_states) / f"states_{mode.name}_{g + 1}.tsv", "w") as fh:
                    dump_state_space(space, fh)
    emit(_dispatch(run_exact_point, points, (args.max_states, args.solver)), args.out)
    return EXIT_OK


def cmd_approx(args) -> int:
    config = resolve_config(args.config)
    if args.epsilon is not None:
        config = config.replace(epsilon=args.epsilon)
    variant = (args.variant or config.variant).lower()
    points = sweep(config, args)
    rows = _dispatch(run_approx_point, points, (variant, args.trace_dir))
    emit(rows, args.out)
    if not all(r.meta["converged"] for r in rows):
        log.warning("some points did not converge; see the meta column")
    return EXIT_OK


def cmd_sim(args) -> int:
    config = resolve_config(args.config)
    changes = {}
    if args.requests is not None:
        changes["requests"] = args.requests
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        config = config.replace(**changes)
    points = sweep(config, args)
    emit(_dispatch(run_sim_point, points, (args.replications,)), args.out)
    return EXIT_OK


def cmd_counts(args) -> int:
    from .statecount import enumerate_link_states, rf_count_table, write_counts_csv

    widths = tuple(int(v) for v in parse_floats(args.d, "--d"))
    if any(w < 1 or w > args.C for w in widths) or args.C < 1:
        raise ConfigError("--d", "class widths must lie between 1 and C")
    if args.policy == "rf":
        table = rf_count_table(args.C, widths)
    else:
        table = enumerate_link_states("ff", args.C, widths).table
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            write_counts_csv(table, fh)
    else:
        write_counts_csv(table, sys.stdout)
    return EXIT_OK


def _selection(text: str | None) -> dict:
    out = {}
    for item in (text or "").split(","):
        if not item.strip():
            continue
        key, _, value = item.partition("=")
        if key not in ("engine", "variant", "mode"):
            raise ConfigError("--select", f"can only select on engine, variant or mode, not {key!r}")
        out[key] = value
    return out


def cmd_compare(args) -> int:
    a = select(read_report(args.report_a), **_selection(args.select_a))
    b = select(read_report(args.report_b), **_selection(args.select_b))
    tol = Tolerance(args.rtol, args.atol, args.last_digit, args.ci_multiple)
    result = compare(a, b, tol, overall_only=args.overall_only)
    for d in result.rows:
        mode, load, od, cls = d.key
        status = "ok  " if d.passed else "FAIL"
        print(f"{status} {mode:6s} load={load:<8g} od={od:<6s} class={cls:<2s} "
              f"a={d.a:.4e} b={d.b:.4e} diff={d.abs_diff:.2e} allowed={d.allowed:.2e}")
    print(result.summary())
    return EXIT_OK if result.passed else EXIT_MISMATCH


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eonblock",
        description="Blocking probabilities for elastic optical networks.",
        epilog=f"Sweep points run in parallel when {WORKERS_ENV} is set above 1.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario(p):
        p.add_argument("--config", required=True, help="scenario file or bundled scenario name")
        p.add_argument("--loads", help="comma-separated offered loads (default: from config)")
        p.add_argument("--modes", help="comma-separated rf,ff,rf-sc,ff-sc or 'all' (default: from config)")
        p.add_argument("--out", help="output stem; writes <stem>.csv and <stem>.json (default: CSV to stdout)")

    p = sub.add_parser("exact", help="exact CTMC solution")
    scenario(p)
    p.add_argument("--max-states", type=int, default=2_000_000)
    p.add_argument("--solver", choices=["auto", "dense", "lsqr", "direct"], default="auto")
    p.add_argument("--dump-states", metavar="DIR", help="write every state space to DIR")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("approx", help="reduced-state fixed-point approximation")
    scenario(p)
    p.add_argument("--variant", choices=["ees", "soc", "uniform"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--trace-dir", metavar="DIR", help="write per-point iteration traces to DIR")
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("sim", help="discrete-event simulation")
    scenario(p)
    p.add_argument("--requests", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int, default=1)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("counts", help="per-occupancy single-link pattern counts")
    p.add_argument("--C", type=int, required=True)
    p.add_argument("--d", required=True, help="comma-separated class widths")
    p.add_argument("--policy", choices=["rf", "ff"], default="rf")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_counts)

    p = sub.add_parser("compare", help="diff two reports within a tolerance")
    p.add_argument("report_a")
    p.add_argument("report_b", help="reference report")
    p.add_argument("--rtol", type=float, default=0.0)
    p.add_argument("--atol", type=float, default=0.0)
    p.add_argument("--last-digit", type=int, metavar="SIG",
                   help="allow one unit in the last of SIG significant figures of the reference")
    p.add_argument("--ci-multiple", type=float, help="allow this many CI half-widths")
    p.add_argument("--overall-only", action="store_true", help="compare aggregate rows only")
    p.add_argument("--select-a", help="filter first report, e.g. engine=approx,variant=ees")
    p.add_argument("--select-b", help="filter second report")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "replications", 1) < 1:
        print("error: --replications must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ReportKeyMismatch, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # engine failures surface with their type
        print(f"engine error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
