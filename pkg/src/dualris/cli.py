"""Command-line front end: single runs, sweeps, MUSIC demos and plots.

Exit codes: 0 success, 2 invalid config/spec/CSV schema, 3 solver failure
(or every run of a sweep failed). All artifacts are written inside ``--out``.
"""
from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ConfigError, SystemConfig, dumps_config, load_config
from .io import SchemaError, confined, write_csv
from .orchestrator import (AGGREGATE_COLUMNS, ALGORITHMS, RESULT_COLUMNS, RUN_TRACE_COLUMNS,
                           TRACE_KEYS, TransmitInfeasible, _row, aggregate, joint_optimize,
                           loads_spec, run_experiment, run_rng)
from .scenario import make_scenario

PRESETS = tuple(f"fig{i}" for i in range(3, 10))
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _config(path) -> SystemConfig:
    return SystemConfig() if path is None else load_config(path)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")
    return resources.files("dualris").joinpath("presets", f"{name}.spec").read_text()


def _write(out_dir, name, columns, rows):
    return write_csv(confined(out_dir, name), columns, rows)


def _summary(config, algorithm, seed, result) -> str:
    last = result.trace.records[-1]
    lines = [
        f"seed={seed}",
        f"algorithm={algorithm}",
        f"topology={config.topology}",
        f"tau_extracted={result.tau!r}",
        f"tau_lifted={last.tau_lifted!r}",
        f"outer_iters={len(result.trace)}",
        f"termination={result.trace.termination}",
        "sinr=" + ", ".join(repr(float(s)) for s in result.sinr),
        "phase_methods=" + ", ".join("/".join(r.phase_methods) for r in result.trace.records),
    ]
    return "\n".join(lines) + "\n"


# -- subcommands -------------------------------------------------------------

def cmd_run(args) -> int:
    config = _config(args.config)
    algorithm = args.algorithm or "auto"
    out = Path(args.out)
    try:
        scenario = make_scenario(config, args.seed)
        result = joint_optimize(scenario, config, algorithm, rng=run_rng(args.seed),
                                record_timing=args.timing)
    except (TransmitInfeasible, np.linalg.LinAlgError) as exc:
        raise CliError(f"solver failure: {exc}", EXIT_SOLVER) from exc
    row = _row(config, algorithm, args.seed, result, "ok",
               sum(r.wall_ms for r in result.trace.records))
    trace_rows = [{**{k: row[k] for k in TRACE_KEYS}, "iteration": r.iteration,
                   "tau_lifted": r.tau_lifted, "tau": r.tau} for r in result.trace.records]
    _write(out, "run.csv", RESULT_COLUMNS, [row])
    _write(out, "trace.csv", RUN_TRACE_COLUMNS, trace_rows)
    summary = _summary(config, algorithm, args.seed, result)
    confined(out, "summary.txt").write_text(summary)
    confined(out, "config.txt").write_text(dumps_config(config))
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if (args.spec is None) == (args.preset is None):
        raise ConfigError("give exactly one of a spec path or --preset")
    text = preset_text(args.preset) if args.preset else Path(args.spec).read_text()
    if args.config:
        # config file values sit under the spec's own overrides
        text = Path(args.config).read_text() + "\n" + text
    spec = loads_spec(text, args.out)
    if args.seed is not None:
        spec.master_seed = args.seed
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        spec.seeds = args.seeds
    if args.algorithm:
        spec.axes["algorithm"] = [args.algorithm]
        spec.explicit_cells = [{k: v for k, v in c.items() if k != "algorithm"}
                               for c in spec.explicit_cells]
    spec.record_timing = args.timing
    try:
        spec.cells()  # validate every cell before any computation
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    def progress(done, total):
        if args.verbose:
            print(f"[{done}/{total}]", file=sys.stderr)

    rows = run_experiment(spec, n_jobs=args.jobs, progress=progress)
    out = Path(args.out)
    _write(out, "results.csv", RESULT_COLUMNS, rows)
    _write(out, "aggregate.csv", AGGREGATE_COLUMNS, aggregate(rows))
    _write(out, "trace.csv", RUN_TRACE_COLUMNS, [t for r in rows for t in r.get("_trace", [])])
    if args.format == "svg" and spec.plot:
        from .plotting import PLOT_KINDS, plot_csv
        source = "trace.csv" if PLOT_KINDS[spec.plot][4] == "trace" else "results.csv"
        plot_csv(confined(out, source), spec.plot, confined(out, f"{args.preset or 'sweep'}.svg"),
                 title=args.preset)
    ok = sum(r["status"] == "ok" for r in rows)
    print(f"{ok}/{len(rows)} runs ok; results in {out}")
    if ok == 0:
        raise CliError("every run in the sweep failed", EXIT_SOLVER)
    return EXIT_OK


def cmd_music_demo(args) -> int:
    from .sensing import (ESTIMATE_COLUMNS, SPECTRUM_COLUMNS, estimate_angles, estimate_rows,
                          simulate_echo, spectrum_rows, uv_grid)

    config = _config(args.config)
    if not 0 <= args.ris < config.n_active_ris:
        raise ConfigError(f"ris index {args.ris} out of range for topology {config.topology!r}")
    scenario = make_scenario(config, args.seed)
    est, P, _ = estimate_angles(simulate_echo(scenario, config, args.ris), config)
    grid = uv_grid(config.music_grid_size)
    out = Path(args.out)
    truth = scenario.uv_echo[args.ris]
    rows = estimate_rows(est)
    _write(out, "music_estimates.csv", ESTIMATE_COLUMNS, rows)
    _write(out, "music_truth.csv", ("user", "u", "v"),
           [{"user": k, "u": truth[k, 0], "v": truth[k, 1]} for k in range(truth.shape[0])])
    if args.format == "svg":
        _music_svg(P, grid, est, truth, confined(out, "music_spectrum.svg"))
    else:
        _write(out, "music_spectrum.csv", SPECTRUM_COLUMNS, spectrum_rows(P, grid, grid))
    for r in rows:
        print(f"user {r['user']}: u={r['u']:+.4f} v={r['v']:+.4f}")
    return EXIT_OK


def _music_svg(P, grid, est, truth, path):
    from .plotting import plt

    plt.rcParams["svg.hashsalt"] = "dualris"
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.imshow(10 * np.log10(P.T / P.max()), origin="lower", aspect="auto",
              extent=(grid[0], grid[-1], grid[0], grid[-1]), vmin=-40, vmax=0, cmap="viridis")
    ax.plot(truth[:, 0], truth[:, 1], "w+", ms=10, label="true")
    ax.plot(est.uv[:, 0], est.uv[:, 1], "rx", ms=7, label="estimate")
    ax.set_xlabel("u")
    ax.set_ylabel("v")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_plot(args) -> int:
    from .plotting import plot_csv

    name = args.name or f"{Path(args.csv).stem}_{args.kind}.svg"
    path = plot_csv(args.csv, args.kind, confined(args.out, name), title=args.title)
    print(path)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .plotting import PLOT_KINDS

    parser = argparse.ArgumentParser(prog="dualris", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, algorithm=True):
        p.add_argument("--config", help="key = value config file (SI units, _dbm/_db suffixes)")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", default="out", help="output directory (all artifacts stay inside)")
        if algorithm:
            p.add_argument("--algorithm", choices=ALGORITHMS)
        p.add_argument("--timing", action="store_true", help="record wall-clock times")

    p = sub.add_parser("run", help="one joint optimization")
    common(p)
    p.set_defaults(func=cmd_run, seed_default=42)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep from a spec file or preset")
    p.add_argument("spec", nargs="?")
    common(p)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--seeds", type=int, help="override the number of seeds per cell")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", choices=("csv", "svg"), default="csv",
                   help="svg also renders the preset's chart")
    p.set_defaults(func=cmd_sweep, seed_default=None)

    p = sub.add_parser("music-demo", help="sensing phase on one RIS: spectrum and estimates")
    common(p, algorithm=False)
    p.add_argument("--ris", type=int, default=0)
    p.add_argument("--format", choices=("csv", "svg"), default="csv")
    p.set_defaults(func=cmd_music_demo, seed_default=42)

    p = sub.add_parser("plot", help="SVG line chart from a results or trace CSV")
    p.add_argument("csv")
    p.add_argument("--kind", choices=sorted(PLOT_KINDS), required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--name")
    p.add_argument("--title")
    p.add_argument("--format", choices=("svg",), default="svg")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None and hasattr(args, "seed_default"):
        args.seed = args.seed_default
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
