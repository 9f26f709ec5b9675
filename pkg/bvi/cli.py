"""
Command line front end: generate game matrices, run a single configuration,
sweep batch sizes, tune step sizes by grid search, and plot trace files.

Every subcommand accepts the keys of the configuration schema as flags
(`--n 50`), as `--set key=value` pairs, or from a TOML file (`--config`),
in decreasing order of precedence. Exit codes: 0 on success, 2 for invalid
configurations, 3 for infeasible batch sizes, 4 for I/O and format errors.

Examples
--------
```
bvi gen --kind policeman-burglar --n 50 --seed 7 --out_dir matrices
bvi run --theory cor1 --b 1 --M 300 --out_dir runs
bvi sweep --methods optimistic vr-mirror-prox --batches 1 2 5 10 --parallel 4
bvi tune --eta_grid 0.01 0.1 --gamma_grid 0 0.05
bvi plot runs/sweep.csv --out runs/sweep.svg
```
"""
import os
import sys
import typing
import logging
import argparse

from bvi.config import ConfigError, ExperimentSettings, load_settings, \
    schema_help
from bvi.generators import generate
from bvi.harness import (GridSearchError, batches_to_target, budget_of,
                         grid_search, make_plan, make_problem,
                         resolve_config, run_method, sweep_batches,
                         write_traces)
from bvi.matrix_utils import MatrixFormatError, write_matrix, write_metadata
from bvi.plotting import TraceFormatError, plot_csv_files
from bvi.solvers.base import FeasibilityError
from bvi.solvers.registry import method_names
from bvi.utils import create_dir, set_logger

logger = logging.getLogger("bvi.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FEASIBILITY = 3
EXIT_IO = 4

FLAG_ALIASES = {"n": ["--M"], "generator": ["--kind"]}
METHOD_KEYS = ("method", "methods")


def add_schema_arguments(parser: argparse.ArgumentParser):
    """One override flag per schema key; values are validated by the schema."""
    group = parser.add_argument_group("configuration overrides")
    for name, field in ExperimentSettings.model_fields.items():
        is_list = typing.get_origin(field.annotation) in (list, typing.List)
        choices = method_names() if name in METHOD_KEYS else None
        group.add_argument(f"--{name}", *FLAG_ALIASES.get(name, []),
                           dest=name, nargs="+" if is_list else None,
                           choices=choices, default=None,
                           metavar=name.upper(),
                           help=field.description)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bvi", description="Batched optimistic variance-reduced methods "
                                "for finite-sum variational inequalities.")
    subparsers = parser.add_subparsers(dest="cmd", required=True)

    commands = {
        "gen": "Generate a game matrix and its metadata sidecar.",
        "run": "Run a single configuration and write its trace.",
        "sweep": "Run every method, batch size and seed of a plan.",
        "tune": "Grid search over step size and momentum.",
        "plot": "Plot gap against oracle calls from trace files.",
    }
    for cmd, description in commands.items():
        subparser = subparsers.add_parser(
            cmd, help=description, description=description,
            epilog=schema_help(),
            formatter_class=argparse.RawDescriptionHelpFormatter)
        if cmd == "plot":
            subparser.add_argument('traces', type=str, nargs="*",
                                   help='Trace CSV files to plot.')
        subparser.add_argument('--config', type=str,
                               help='TOML configuration file.')
        subparser.add_argument('--set', action='append', default=[],
                               dest='pairs', metavar='KEY=VALUE',
                               help='Override a configuration key.')
        subparser.add_argument('--out', type=str,
                               help='Output file, instead of the default '
                                    'name in the output directory.')
        subparser.add_argument('--log_dir', action='store', type=str,
                               help='Directory where log files will be '
                                    'generated.')
        subparser.add_argument('--debug', action='store_true', default=False,
                               help='Whether to print logging info messages.')
        add_schema_arguments(subparser)
    return parser


def cmd_gen(settings: ExperimentSettings, out_path: str = None) -> str:
    """Write a generated matrix and its sidecar metadata."""
    seed = settings.seed if settings.matrix_seed is None \
        else settings.matrix_seed
    A = generate(settings.generator, settings.n, seed=seed,
                 theta=settings.theta)
    params = {"n": settings.n} if settings.generator == "ramp" \
        else {"n": settings.n, "seed": seed, "theta": settings.theta}
    if out_path is None:
        suffix = "" if settings.generator == "ramp" else f"-s{seed}"
        out_path = os.path.join(create_dir(settings.out_dir),
                                f"{settings.generator}-n{settings.n}"
                                f"{suffix}.bvi")
    write_matrix(out_path, A)
    write_metadata(out_path, settings.generator, params)
    print(f"Matrix {settings.n}x{settings.n} written in {out_path}")
    return out_path


def cmd_run(settings: ExperimentSettings, out_path: str = None) -> str:
    """Run one method, print its parameters and summary, write its trace."""
    problem = make_problem(settings)
    config = resolve_config(problem, settings.method, settings)
    print(f"K={config.K} gamma={config.gamma:g} eta={config.eta:.6g} "
          f"b={config.b} M={problem.M}")
    record = run_method(problem, settings.method, settings, config=config)
    if out_path is None:
        out_path = os.path.join(
            create_dir(settings.out_dir),
            f"trace-{settings.method}-b{config.b}-s{config.seed}.csv")
    write_traces([record], out_path)
    print(f"final_gap={record.final_gap:.6g} total_calls={record.total_calls}")
    return out_path


def cmd_sweep(settings: ExperimentSettings, out_path: str = None) -> str:
    """Sweep batch sizes; writes the traces and a per-(method, b) summary."""
    problem = make_problem(settings)
    out_dir = create_dir(settings.out_dir)
    plan = make_plan(settings, problem, out_dir=out_dir)
    records = sweep_batches(plan, problem, n_jobs=settings.parallel)

    targets = batches_to_target(records, settings.target_ratio)
    targets["final_gap"] = [record.final_gap for record in records]
    summary = targets.groupby(["method", "b"], sort=False).median(
        numeric_only=True).reset_index().drop(columns="seed")
    out_path = os.path.join(out_dir, "sweep_summary.csv") \
        if out_path is None else out_path
    summary.to_csv(out_path, index=False)
    print(summary.to_string(index=False))
    return out_path


def cmd_tune(settings: ExperimentSettings, out_path: str = None) -> str:
    """Grid search for the run method; writes the leaderboard."""
    if len(settings.eta_grid) == 0:
        raise ConfigError("Tuning needs a non-empty eta_grid")
    problem = make_problem(settings)
    gamma_grid = settings.gamma_grid if len(settings.gamma_grid) > 0 \
        else [0. if settings.gamma is None else settings.gamma]
    best, leaderboard = grid_search(
        problem, settings.method, settings.eta_grid, gamma_grid,
        budget=budget_of(settings, problem), settings=settings,
        seeds=settings.seeds, n_jobs=settings.parallel)
    out_path = os.path.join(create_dir(settings.out_dir), "leaderboard.csv") \
        if out_path is None else out_path
    leaderboard.to_csv(out_path, index=False)
    print(leaderboard.to_string(index=False))
    print(f"best: eta={best.eta:g} gamma={best.gamma:g}")
    return out_path


def cmd_plot(settings: ExperimentSettings, traces, out_path: str = None
             ) -> str:
    out_path = os.path.join(create_dir(settings.out_dir), "traces.svg") \
        if out_path is None else out_path
    plot_csv_files(traces, out_path)
    print(f"Figure written in {out_path}")
    return out_path


def main(argv=None) -> int:
    """
    Parse the arguments, validate the configuration and dispatch the
    subcommand, mapping errors to the exit codes of the module docstring.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.debug:  # debug mode
        set_logger("bvi")
    if args.log_dir is not None:
        set_logger("bvi", log_console=False, log_dir=args.log_dir)

    flags = {name: getattr(args, name)
             for name in ExperimentSettings.model_fields}
    command_map = {
        "gen": cmd_gen,
        "run": cmd_run,
        "sweep": cmd_sweep,
        "tune": cmd_tune,
    }
    try:
        settings = load_settings(args.config, args.pairs, flags)
        if args.cmd == "plot":
            cmd_plot(settings, args.traces, args.out)
        else:
            command_map[args.cmd](settings, args.out)
    except FeasibilityError as err:
        print(f"Infeasible configuration: {err}", file=sys.stderr)
        return EXIT_FEASIBILITY
    except (OSError, MatrixFormatError, TraceFormatError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except GridSearchError as err:
        print(f"Tuning failed: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:  # including ConfigError
        print(f"Invalid configuration: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
