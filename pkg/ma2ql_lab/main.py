import functools
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable

import click

from ma2ql_lab import __version__
from ma2ql_lab.harness.compare import AXES, compare_runs, write_comparison
from ma2ql_lab.harness.plot import render_svg
from ma2ql_lab.harness.runner import run_experiment, solve_optimal, write_state_values_csv
from ma2ql_lab.meta.meta_tools import Ma2qlLabError
from ma2ql_lab.solvers.dp import JOINT_CAPACITY_LIMIT
from ma2ql_lab.solvers.metrics import nash_gap
from ma2ql_lab.utils import file_digest
from ma2ql_lab.wrangle.experiment import load_spec
from ma2ql_lab.wrangle.game import generate_game
from ma2ql_lab.wrangle.game_file import load_game, save_game
from ma2ql_lab.wrangle.policy_file import load_policy, save_nash_report, save_policy

LOG_FORMAT = "%(levelname)s %(asctime)s - %(message)s"
LOG_LEVEL_ENV = "MA2QL_LAB_LOG_LEVEL"


class CommandError(click.ClickException):
    """
    A package error surfaced on the command line. Exits with code 2 like a usage error.
    """

    exit_code = 2


def configure_logging(level: str | int = "WARNING", log_file: Path | None = None) -> None:
    """
    Send log records to stderr and, optionally, to a file too.
    """

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)

    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file, mode="w", encoding="utf-8"))
    for handler in handlers:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)

    if isinstance(level, str):
        level = level.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise CommandError(f"Unknown log level '{level}' in {LOG_LEVEL_ENV}.")
    root.setLevel(level)


def reports_errors(command: Callable) -> Callable:
    """
    Turn the package's own exceptions into clean CLI errors instead of tracebacks.
    """

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except Ma2qlLabError as e:
            logging.debug(f"{type(e).__name__}: {e.message}")
            raise CommandError(e.message) from e

    return wrapper


@click.group()
@click.version_option(__version__, prog_name="ma2ql-lab")
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
@click.option("--log-file", type=click.Path(dir_okay=False, path_type=Path), help="Also write the log to this file.")
def cli(verbose: int, log_file: Path | None) -> None:
    """
    Tabular lab for decentralized cooperative multi-agent learning.
    """

    if verbose:
        level: str | int = logging.INFO if verbose == 1 else logging.DEBUG
    else:
        level = os.environ.get(LOG_LEVEL_ENV, "WARNING")
    configure_logging(level, log_file)


@cli.command()
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), required=True)
@click.option("--states", type=click.IntRange(min=1), required=True)
@click.option("--agents", type=click.IntRange(min=1), required=True)
@click.option("--actions", type=click.IntRange(min=1), required=True)
@click.option("--gamma", type=float, required=True, help="Discount factor in [0, 1).")
@click.option("--horizon", type=click.IntRange(min=1), required=True)
@click.option("--noise", type=float, default=1e-6, show_default=True, help="Reward noise bound delta.")
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@reports_errors
def generate(
    seed: int, states: int, agents: int, actions: int, gamma: float, horizon: int, noise: float, output: Path
) -> None:
    """
    Generate a random cooperative stochastic game and write it to OUTPUT.
    """

    game = generate_game(seed, states, agents, actions, gamma, noise, horizon)
    save_game(game, output)
    click.echo(f"{file_digest(output)}  {output}")


@cli.command()
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--workers", type=click.IntRange(min=1), help="Worker processes. Overrides the spec's workers.")
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path), help="Overrides the spec's output_dir.")
@reports_errors
def run(spec_file: Path, workers: int | None, output_dir: Path | None) -> None:
    """
    Run every seed and sweep value of an experiment spec.
    """

    spec = load_spec(spec_file)
    if output_dir is not None:
        spec.output_dir = output_dir

    results = run_experiment(spec, workers)
    for result in results:
        final = result.run_log.records[-1]
        click.echo(f"{result.name}: final mean return {final.mean_return:.6f} after {final.env_steps} steps")
    click.echo(f"Results written to {spec.output_dir}")


@cli.command()
@click.argument("run_dirs", nargs=-1, type=click.Path(file_okay=False, path_type=Path))
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--plot", type=click.Path(dir_okay=False, path_type=Path), help="Also render an SVG plot here.")
@click.option("--axis", type=click.Choice(AXES), default="env_steps", show_default=True)
@reports_errors
def compare(run_dirs: tuple[Path, ...], output: Path, plot: Path | None, axis: str) -> None:
    """
    Align the aggregate curves of several run directories in one CSV.
    """

    grid, groups = compare_runs(list(run_dirs), axis)
    write_comparison(grid, groups, output, axis)
    if plot is not None:
        render_svg(grid, groups, plot, axis, title="mean return")
    click.echo(f"Compared {len(groups)} curve group(s) over {len(grid)} steps: {output}")


@cli.command("nash-check")
@click.argument("game_file", type=click.Path(dir_okay=False, path_type=Path))
@click.argument("policy_file", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False, path_type=Path), help="Where to write the report.")
@click.pass_context
@reports_errors
def nash_check(ctx: click.Context, game_file: Path, policy_file: Path, tol: float, output: Path | None) -> None:
    """
    Certify whether a joint policy is a Nash equilibrium of a game. Exits 0 if it is, 1 if not.
    """

    if not tol > 0:
        raise CommandError(f"--tol must be > 0, got {tol}.")

    game = load_game(game_file)
    policy = load_policy(policy_file)
    report = nash_gap(game, policy, tol)

    output = output or policy_file.with_name(f"{policy_file.stem}_nash.json")
    save_nash_report(report, output)

    gaps = ", ".join(f"{gap:.3e}" for gap in report.agent_gaps)
    click.echo(f"nash gap {report.overall_gap:.6e} (agents: {gaps}), tol {tol}: ", nl=False)
    click.echo("certified" if report.certified else "NOT certified")
    ctx.exit(0 if report.certified else 1)


@cli.command("solve-optimal")
@click.argument("game_file", type=click.Path(dir_okay=False, path_type=Path))
@click.option("-o", "--output-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("."))
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--episodes", type=click.IntRange(min=1), default=32, show_default=True)
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@click.option("--capacity-limit", type=click.IntRange(min=1), default=JOINT_CAPACITY_LIMIT, show_default=True)
@reports_errors
def solve_optimal_command(
    game_file: Path, output_dir: Path, tol: float, episodes: int, seed: int, capacity_limit: int
) -> None:
    """
    Solve the joint-action MDP of a game: writes the OPTIMAL joint policy and V* per state.
    """

    if not tol > 0:
        raise CommandError(f"--tol must be > 0, got {tol}.")

    game = load_game(game_file)
    run_log, optimum = solve_optimal(game, tol, episodes, seed, capacity_limit)

    output_dir.mkdir(parents=True, exist_ok=True)
    save_policy(optimum.policy, output_dir / "policy_optimal.json")
    write_state_values_csv(optimum.values, output_dir / "values_optimal.csv")

    record = run_log.records[0]
    click.echo(f"mean V* {optimum.values.mean():.6f} (initial-state value {record.joint_value:.6f})")
    click.echo(f"evaluated return {record.mean_return:.6f} +- {record.std_return:.6f} over {episodes} episodes")


def main() -> None:
    try:
        cli()
    except KeyboardInterrupt:
        sys.exit(130)


if __name__ == "__main__":
    main()
