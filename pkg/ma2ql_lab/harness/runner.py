"""
Runs every (seed, sweep value) cell of an experiment spec and writes its result files:

    run_<cell>.json             the full RunLog
    curve_<cell>.csv            the learning curve
    policy_<cell>.json          the final joint policy, readable by nash-check
    q_<cell>_agent<i>.csv       final Q-tables (trainers that keep them)
    values_<cell>.csv           per-state V* (optimal only)
    aggregate.csv               per-step mean and spread across seeds, per sweep value
"""

from __future__ import annotations

import logging
import multiprocessing
import time
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ma2ql_lab.learn.trainers import (
    evaluation_rng,
    train_alt_policy_iteration,
    train_iql,
    train_ma2ql,
    train_ma2ql_dp,
)
from ma2ql_lab.meta.meta_tools import Algorithm, CurveColumns
from ma2ql_lab.solvers.dp import JOINT_CAPACITY_LIMIT, JointOptimum, solve_joint_optimal
from ma2ql_lab.solvers.metrics import eval_return, nash_gap, noise_performance_bound
from ma2ql_lab.utils import atomic_write_text, format_float
from ma2ql_lab.wrangle.experiment import ExperimentSpec
from ma2ql_lab.wrangle.game import StochasticGame
from ma2ql_lab.wrangle.policy_file import save_policy, write_q_table_csv
from ma2ql_lab.wrangle.run_log import (
    AGGREGATE_FILE,
    EvalRecord,
    RunLog,
    aggregate_rows,
    csv_text,
    save_run_log,
    write_aggregate_csv,
    write_curve_csv,
)

OPTIMAL_COLUMNS = ["v_star_mean", "v_star_min", "v_star_max"]


class CellResult(NamedTuple):
    name: str
    seed: int
    sweep_value: int | None
    run_log: RunLog


def solve_optimal(
    game: StochasticGame,
    tol: float = 1e-6,
    eval_episodes: int = 32,
    seed: int = 0,
    capacity_limit: int = JOINT_CAPACITY_LIMIT,
) -> tuple[RunLog, JointOptimum]:
    """
    The OPTIMAL baseline as a one-record run log: V* of the joint-action MDP and the evaluated
    return of its greedy joint policy.
    """

    started = time.perf_counter()
    optimum = solve_joint_optimal(game, tol, capacity_limit)
    mean, std = eval_return(game, optimum.policy, eval_episodes, evaluation_rng(seed, 0))

    run_log = RunLog(
        algorithm=Algorithm.OPTIMAL.value,
        config={"tol": tol, "eval_episodes": eval_episodes, "seed": seed, "capacity_limit": capacity_limit},
        seed=seed,
        notes={
            "return_aggregation": "undiscounted episode sum",
            "value_iterations": optimum.iterations,
            "noise_value_loss_bound": noise_performance_bound(game.noise_delta, game.gamma),
        },
    )
    run_log.append(
        EvalRecord(
            env_steps=0,
            learn_steps=optimum.iterations,
            mean_return=mean,
            std_return=std,
            nash_gap=nash_gap(game, optimum.policy, tol).overall_gap,
            joint_value=float(game.init_dist @ optimum.values),
            state_values=optimum.values.tolist(),
        )
    )
    run_log.final_policy = optimum.policy
    run_log.update_counts = [0] * game.num_agents
    run_log.wall_clock = time.perf_counter() - started
    return run_log, optimum


def optimal_curve_text(run_log: RunLog) -> str:
    """
    The single-row curve of an OPTIMAL run, with the V* summary appended to the usual columns.
    """

    record = run_log.records[0]
    values = np.asarray(record.state_values)
    row = record.curve_row() + [format_float(values.mean()), format_float(values.min()), format_float(values.max())]
    return csv_text(CurveColumns.header() + OPTIMAL_COLUMNS, [row])


def write_state_values_csv(values: np.ndarray, path: Path) -> None:
    rows = [[str(state), format_float(value)] for state, value in enumerate(values)]
    atomic_write_text(path, csv_text(["state", "value"], rows))


def run_cell(spec: ExperimentSpec, seed: int, sweep_value: int | None = None) -> CellResult:
    """
    Build the cell's game, run the spec's algorithm on it and write the cell's files.
    """

    name = spec.cell_name(seed, sweep_value)
    game = spec.build_game(seed)
    dp = spec.dp_params(sweep_value)
    logging.info(f"Running {spec.algorithm.value} cell {name} on {game!r}")

    if spec.algorithm is Algorithm.IQL:
        run_log = train_iql(game, spec.train_config(seed, sweep_value))
    elif spec.algorithm is Algorithm.MA2QL:
        run_log = train_ma2ql(game, spec.train_config(seed, sweep_value))
    elif spec.algorithm is Algorithm.MA2QL_DP:
        run_log = train_ma2ql_dp(game, dp["rounds"], dp["t_per_turn"], dp["tol"], dp["eval_episodes"], seed)
    elif spec.algorithm is Algorithm.ALT_PI:
        run_log = train_alt_policy_iteration(game, dp["max_rounds"], dp["tol"], dp["eval_episodes"], seed)
    else:
        run_log, _ = solve_optimal(game, dp["tol"], dp["eval_episodes"], seed, dp["capacity_limit"])

    output_dir = spec.output_dir
    output_dir.mkdir(parents=True, exist_ok=True)
    save_run_log(run_log, output_dir / f"run_{name}.json")
    if run_log.final_policy is not None:
        save_policy(run_log.final_policy, output_dir / f"policy_{name}.json")
    for q in run_log.final_q_tables:
        write_q_table_csv(q, output_dir / f"q_{name}_agent{q.agent_index}.csv")

    if spec.algorithm is Algorithm.OPTIMAL:
        atomic_write_text(output_dir / f"curve_{name}.csv", optimal_curve_text(run_log))
        write_state_values_csv(np.asarray(run_log.records[0].state_values), output_dir / f"values_{name}.csv")
    else:
        write_curve_csv(run_log.records, output_dir / f"curve_{name}.csv")

    return CellResult(name, seed, sweep_value, run_log)


def _run_cell_star(args: tuple) -> CellResult:
    return run_cell(*args)


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> list[CellResult]:
    """
    Run every cell of a spec, in a process pool when more than one worker is asked for.

    Each cell is independent and writes its own files atomically, so the output doesn't
    depend on the worker count. Results come back in the spec's cell order.
    """

    workers = workers or spec.workers
    jobs = [(spec, seed, value) for seed, value in spec.cells()]
    logging.info(f"Running {len(jobs)} cell(s) of {spec.algorithm.value} with {workers} worker(s)")

    if workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(processes=min(workers, len(jobs))) as pool:
            results = pool.map(_run_cell_star, jobs)
    else:
        results = [run_cell(*job) for job in jobs]

    rows = []
    values: list[int | None] = list(spec.sweep_values) if spec.sweep_axis else [None]
    for value in values:
        run_logs = [result.run_log for result in results if result.sweep_value == value]
        rows.extend(aggregate_rows(run_logs, value))
    write_aggregate_csv(rows, spec.output_dir / AGGREGATE_FILE)
    logging.info(f"Wrote {len(results)} cell(s) and {AGGREGATE_FILE} to {spec.output_dir}")
    return results
