from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ma2ql_lab.meta.meta_tools import CurveColumns, FormatError, ParameterError
from ma2ql_lab.solvers.dp import JointPolicy, QTable
from ma2ql_lab.utils import atomic_write_text, format_float
from ma2ql_lab.wrangle.game_file import check_format_version
from ma2ql_lab.wrangle.policy_file import policy_from_dict, policy_to_dict

RUN_LOG_VERSION = "1.0"
AGGREGATE_FILE = "aggregate.csv"
AGGREGATE_COLUMNS = [
    "sweep_value",
    "env_steps",
    "learn_steps",
    "mean_return_mean",
    "mean_return_std",
    "std_return_mean",
    "nash_gap_mean",
    "nash_gap_max",
    "sup_q_error_mean",
    "num_seeds",
]


@dataclass
class EvalRecord:
    """
    One point of a learning curve.

    For sample-based trainers env_steps counts environment transitions and learn_steps counts
    consumed batches. DP trainers count turns in env_steps and backups (or improvement steps)
    in learn_steps.
    """

    env_steps: int
    learn_steps: int
    mean_return: float
    std_return: float
    nash_gap: float | None = None
    sup_q_error: list[float | None] | None = None
    joint_value: float | None = None
    state_values: list[float] | None = None
    active_agent: int | None = None

    def curve_row(self) -> list[str]:
        """
        The record as a curve CSV row, ordered like CurveColumns.
        """

        sup_q_error = None
        if self.sup_q_error:
            known = [error for error in self.sup_q_error if error is not None]
            sup_q_error = max(known) if known else None

        return [
            str(self.env_steps),
            str(self.learn_steps),
            format_float(self.mean_return),
            format_float(self.std_return),
            format_float(self.nash_gap),
            format_float(sup_q_error),
        ]


@dataclass
class RunLog:
    """
    Everything a trainer run produced, enough to replay it exactly.

    wall_clock and the final Q-tables stay in memory only: the serialized log is a pure
    function of (game, config, seed), so identical runs produce identical files.
    """

    algorithm: str
    config: dict
    seed: int
    records: list[EvalRecord] = field(default_factory=list)
    final_policy: JointPolicy | None = None
    update_counts: list[int] = field(default_factory=list)
    notes: dict = field(default_factory=dict)
    wall_clock: float = field(default=0.0, compare=False)
    final_q_tables: list[QTable] = field(default_factory=list, compare=False, repr=False)

    def append(self, record: EvalRecord) -> None:
        if self.records and record.env_steps < self.records[-1].env_steps:
            raise ParameterError(
                f"Run log records must be monotone in env_steps"
                f" ({record.env_steps} after {self.records[-1].env_steps})."
            )
        self.records.append(record)

    def to_dict(self) -> dict:
        return {
            "format_version": RUN_LOG_VERSION,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "config": self.config,
            "notes": self.notes,
            "update_counts": list(self.update_counts),
            "final_policy": policy_to_dict(self.final_policy) if self.final_policy is not None else None,
            "records": [asdict(record) for record in self.records],
        }

    @classmethod
    def from_dict(cls, document: Any, location: str = "<memory>") -> RunLog:
        if not isinstance(document, dict):
            raise FormatError("run log must be a JSON object", location)
        check_format_version(document.get("format_version"), RUN_LOG_VERSION, location)

        try:
            records = [EvalRecord(**record) for record in document["records"]]
            policy = document.get("final_policy")
            return cls(
                algorithm=document["algorithm"],
                config=document["config"],
                seed=int(document["seed"]),
                records=records,
                final_policy=policy_from_dict(policy, location) if policy is not None else None,
                update_counts=list(document.get("update_counts", [])),
                notes=document.get("notes", {}),
            )
        except (KeyError, TypeError) as e:
            raise FormatError(f"incomplete run log ({e})", location) from e


def save_run_log(run_log: RunLog, path: Path) -> None:
    atomic_write_text(Path(path), json.dumps(run_log.to_dict(), indent=4))
    logging.debug(f"Saved {run_log.algorithm} run log to {path}")


def load_run_log(path: Path) -> RunLog:
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise FormatError("file not found", str(path)) from e
    except json.decoder.JSONDecodeError as e:
        raise FormatError(f"not valid JSON ({e})", str(path)) from e
    return RunLog.from_dict(document, str(path))


def csv_text(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_curve_csv(records: Sequence[EvalRecord], path: Path) -> None:
    """
    Write a learning curve with the CurveColumns header. Missing metrics are empty cells.
    """

    atomic_write_text(Path(path), csv_text(CurveColumns.header(), [record.curve_row() for record in records]))


def read_csv(path: Path) -> list[dict[str, str]]:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            return list(csv.DictReader(f))
    except FileNotFoundError as e:
        raise FormatError("file not found", str(path)) from e


def floor_align(steps: Sequence[int], values: Sequence[float | None], grid: Sequence[int]) -> list[float | None]:
    """
    Resample a curve onto another step grid: each grid point takes the value recorded at the largest
    own step not after it. Grid points before the first recorded step get None.
    """

    steps = np.asarray(steps)
    aligned = []
    for point in grid:
        index = int(np.searchsorted(steps, point, side="right")) - 1
        aligned.append(values[index] if index >= 0 else None)
    return aligned


def _mean(values: Sequence[float | None]) -> float | None:
    known = [value for value in values if value is not None]
    return float(np.mean(known)) if known else None


def _std(values: Sequence[float | None]) -> float | None:
    known = [value for value in values if value is not None]
    return float(np.std(known)) if known else None


def _max(values: Sequence[float | None]) -> float | None:
    known = [value for value in values if value is not None]
    return float(max(known)) if known else None


def aggregate_rows(run_logs: Sequence[RunLog], sweep_value: float | int | None = None) -> list[list[str]]:
    """
    Per-step mean and spread across the seeds of one sweep cell.
    Runs with different step grids (early stopping) are floor-aligned on the union grid.
    """

    grid = sorted({record.env_steps for run_log in run_logs for record in run_log.records})

    def column(run_log: RunLog, attribute: str) -> list:
        steps = [record.env_steps for record in run_log.records]
        values = []
        for record in run_log.records:
            value = getattr(record, attribute)
            if attribute == "sup_q_error" and value is not None:
                known = [error for error in value if error is not None]
                value = max(known) if known else None
            values.append(value)
        return floor_align(steps, values, grid)

    columns = {
        attribute: [column(run_log, attribute) for run_log in run_logs]
        for attribute in ("learn_steps", "mean_return", "std_return", "nash_gap", "sup_q_error")
    }

    rows = []
    for index, env_steps in enumerate(grid):
        at = {attribute: [per_run[index] for per_run in runs] for attribute, runs in columns.items()}
        learn_steps = _max(at["learn_steps"])
        rows.append([
            "" if sweep_value is None else str(sweep_value),
            str(env_steps),
            "" if learn_steps is None else str(int(learn_steps)),
            format_float(_mean(at["mean_return"])),
            format_float(_std(at["mean_return"])),
            format_float(_mean(at["std_return"])),
            format_float(_mean(at["nash_gap"])),
            format_float(_max(at["nash_gap"])),
            format_float(_mean(at["sup_q_error"])),
            str(sum(value is not None for value in at["mean_return"])),
        ])
    return rows


def write_aggregate_csv(rows: Sequence[Sequence[str]], path: Path) -> None:
    atomic_write_text(Path(path), csv_text(AGGREGATE_COLUMNS, rows))


