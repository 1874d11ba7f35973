from __future__ import annotations

import logging
from pathlib import Path
from typing import NamedTuple, Sequence

from ma2ql_lab.meta.meta_tools import FormatError, ParameterError
from ma2ql_lab.utils import atomic_write_text, format_float
from ma2ql_lab.wrangle.run_log import AGGREGATE_FILE, csv_text, floor_align, read_csv

AXES = ("env_steps", "learn_steps")


class CurveGroup(NamedTuple):
    """
    One aggregated curve: the seed mean of the evaluated return and its spread across seeds.
    """

    name: str
    steps: list[int]
    mean: list[float | None]
    std: list[float | None]


def _number(cell: str) -> float | None:
    return float(cell) if cell != "" else None


def load_groups(run_dir: Path, axis: str = "env_steps") -> list[CurveGroup]:
    """
    Read a run directory's aggregate file. A swept run yields one group per sweep value,
    named <dir>@<value>.

    Raises:
        FormatError: the directory has no aggregate file, or the file lacks the expected columns.
    """

    run_dir = Path(run_dir)
    path = run_dir / AGGREGATE_FILE
    if not path.is_file():
        raise FormatError(f"missing {AGGREGATE_FILE}", str(run_dir))

    rows = read_csv(path)
    required = {"sweep_value", axis, "mean_return_mean", "mean_return_std"}
    if rows and not required <= set(rows[0]):
        raise FormatError(f"expected columns {sorted(required)}", str(path))

    by_value: dict[str, list[dict[str, str]]] = {}
    for row in rows:
        by_value.setdefault(row["sweep_value"], []).append(row)

    groups = []
    for value, value_rows in by_value.items():
        value_rows = sorted(value_rows, key=lambda row: int(row[axis]))
        name = run_dir.name if value == "" else f"{run_dir.name}@{value}"
        groups.append(
            CurveGroup(
                name=name,
                steps=[int(row[axis]) for row in value_rows],
                mean=[_number(row["mean_return_mean"]) for row in value_rows],
                std=[_number(row["mean_return_std"]) for row in value_rows],
            )
        )
    return groups


def _unique_names(groups: list[CurveGroup]) -> list[CurveGroup]:
    seen: dict[str, int] = {}
    renamed = []
    for group in groups:
        seen[group.name] = seen.get(group.name, 0) + 1
        if seen[group.name] > 1:
            group = group._replace(name=f"{group.name}#{seen[group.name]}")
        renamed.append(group)
    return renamed


def align_groups(groups: Sequence[CurveGroup]) -> tuple[list[int], list[CurveGroup]]:
    """
    Put every group on the union of their step grids. A group missing a grid point takes the
    value of its last recorded step before it, so a single-point curve (OPTIMAL) becomes a
    horizontal reference line.
    """

    grid = sorted({step for group in groups for step in group.steps})
    if any(group.steps != grid for group in groups):
        logging.warning("Evaluation grids differ between the compared runs; resampling by step-floor alignment.")

    aligned = [
        group._replace(
            steps=grid, mean=floor_align(group.steps, group.mean, grid), std=floor_align(group.steps, group.std, grid)
        )
        for group in groups
    ]
    return grid, aligned


def compare_runs(run_dirs: Sequence[Path], axis: str = "env_steps") -> tuple[list[int], list[CurveGroup]]:
    if len(run_dirs) < 2:
        raise ParameterError(f"compare needs at least 2 run directories, got {len(run_dirs)}.")
    if axis not in AXES:
        raise ParameterError(f"axis must be one of {', '.join(AXES)}, got '{axis}'.")

    groups = [group for run_dir in run_dirs for group in load_groups(run_dir, axis)]
    return align_groups(_unique_names(groups))


def comparison_csv_text(grid: Sequence[int], groups: Sequence[CurveGroup], axis: str = "env_steps") -> str:
    header = [axis]
    for group in groups:
        header += [f"{group.name}:mean_return", f"{group.name}:std_return"]

    rows = []
    for index, step in enumerate(grid):
        row = [str(step)]
        for group in groups:
            row += [format_float(group.mean[index]), format_float(group.std[index])]
        rows.append(row)
    return csv_text(header, rows)


def write_comparison(grid: Sequence[int], groups: Sequence[CurveGroup], path: Path, axis: str = "env_steps") -> None:
    atomic_write_text(Path(path), comparison_csv_text(grid, groups, axis))
    logging.info(f"Wrote comparison of {len(groups)} curve group(s) to {path}")
