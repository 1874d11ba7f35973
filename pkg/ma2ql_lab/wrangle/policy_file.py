import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from ma2ql_lab.meta.meta_tools import FormatError, ParameterError
from ma2ql_lab.solvers.dp import JointPolicy, QTable
from ma2ql_lab.solvers.metrics import NashReport
from ma2ql_lab.utils import atomic_write_text, format_float
from ma2ql_lab.wrangle.game_file import check_format_version

POLICY_VERSION = "1.0"


def policy_to_dict(policy: JointPolicy) -> dict:
    return {
        "format_version": POLICY_VERSION,
        "action_dims": list(policy.action_dims),
        "kinds": [kind.value for kind in policy.kinds],
        "tables": [table.tolist() for table in policy.tables],
    }


def policy_from_dict(document: Any, location: str = "<memory>") -> JointPolicy:
    """
    Rebuild a JointPolicy from its JSON form, validating every table.
    """

    if not isinstance(document, dict) or "tables" not in document or "action_dims" not in document:
        raise FormatError("policy must hold 'action_dims' and 'tables'", location)
    check_format_version(document.get("format_version", POLICY_VERSION), POLICY_VERSION, location)

    kinds = document.get("kinds") or [None] * len(document["tables"])
    if len(kinds) != len(document["tables"]):
        raise FormatError("'kinds' and 'tables' differ in length", location)

    tables = []
    for agent, (table, kind) in enumerate(zip(document["tables"], kinds)):
        dtype = {"deterministic": np.int64, "stochastic": np.float64}.get(kind)
        try:
            tables.append(np.array(table, dtype=dtype))
        except (TypeError, ValueError) as e:
            raise FormatError(f"policy table of agent {agent} is not numeric", location) from e

    try:
        return JointPolicy(tables, document["action_dims"])
    except ParameterError as e:
        raise FormatError(f"invalid policy: {e.message}", location) from e


def save_policy(policy: JointPolicy, path: Path) -> None:
    atomic_write_text(Path(path), json.dumps(policy_to_dict(policy)))
    logging.debug(f"Saved {policy!r} to {path}")


def load_policy(path: Path) -> JointPolicy:
    """
    Read a joint policy file.

    Raises:
        FormatError: the file is missing, not JSON, or holds an invalid policy.
    """

    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise FormatError("file not found", str(path)) from e
    except (json.decoder.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"not a valid policy file ({e})", str(path)) from e

    return policy_from_dict(document, str(path))


def save_nash_report(report: NashReport, path: Path) -> None:
    atomic_write_text(Path(path), json.dumps(report.to_dict(), indent=4))


def q_table_csv(q: QTable) -> str:
    """
    One row per state, one column per action of the agent.
    """

    lines = [",".join(["state"] + [f"action_{action}" for action in range(q.num_actions)])]
    for state, row in enumerate(q.values):
        lines.append(",".join([str(state)] + [format_float(value) for value in row]))
    return "\n".join(lines) + "\n"


def write_q_table_csv(q: QTable, path: Path) -> None:
    atomic_write_text(Path(path), q_table_csv(q))
