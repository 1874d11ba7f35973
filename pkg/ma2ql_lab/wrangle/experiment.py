"""
Experiment spec files.

A spec is a TOML document:

    format_version = "1.0"
    algorithm = "ma2ql-dp"          # iql, ma2ql, ma2ql-dp, alt-pi or optimal
    seeds = [0, 1, 2, 3, 4]
    output_dir = "results/fig2a"
    workers = 1

    [game]                          # generation parameters, or path = "game.json"
    states = 30
    agents = 3
    actions = 5
    gamma = 0.95
    horizon = 30
    noise = 1e-6                    # seed defaults to the run seed

    [train]                         # TrainConfig fields, sample-based algorithms only
    total_env_steps = 90000

    [dp]                            # ma2ql-dp, alt-pi and optimal
    rounds = 200
    t_per_turn = 1

    [sweep]                         # optional
    axis = "t"                      # t, K or samples_per_update
    values = [1, 5, 10, 50]

Every omitted field takes the didactic-game reproduction default.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import toml

from ma2ql_lab.learn.trainers import TrainConfig
from ma2ql_lab.meta.meta_tools import Algorithm, FormatError, SpecError
from ma2ql_lab.solvers.dp import JOINT_CAPACITY_LIMIT
from ma2ql_lab.wrangle.game import MAX_SEED, StochasticGame, generate_game
from ma2ql_lab.wrangle.game_file import check_format_version, load_game

SPEC_VERSION = "1.0"

GAME_DEFAULTS: dict[str, Any] = {
    "states": 30,
    "agents": 3,
    "actions": 5,
    "gamma": 0.95,
    "horizon": 30,
    "noise": 1e-6,
}

DP_DEFAULTS: dict[str, Any] = {
    "rounds": 200,
    "t_per_turn": 1,
    "max_rounds": 200,
    "tol": 1e-6,
    "eval_episodes": 32,
    "capacity_limit": JOINT_CAPACITY_LIMIT,
}

# sweep axis -> (section it overrides, field name, algorithms it applies to)
SWEEP_AXES = {
    "t": ("dp", "t_per_turn", (Algorithm.MA2QL_DP,)),
    "K": ("train", "updates_per_turn", (Algorithm.MA2QL,)),
    "samples_per_update": ("train", "samples_per_update", (Algorithm.IQL, Algorithm.MA2QL)),
}

TOP_LEVEL_KEYS = {"format_version", "algorithm", "seeds", "output_dir", "workers", "game", "train", "dp", "sweep"}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}


@dataclass
class ExperimentSpec:
    """
    A validated experiment: one algorithm, run on every seed and every sweep value.

    Attributes:
        game (dict):
            Generation parameters (GAME_DEFAULTS keys plus an optional seed), or {"path": ...}
            pointing at a saved game file. A relative path is resolved against the spec file.

        train (dict):
            Overrides of TrainConfig fields. The seed always comes from the seed list.

        sweep_axis (str):
            One of SWEEP_AXES, or None for a single cell per seed.
    """

    algorithm: Algorithm
    seeds: list[int]
    output_dir: Path
    game: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    dp: dict = field(default_factory=lambda: dict(DP_DEFAULTS))
    sweep_axis: str | None = None
    sweep_values: list[int] = field(default_factory=list)
    workers: int = 1

    def cells(self) -> list[tuple[int, int | None]]:
        """
        Every (seed, sweep value) pair to run, in a fixed order.
        """

        values: list[int | None] = list(self.sweep_values) if self.sweep_axis else [None]
        return [(seed, value) for value in values for seed in self.seeds]

    def train_config(self, seed: int, sweep_value: int | None = None) -> TrainConfig:
        overrides = dict(self.train)
        if self.sweep_axis and sweep_value is not None:
            section, name, _ = SWEEP_AXES[self.sweep_axis]
            if section == "train":
                overrides[name] = sweep_value
        return TrainConfig(**overrides, seed=seed)

    def dp_params(self, sweep_value: int | None = None) -> dict:
        params = {**DP_DEFAULTS, **self.dp}
        if self.sweep_axis and sweep_value is not None:
            section, name, _ = SWEEP_AXES[self.sweep_axis]
            if section == "dp":
                params[name] = sweep_value
        return params

    def build_game(self, seed: int) -> StochasticGame:
        """
        The game a run with this seed plays: the saved game, or one generated from the [game] table.
        Without an explicit [game] seed every run seed gets its own game.
        """

        if "path" in self.game:
            return load_game(Path(self.game["path"]))

        params = {**GAME_DEFAULTS, **self.game}
        return generate_game(
            seed=int(params.get("seed", seed)),
            num_states=params["states"],
            num_agents=params["agents"],
            actions_per_agent=params["actions"],
            gamma=params["gamma"],
            noise_delta=params["noise"],
            horizon=params["horizon"],
        )

    def cell_name(self, seed: int, sweep_value: int | None = None) -> str:
        if self.sweep_axis and sweep_value is not None:
            return f"seed{seed}_{self.sweep_axis}{sweep_value}"
        return f"seed{seed}"


def _positive_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value > 0


def _check_game(game: Any, violations: list[str]) -> None:
    if not isinstance(game, dict):
        violations.append("[game] must be a table")
        return
    if "path" in game:
        extra = sorted(set(game) - {"path"})
        if extra:
            violations.append(f"[game] path can't be combined with generation parameters ({', '.join(extra)})")
        return

    unknown = sorted(set(game) - set(GAME_DEFAULTS) - {"seed"})
    for key in unknown:
        violations.append(f"[game] unknown key '{key}'")

    params = {**GAME_DEFAULTS, **game}
    for key in ("states", "agents", "actions", "horizon"):
        if not _positive_int(params[key]):
            violations.append(f"[game] {key} must be a positive integer, got {params[key]!r}")
    if not isinstance(params["gamma"], (int, float)) or not 0.0 <= params["gamma"] < 1.0:
        violations.append(f"[game] gamma must be in [0, 1), got {params['gamma']!r}")
    if not isinstance(params["noise"], (int, float)) or params["noise"] < 0:
        violations.append(f"[game] noise must be >= 0, got {params['noise']!r}")
    if "seed" in game and not (isinstance(game["seed"], int) and 0 <= game["seed"] <= MAX_SEED):
        violations.append(f"[game] seed must be an unsigned 64-bit integer, got {game['seed']!r}")


def _check_dp(dp: Any, violations: list[str]) -> None:
    if not isinstance(dp, dict):
        violations.append("[dp] must be a table")
        return
    for key in sorted(set(dp) - set(DP_DEFAULTS)):
        violations.append(f"[dp] unknown key '{key}'")
    params = {**DP_DEFAULTS, **dp}
    for key in ("rounds", "t_per_turn", "max_rounds", "eval_episodes", "capacity_limit"):
        if not _positive_int(params[key]):
            violations.append(f"[dp] {key} must be a positive integer, got {params[key]!r}")
    if not isinstance(params["tol"], (int, float)) or params["tol"] <= 0:
        violations.append(f"[dp] tol must be > 0, got {params['tol']!r}")


def parse_spec(document: Any, location: str = "<memory>", base_dir: Path | None = None) -> ExperimentSpec:
    """
    Validate a parsed spec document and build an ExperimentSpec.

    Raises:
        SpecError: listing every violation found, not just the first one.
        FormatError: the format_version is missing or unsupported.
    """

    if not isinstance(document, dict):
        raise SpecError(["the spec must be a table of keys"])
    check_format_version(document.get("format_version"), SPEC_VERSION, location)

    violations: list[str] = []
    for key in sorted(set(document) - TOP_LEVEL_KEYS):
        violations.append(f"unknown top-level key '{key}'")

    algorithm = None
    try:
        algorithm = Algorithm(document.get("algorithm"))
    except ValueError:
        choices = ", ".join(a.value for a in Algorithm)
        violations.append(f"algorithm must be one of {choices}, got {document.get('algorithm')!r}")

    seeds = document.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        violations.append("seeds must be a non-empty list")
        seeds = []
    elif not all(isinstance(seed, int) and 0 <= seed <= MAX_SEED for seed in seeds):
        violations.append(f"seeds must be unsigned 64-bit integers, got {seeds!r}")
    elif len(set(seeds)) != len(seeds):
        violations.append(f"seeds must not repeat, got {seeds!r}")

    output_dir = document.get("output_dir")
    if not isinstance(output_dir, str) or not output_dir:
        violations.append("output_dir must be a non-empty string")

    workers = document.get("workers", 1)
    if not _positive_int(workers):
        violations.append(f"workers must be a positive integer, got {workers!r}")

    game = document.get("game", {})
    _check_game(game, violations)

    dp = document.get("dp", {})
    _check_dp(dp, violations)

    train = document.get("train", {})
    if not isinstance(train, dict):
        violations.append("[train] must be a table")
        train = {}
    for key in sorted(set(train) - TRAIN_KEYS):
        violations.append(f"[train] unknown key '{key}'")

    sweep = document.get("sweep")
    sweep_axis = None
    sweep_values: list = []
    if sweep is not None:
        if not isinstance(sweep, dict):
            violations.append("[sweep] must be a table")
        else:
            sweep_axis = sweep.get("axis")
            sweep_values = sweep.get("values", [])
            if sweep_axis not in SWEEP_AXES:
                violations.append(f"[sweep] axis must be one of {', '.join(SWEEP_AXES)}, got {sweep_axis!r}")
            elif algorithm is not None and algorithm not in SWEEP_AXES[sweep_axis][2]:
                allowed = ", ".join(a.value for a in SWEEP_AXES[sweep_axis][2])
                violations.append(f"[sweep] axis '{sweep_axis}' only applies to {allowed}, not {algorithm.value}")
            if not isinstance(sweep_values, list) or not sweep_values:
                violations.append("[sweep] values must be a non-empty list")
            elif not all(_positive_int(value) for value in sweep_values):
                violations.append(f"[sweep] values must be positive integers, got {sweep_values!r}")
            elif len(set(sweep_values)) != len(sweep_values):
                violations.append(f"[sweep] values must not repeat, got {sweep_values!r}")

    if algorithm is not None:
        if train and not algorithm.sample_based:
            violations.append(f"[train] only applies to iql and ma2ql, not {algorithm.value}")
        if algorithm.sample_based and isinstance(dp, dict) and dp:
            violations.append(f"[dp] only applies to ma2ql-dp, alt-pi and optimal, not {algorithm.value}")
        if isinstance(dp, dict):
            owners = {"t_per_turn": Algorithm.MA2QL_DP, "rounds": Algorithm.MA2QL_DP, "max_rounds": Algorithm.ALT_PI}
            for key, owner in owners.items():
                if key in dp and algorithm is not owner and not algorithm.sample_based:
                    violations.append(f"[dp] {key} only applies to {owner.value}, not {algorithm.value}")

    if isinstance(game, dict) and "path" in game and base_dir is not None:
        game = {"path": str((base_dir / game["path"]).resolve())}

    # a sample-based config can only be checked once the agent count is known
    if algorithm is not None and algorithm.sample_based and isinstance(game, dict) and not violations:
        agents = game.get("agents", GAME_DEFAULTS["agents"])
        if "path" in game:
            try:
                agents = load_game(Path(game["path"])).num_agents
            except FormatError as e:
                violations.append(f"[game] {e.message}")
        values = sweep_values if sweep_axis else [None]
        for value in values:
            overrides = dict(train)
            if sweep_axis and SWEEP_AXES[sweep_axis][0] == "train":
                overrides[SWEEP_AXES[sweep_axis][1]] = value
            try:
                cfg = TrainConfig(**overrides)
            except TypeError as e:
                violations.append(f"[train] {e}")
                break
            prefix = f"[train] ({sweep_axis}={value}) " if sweep_axis else "[train] "
            violations.extend(prefix + problem for problem in cfg.violations(agents))

    if violations:
        raise SpecError(violations)

    assert algorithm is not None
    return ExperimentSpec(
        algorithm=algorithm,
        seeds=list(seeds),
        output_dir=Path(output_dir),
        game=dict(game),
        train=dict(train),
        dp={**DP_DEFAULTS, **dp},
        sweep_axis=sweep_axis,
        sweep_values=list(sweep_values),
        workers=workers,
    )


def load_spec(path: Path) -> ExperimentSpec:
    """
    Read and validate an experiment spec file.

    Raises:
        FormatError: the file is missing or isn't valid TOML.
        SpecError: the file parses but describes an invalid experiment.
    """

    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            document = toml.load(f)
    except FileNotFoundError as e:
        raise FormatError("file not found", str(path)) from e
    except toml.TomlDecodeError as e:
        raise FormatError(f"not valid TOML ({e})", str(path)) from e

    spec = parse_spec(document, str(path), path.parent)
    logging.debug(f"Loaded experiment spec {path}: {spec.algorithm.value}, {len(spec.cells())} cell(s)")
    return spec
