"""
Versioned JSON container for stochastic games.

Layout:
    {
        "header": {format_version, rng_algorithm, seed, num_states, num_agents, action_dims,
                   gamma, noise_delta, horizon},
        "init_dist":    {"shape": [S],       "data": [...]},
        "reward":       {"shape": [S, J],    "data": [...]},
        "transition":   {"shape": [S, J, S], "data": [...]},
        "reward_noise": {"shape": [S, J],    "data": [...]}    (only for noisy games)
    }

Tensors are stored flat in row-major order. Floats are written with Python's shortest
round-trip repr, so loading reproduces every 64-bit value bit for bit.
"""

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
from packaging.version import InvalidVersion, Version

from ma2ql_lab.meta.meta_tools import FormatError, ParameterError
from ma2ql_lab.utils import atomic_write_text
from ma2ql_lab.wrangle.game import RNG_ALGORITHM, StochasticGame

FORMAT_VERSION = "1.0"
HEADER_KEYS = (
    "format_version",
    "rng_algorithm",
    "seed",
    "num_states",
    "num_agents",
    "action_dims",
    "gamma",
    "noise_delta",
    "horizon",
)


def check_format_version(found: Any, supported: str, location: str) -> None:
    """
    Accept any file whose major format version matches the supported one.
    """

    try:
        found_version = Version(str(found))
    except InvalidVersion as e:
        raise FormatError(f"unreadable format_version {found!r}", location) from e

    if found_version.major != Version(supported).major:
        raise FormatError(f"format version mismatch: file is {found_version}, this build reads {supported}", location)


def _tensor_record(array: np.ndarray) -> dict:
    return {"shape": list(array.shape), "data": array.ravel().tolist()}


def game_to_dict(game: StochasticGame) -> dict:
    document = {
        "header": {
            "format_version": FORMAT_VERSION,
            "rng_algorithm": RNG_ALGORITHM,
            "seed": game.seed,
            "num_states": game.num_states,
            "num_agents": game.num_agents,
            "action_dims": list(game.action_dims),
            "gamma": game.gamma,
            "noise_delta": game.noise_delta,
            "horizon": game.horizon,
        },
        "init_dist": _tensor_record(game.init_dist),
        "reward": _tensor_record(game.reward),
        "transition": _tensor_record(game.transition),
    }
    if game.reward_noise is not None:
        document["reward_noise"] = _tensor_record(game.reward_noise)
    return document


def save_game(game: StochasticGame, path: Path) -> None:
    """
    Write a game to a versioned JSON file. The file is replaced atomically.
    """

    atomic_write_text(Path(path), json.dumps(game_to_dict(game), separators=(",", ":")))
    logging.debug(f"Saved {game!r} to {path}")


def _read_tensor(document: dict, key: str, shape: tuple, location: str) -> np.ndarray:
    if key not in document:
        raise FormatError(f"missing tensor '{key}'", location)

    record = document[key]
    if not isinstance(record, dict) or "shape" not in record or "data" not in record:
        raise FormatError(f"tensor '{key}' must hold 'shape' and 'data'", location)

    if list(record["shape"]) != list(shape):
        raise FormatError(f"tensor '{key}' has shape {record['shape']}, header implies {list(shape)}", location)

    data = record["data"]
    if not isinstance(data, list) or len(data) != int(np.prod(shape)):
        raise FormatError(f"tensor '{key}' must hold {int(np.prod(shape))} values", location)

    try:
        array = np.array(data, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise FormatError(f"tensor '{key}' holds non-numeric data", location) from e

    return array.reshape(shape)


def game_from_dict(document: Any, location: str = "<memory>") -> StochasticGame:
    """
    Rebuild a game from its JSON document, enforcing the version and every game invariant.
    """

    if not isinstance(document, dict) or not isinstance(document.get("header"), dict):
        raise FormatError("missing 'header' object", location)

    header = document["header"]
    missing = [key for key in HEADER_KEYS if key not in header]
    if missing:
        raise FormatError(f"header is missing {', '.join(missing)}", location)

    check_format_version(header["format_version"], FORMAT_VERSION, f"{location} [header.format_version]")
    if header["rng_algorithm"] != RNG_ALGORITHM:
        raise FormatError(f"unsupported rng_algorithm {header['rng_algorithm']!r}", f"{location} [header]")

    try:
        num_states = int(header["num_states"])
        num_agents = int(header["num_agents"])
        action_dims = [int(dim) for dim in header["action_dims"]]
        gamma = float(header["gamma"])
        horizon = int(header["horizon"])
        noise_delta = float(header["noise_delta"])
        seed = int(header["seed"])
    except (TypeError, ValueError) as e:
        raise FormatError(f"non-numeric header value ({e})", f"{location} [header]") from e

    if len(action_dims) != num_agents:
        raise FormatError("num_agents does not match the length of action_dims", f"{location} [header]")

    joint_dim = int(np.prod(action_dims)) if action_dims else 0
    init_dist = _read_tensor(document, "init_dist", (num_states,), location)
    reward = _read_tensor(document, "reward", (num_states, joint_dim), location)
    transition = _read_tensor(document, "transition", (num_states, joint_dim, num_states), location)
    reward_noise = None
    if "reward_noise" in document:
        reward_noise = _read_tensor(document, "reward_noise", (num_states, joint_dim), location)

    try:
        return StochasticGame(
            action_dims=action_dims,
            gamma=gamma,
            transition=transition,
            reward=reward,
            horizon=horizon,
            init_dist=init_dist,
            noise_delta=noise_delta,
            seed=seed,
            reward_noise=reward_noise,
        )
    except ParameterError as e:
        raise FormatError(f"invariant violated: {e.message}", location) from e


def load_game(path: Path) -> StochasticGame:
    """
    Read a game file written by save_game.
    Nothing is returned unless the whole file parses and validates.

    Raises:
        FormatError: the file is malformed, truncated, of another major version, or breaks a game invariant.
    """

    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise FormatError("file not found", str(path)) from e
    except (json.decoder.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"not a valid game file ({e})", str(path)) from e

    game = game_from_dict(document, str(path))
    logging.debug(f"Loaded {game!r} from {path}")
    return game
