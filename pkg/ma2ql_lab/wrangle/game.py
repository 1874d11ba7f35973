from __future__ import annotations

import logging
import math
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from ma2ql_lab.meta.meta_tools import CapacityError, ParameterError

RNG_ALGORITHM = "PCG64"
ROW_SUM_TOLERANCE = 1e-12
MAX_JOINT_DIM = np.iinfo(np.int64).max
MAX_SEED = 2**64 - 1

JointAction = tuple[int, ...]


class Transition(NamedTuple):
    """
    One environment step of all agents.
    The reward is the shared reward of the joint action.
    """

    state: int
    agent_actions: JointAction
    reward: float
    next_state: int
    done: bool = False

    def project(self, agent_i: int) -> AgentTransition:
        """
        The transition as seen by a single agent: <s, a_i, r, s'>.
        """
        return AgentTransition(self.state, self.agent_actions[agent_i], self.reward, self.next_state, self.done)


class AgentTransition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    done: bool = False


class StochasticGame:
    """
    A fully observed cooperative Markov game with a shared reward.

    Joint actions are flattened with agent 0 as the most significant digit, so both tensors
    carry a single joint-action axis of size prod(action_dims).

    Arguments:
        action_dims (Sequence[int]):
            The number of actions of each agent.

        transition (np.ndarray):
            P[s][j][s'], shape (S, J, S). Every row must be a probability distribution.

        reward (np.ndarray):
            r[s][j], shape (S, J).

        init_dist (np.ndarray):
            Distribution of the first state of every episode. Uniform if not given.

        reward_noise (np.ndarray):
            The noise that was added to the base reward at generation time, if any.
            Kept so the noise bound can be checked after the fact.

    The arrays are copied and made read-only. A game never changes after construction.
    """

    def __init__(
        self,
        action_dims: Sequence[int],
        gamma: float,
        transition: np.ndarray,
        reward: np.ndarray,
        horizon: int,
        init_dist: np.ndarray | None = None,
        noise_delta: float = 0.0,
        seed: int = 0,
        reward_noise: np.ndarray | None = None,
    ) -> None:
        action_dims = tuple(int(dim) for dim in action_dims)
        if not action_dims or any(dim < 1 for dim in action_dims):
            raise ParameterError(f"action_dims must be a non-empty list of positive integers, got {action_dims}.")

        joint_dim = joint_action_count(action_dims)

        transition = np.array(transition, dtype=np.float64)
        reward = np.array(reward, dtype=np.float64)
        if transition.ndim != 3 or transition.shape[1] != joint_dim or transition.shape[0] != transition.shape[2]:
            raise ParameterError(
                f"transition must have shape (S, {joint_dim}, S) for action_dims {action_dims}, got {transition.shape}."
            )
        num_states = transition.shape[0]
        if num_states < 1:
            raise ParameterError("A game needs at least one state.")
        if reward.shape != (num_states, joint_dim):
            raise ParameterError(f"reward must have shape {(num_states, joint_dim)}, got {reward.shape}.")

        if init_dist is None:
            init_dist = np.full(num_states, 1.0 / num_states)
        init_dist = np.array(init_dist, dtype=np.float64)
        if init_dist.shape != (num_states,):
            raise ParameterError(f"init_dist must have shape ({num_states},), got {init_dist.shape}.")

        if not 0.0 <= gamma < 1.0:
            raise ParameterError(f"gamma must be in [0, 1), got {gamma}.")
        if int(horizon) < 1:
            raise ParameterError(f"horizon must be a positive integer, got {horizon}.")
        if not noise_delta >= 0.0 or not math.isfinite(noise_delta):
            raise ParameterError(f"noise_delta must be a finite value >= 0, got {noise_delta}.")
        if not 0 <= int(seed) <= MAX_SEED:
            raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed}.")

        _check_distributions(transition, "transition")
        _check_distributions(init_dist[None, :], "init_dist")
        if not np.all(np.isfinite(reward)):
            raise ParameterError("reward entries must all be finite.")

        if reward_noise is not None:
            reward_noise = np.array(reward_noise, dtype=np.float64)
            if reward_noise.shape != reward.shape:
                raise ParameterError(f"reward_noise must have shape {reward.shape}, got {reward_noise.shape}.")
            if np.any(reward_noise <= 0.0) or np.any(reward_noise > noise_delta):
                raise ParameterError(f"reward_noise entries must lie in (0, {noise_delta}].")

        for array in (transition, reward, init_dist, reward_noise):
            if array is not None:
                array.setflags(write=False)

        self.num_states = num_states
        self.num_agents = len(action_dims)
        self.action_dims = action_dims
        self.gamma = float(gamma)
        self.transition = transition
        self.reward = reward
        self.noise_delta = float(noise_delta)
        self.horizon = int(horizon)
        self.init_dist = init_dist
        self.seed = int(seed)
        self.reward_noise = reward_noise

    def __repr__(self) -> str:
        return (
            f"StochasticGame(states={self.num_states}, action_dims={list(self.action_dims)}, gamma={self.gamma},"
            f" horizon={self.horizon}, noise_delta={self.noise_delta}, seed={self.seed})"
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StochasticGame):
            return NotImplemented

        scalars = ("num_states", "num_agents", "action_dims", "gamma", "noise_delta", "horizon", "seed")
        if any(getattr(self, name) != getattr(other, name) for name in scalars):
            return False

        if (self.reward_noise is None) != (other.reward_noise is None):
            return False

        arrays = ("transition", "reward", "init_dist", "reward_noise")
        return all(
            getattr(self, name) is None or np.array_equal(getattr(self, name), getattr(other, name)) for name in arrays
        )

    @property
    def joint_dim(self) -> int:
        """
        Size of the flattened joint-action space.
        """
        return self.transition.shape[1]

    @property
    def r_max(self) -> float:
        """
        The largest absolute reward. Used by the iteration and discrepancy bounds.
        """
        return float(np.max(np.abs(self.reward)))

    def reward_view(self) -> np.ndarray:
        """
        The reward tensor reshaped to (S, A_0, ..., A_{n-1}).
        """
        return self.reward.reshape(self.num_states, *self.action_dims)

    def transition_view(self) -> np.ndarray:
        """
        The transition tensor reshaped to (S, A_0, ..., A_{n-1}, S).
        """
        return self.transition.reshape(self.num_states, *self.action_dims, self.num_states)

    @cached_property
    def transition_cdf(self) -> np.ndarray:
        """
        Cumulative next-state distribution of every (s, j) row, with the last entry exactly 1.0.
        A next state is sampled as the number of entries <= a uniform [0, 1) draw.
        """
        return _cdf(self.transition)

    @cached_property
    def init_cdf(self) -> np.ndarray:
        return _cdf(self.init_dist)

    @cached_property
    def joint_strides(self) -> np.ndarray:
        """
        Mixed-radix place values, agent 0 most significant.
        """
        return np.array(_strides(self.action_dims), dtype=np.int64)


def joint_action_count(action_dims: Sequence[int]) -> int:
    """
    prod(action_dims), refusing anything that doesn't fit a signed 64-bit index.
    """

    count = math.prod(int(dim) for dim in action_dims)
    if count > MAX_JOINT_DIM:
        raise CapacityError(f"Joint-action dimension {count} overflows the 64-bit index type.")
    return count


def _strides(action_dims: Sequence[int]) -> list[int]:
    strides = []
    place = 1
    for dim in reversed(action_dims):
        strides.append(place)
        place *= dim
    return strides[::-1]


def _cdf(probabilities: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probabilities, axis=-1)
    cdf /= cdf[..., -1:]
    cdf.setflags(write=False)
    return cdf


def _check_distributions(rows: np.ndarray, name: str) -> None:
    """
    Raise if any row along the last axis is not a probability distribution.
    """

    if not np.all(np.isfinite(rows)) or np.any(rows < 0.0):
        raise ParameterError(f"{name} entries must be finite and non-negative.")

    sums = rows.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE)
    if bad.size:
        index = tuple(int(i) for i in bad[0])
        raise ParameterError(
            f"{name} row {index} sums to {sums[index]!r}, not 1 (normalization tolerance {ROW_SUM_TOLERANCE})."
        )


def flatten_joint(actions: Sequence[int], action_dims: Sequence[int]) -> int:
    """
    Encode a joint action as a single index. Agent 0 is the most significant digit.

    e.g. ([1, 2, 3], [5, 5, 5]) -> 1*25 + 2*5 + 3 = 38
    """

    if len(actions) != len(action_dims):
        raise ParameterError(
            f"Joint action {tuple(actions)} has {len(actions)} components, expected {len(action_dims)}."
        )

    index = 0
    for agent, (action, dim) in enumerate(zip(actions, action_dims)):
        if not 0 <= action < dim:
            raise ParameterError(f"Action {action} of agent {agent} is out of range [0, {dim}).")
        index = index * dim + int(action)
    return index


def unflatten_joint(index: int, action_dims: Sequence[int]) -> JointAction:
    """
    Inverse of flatten_joint.
    """

    joint_dim = joint_action_count(action_dims)
    if not 0 <= index < joint_dim:
        raise ParameterError(f"Joint index {index} is out of range [0, {joint_dim}).")

    actions = []
    for dim in reversed(action_dims):
        index, action = divmod(int(index), dim)
        actions.append(action)
    return tuple(actions[::-1])


def generate_game(
    seed: int,
    num_states: int,
    num_agents: int,
    actions_per_agent: int,
    gamma: float,
    noise_delta: float,
    horizon: int,
) -> StochasticGame:
    """
    Randomly generate a cooperative stochastic game.

    Generation is a pure function of the arguments. A PCG64 stream seeded with `seed` is drawn from
    in a fixed order:
        1. base rewards, uniform [0, 1), shape (S, J)
        2. transition weights, uniform (0, 1], shape (S, J, S), each row normalized to sum to one
        3. reward noise, uniform (0, noise_delta], shape (S, J) (only if noise_delta > 0)

    The noise is baked into the reward tensor so the game stays a fixed MDP whose optimal
    Q-functions have unique maxima with probability one.
    """

    counts = {"num_states": num_states, "num_agents": num_agents, "actions_per_agent": actions_per_agent}
    for name, value in counts.items():
        if int(value) != value or value < 1:
            raise ParameterError(f"{name} must be a positive integer, got {value}.")
    if int(horizon) != horizon or horizon < 1:
        raise ParameterError(f"horizon must be a positive integer, got {horizon}.")
    if not 0.0 <= gamma < 1.0:
        raise ParameterError(f"gamma must be in [0, 1), got {gamma}.")
    if not noise_delta >= 0.0 or not math.isfinite(noise_delta):
        raise ParameterError(f"noise_delta must be a finite value >= 0, got {noise_delta}.")
    if not 0 <= seed <= MAX_SEED:
        raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed}.")

    action_dims = [int(actions_per_agent)] * int(num_agents)
    joint_dim = joint_action_count(action_dims)

    rng = np.random.Generator(np.random.PCG64(int(seed)))
    reward = rng.random((num_states, joint_dim))
    weights = 1.0 - rng.random((num_states, joint_dim, num_states))
    transition = weights / weights.sum(axis=2, keepdims=True)

    reward_noise = None
    if noise_delta > 0.0:
        noise = noise_delta * (1.0 - rng.random((num_states, joint_dim)))
        noisy = reward + noise
        # an addend below half an ulp of the base would vanish
        noisy = np.where(noisy > reward, noisy, np.nextafter(reward, np.inf))
        reward_noise = np.minimum(noisy - reward, noise_delta)
        reward = noisy

    logging.debug(
        f"Generated game seed={seed} states={num_states} action_dims={action_dims} gamma={gamma} noise={noise_delta}"
    )

    return StochasticGame(
        action_dims=action_dims,
        gamma=gamma,
        transition=transition,
        reward=reward,
        horizon=horizon,
        noise_delta=noise_delta,
        seed=seed,
        reward_noise=reward_noise,
    )


def reset(game: StochasticGame, rng: np.random.Generator) -> int:
    """
    Sample the first state of an episode from the game's initial distribution.
    """

    return int(np.count_nonzero(game.init_cdf <= rng.random()))


def step(game: StochasticGame, state: int, action: Sequence[int], rng: np.random.Generator) -> Transition:
    """
    Simulate one joint step. Consumes exactly one uniform draw from rng.

    The episode horizon is the caller's business, so done is always False here.
    """

    if not 0 <= state < game.num_states:
        raise ParameterError(f"State {state} is out of range [0, {game.num_states}).")

    joint = flatten_joint(action, game.action_dims)
    next_state = int(np.count_nonzero(game.transition_cdf[state, joint] <= rng.random()))
    return Transition(
        state=int(state),
        agent_actions=tuple(int(a) for a in action),
        reward=float(game.reward[state, joint]),
        next_state=next_state,
    )


def step_many(game: StochasticGame, states: np.ndarray, joint: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Vectorized next-state sampling for a batch of (state, joint index) pairs, one uniform draw each.
    Uses the same inverse-CDF rule as step.
    """

    draws = rng.random(len(states))
    rows = game.transition_cdf[states, joint]
    return np.count_nonzero(rows <= draws[:, None], axis=1)


def reset_many(game: StochasticGame, count: int, rng: np.random.Generator) -> np.ndarray:
    draws = rng.random(count)
    return np.count_nonzero(game.init_cdf[None, :] <= draws[:, None], axis=1)
