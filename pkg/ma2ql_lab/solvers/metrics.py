from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ma2ql_lab.meta.meta_tools import ParameterError
from ma2ql_lab.solvers.dp import (
    JointPolicy,
    PolicyKind,
    QTable,
    best_response,
    joint_policy_value,
)
from ma2ql_lab.wrangle.game import StochasticGame, reset_many, step_many


class NashReport:
    """
    How much each agent could gain by deviating alone from a joint policy.

    Attributes:
        agent_gaps (List[float]):
            g_i = max_s (V_{BR_i, pi_-i}(s) - V_pi(s)) for every agent i.

        best_responses (List[np.ndarray]):
            The deterministic best-response policy found for each agent.

        tol (float):
            The tolerance the best responses were computed to. The policy is certified Nash
            when the overall gap is at most tol.
    """

    def __init__(self, agent_gaps: Sequence[float], best_responses: Sequence[np.ndarray], tol: float) -> None:
        self.agent_gaps = [float(gap) for gap in agent_gaps]
        self.best_responses = list(best_responses)
        self.tol = float(tol)

    def __repr__(self) -> str:
        return f"NashReport(gap={self.overall_gap:.3e}, tol={self.tol}, certified={self.certified})"

    @property
    def overall_gap(self) -> float:
        return max(self.agent_gaps)

    @property
    def certified(self) -> bool:
        return self.overall_gap <= self.tol

    def to_dict(self) -> dict:
        return {
            "overall_gap": self.overall_gap,
            "agent_gaps": self.agent_gaps,
            "tol": self.tol,
            "certified": self.certified,
            "best_responses": [policy.tolist() for policy in self.best_responses],
        }


def nash_gap(
    game: StochasticGame, policy: JointPolicy, tol: float = 1e-6, warm_start: Sequence[QTable] | None = None
) -> NashReport:
    """
    Certify (or refute) that a joint policy is a Nash equilibrium.

    For each agent the best response against the others is found to within tol, then both the
    deviating and the original joint policy are evaluated exactly. The gap is the largest
    per-state value the deviation buys.

    Arguments:
        warm_start (Sequence[QTable]):
            Optional per-agent tables to start the best-response Q-iteration from.
            Only the run time changes, not the certificate.
    """

    if tol <= 0:
        raise ParameterError(f"tol must be > 0, got {tol}.")
    if warm_start is not None and len(warm_start) != game.num_agents:
        raise ParameterError(f"warm_start needs {game.num_agents} tables, got {len(warm_start)}.")

    values = joint_policy_value(game, policy)

    gaps = []
    responses = []
    for agent in range(game.num_agents):
        q_init = warm_start[agent] if warm_start is not None else None
        _, response = best_response(game, agent, policy, tol, q_init)
        deviation_values = joint_policy_value(game, policy.with_agent(agent, response))
        gaps.append(float(np.max(deviation_values - values)))
        responses.append(response)

    return NashReport(gaps, responses, tol)


def _sample_actions(policy: JointPolicy, agent: int, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    table = policy.tables[agent]
    if policy.kinds[agent] is PolicyKind.DETERMINISTIC:
        return table[states]

    cdf = np.cumsum(table[states], axis=1)
    cdf /= cdf[:, -1:]
    draws = rng.random(len(states))
    return np.count_nonzero(cdf <= draws[:, None], axis=1)


def eval_return(
    game: StochasticGame, policy: JointPolicy, episodes: int, rng: np.random.Generator, discounted: bool = False
) -> tuple[float, float]:
    """
    Mean and standard deviation of episode returns over `episodes` rollouts of game.horizon steps.

    All episodes run side by side. Per step the stream is drawn in a fixed order: one draw per
    episode for every stochastic agent (in agent order), then one per episode for the transition.
    Returns are undiscounted sums unless `discounted` is set.
    """

    if episodes < 1:
        raise ParameterError(f"episodes must be >= 1, got {episodes}.")
    if policy.num_agents != game.num_agents or policy.num_states != game.num_states:
        raise ParameterError(f"{policy!r} does not fit {game!r}.")

    strides = game.joint_strides
    states = reset_many(game, episodes, rng)
    returns = np.zeros(episodes)
    weight = 1.0

    for _ in range(game.horizon):
        joint = np.zeros(episodes, dtype=np.int64)
        for agent in range(game.num_agents):
            joint += strides[agent] * _sample_actions(policy, agent, states, rng)

        returns += weight * game.reward[states, joint]
        states = step_many(game, states, joint, rng)
        if discounted:
            weight *= game.gamma

    return float(np.mean(returns)), float(np.std(returns))


def _check_bound_domain(gamma: float, r_max: float, epsilon: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ParameterError(f"gamma must be in (0, 1), got {gamma}.")
    if not r_max > 0.0:
        raise ParameterError(f"r_max must be > 0, got {r_max}.")
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}.")


def lemma2_min_iterations(gamma: float, r_max: float, epsilon: float) -> int:
    """
    Smallest number of Q-iteration backups per turn that keeps a warm-started table within epsilon
    of the turn's optimal Q-function:

        t >= (log((1 - gamma) epsilon) - log(2R + 2 epsilon)) / log(gamma),  R = r_max / (1 - gamma)

    e.g. (0.9, 1, 0.01) -> 95
    """

    _check_bound_domain(gamma, r_max, epsilon)

    big_r = r_max / (1.0 - gamma)
    bound = (math.log((1.0 - gamma) * epsilon) - math.log(2.0 * big_r + 2.0 * epsilon)) / math.log(gamma)
    return max(0, math.ceil(bound))


def lemma2_error_bound(gamma: float, r_max: float, epsilon: float, iterations: int) -> float:
    """
    gamma^t (2R + 2 epsilon) / (1 - gamma): the sup-norm error left after t warm-started backups.
    """

    _check_bound_domain(gamma, r_max, epsilon)
    if iterations < 0:
        raise ParameterError(f"iterations must be >= 0, got {iterations}.")

    big_r = r_max / (1.0 - gamma)
    return gamma**iterations * (2.0 * big_r + 2.0 * epsilon) / (1.0 - gamma)


def target_discrepancy_bound(
    pi_current: np.ndarray, pi_data: np.ndarray, gamma: float, r_max: float
) -> np.ndarray:
    """
    Per-state bound on how far a learning target drifts when the other agents' policy moved away from
    the one that generated the data:

        (2 - gamma) / (1 - gamma) * r_max * D_TV(pi_current(.|s) || pi_data(.|s))

    Both arguments are (S, |A_-i|) row-stochastic matrices over the same joint action space of the other agents.
    """

    pi_current = np.asarray(pi_current, dtype=np.float64)
    pi_data = np.asarray(pi_data, dtype=np.float64)
    if pi_current.shape != pi_data.shape or pi_current.ndim != 2:
        raise ParameterError(
            f"Both policies must be (S, |A_-i|) matrices of one shape, got {pi_current.shape} and {pi_data.shape}."
        )
    for name, matrix in (("pi_current", pi_current), ("pi_data", pi_data)):
        if np.any(matrix < 0.0) or np.any(np.abs(matrix.sum(axis=1) - 1.0) > 1e-12):
            raise ParameterError(f"{name} rows must be probability distributions.")
    if not 0.0 <= gamma < 1.0:
        raise ParameterError(f"gamma must be in [0, 1), got {gamma}.")
    if r_max < 0.0:
        raise ParameterError(f"r_max must be >= 0, got {r_max}.")

    total_variation = 0.5 * np.abs(pi_current - pi_data).sum(axis=1)
    return (2.0 - gamma) / (1.0 - gamma) * r_max * total_variation


def action_gap(q_tables: Sequence[QTable]) -> float:
    """
    The smallest margin, over all agents and states, between the greedy action's value and the best
    other action's value. A positive gap means every argmax is unique, and Q-tables within a sixth of
    it of their targets already pick the target's greedy actions.

    Agents with a single action don't constrain the gap.
    """

    gap = math.inf
    for q in q_tables:
        if q.num_actions < 2:
            continue
        ordered = np.sort(q.values, axis=1)
        gap = min(gap, float(np.min(ordered[:, -1] - ordered[:, -2])))
    return gap


def noise_performance_bound(noise_delta: float, gamma: float) -> float:
    """
    delta / (1 - gamma): the most return an optimizer of noise-perturbed rewards can give up.
    """

    if noise_delta < 0.0:
        raise ParameterError(f"noise_delta must be >= 0, got {noise_delta}.")
    if not 0.0 <= gamma < 1.0:
        raise ParameterError(f"gamma must be in [0, 1), got {gamma}.")
    return noise_delta / (1.0 - gamma)
