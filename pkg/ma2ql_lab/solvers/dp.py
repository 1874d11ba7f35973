from __future__ import annotations

import logging
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from ma2ql_lab.meta.meta_tools import CapacityError, ParameterError
from ma2ql_lab.wrangle.game import ROW_SUM_TOLERANCE, StochasticGame, unflatten_joint

EVALUATION_RESIDUAL = 1e-10
IMPROVEMENT_THRESHOLD = 1e-10
MAX_ITERATIONS = 1_000_000
JOINT_CAPACITY_LIMIT = 5_000_000


class PolicyKind(Enum):
    DETERMINISTIC = "deterministic"
    STOCHASTIC = "stochastic"


def policy_kind(policy: np.ndarray) -> PolicyKind:
    """
    A (S,) integer array is deterministic, a (S, A) float array is stochastic.
    """

    return PolicyKind.DETERMINISTIC if np.asarray(policy).ndim == 1 else PolicyKind.STOCHASTIC


def policy_matrix(policy: np.ndarray, num_states: int, num_actions: int) -> np.ndarray:
    """
    Convert a single-agent policy to its (S, A) action-probability matrix, validating it on the way.
    """

    policy = np.asarray(policy)

    if policy.ndim == 1:
        if policy.shape != (num_states,):
            raise ParameterError(f"Deterministic policy must have shape ({num_states},), got {policy.shape}.")
        if not np.issubdtype(policy.dtype, np.integer):
            raise ParameterError("Deterministic policy entries must be integer action indices.")
        if np.any(policy < 0) or np.any(policy >= num_actions):
            raise ParameterError(f"Deterministic policy actions must lie in [0, {num_actions}).")
        matrix = np.zeros((num_states, num_actions))
        matrix[np.arange(num_states), policy] = 1.0
        return matrix

    if policy.shape != (num_states, num_actions):
        raise ParameterError(f"Stochastic policy must have shape {(num_states, num_actions)}, got {policy.shape}.")
    policy = policy.astype(np.float64)
    if not np.all(np.isfinite(policy)) or np.any(policy < 0.0):
        raise ParameterError("Stochastic policy entries must be finite and non-negative.")
    sums = policy.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE):
        row = int(np.argmax(np.abs(sums - 1.0)))
        raise ParameterError(f"Stochastic policy row {row} sums to {sums[row]!r}, not 1.")
    return policy


class QTable:
    """
    One agent's Q(s, a_i) table.

    Attributes:
        values (np.ndarray):
            (S, A_i) float64 array.

        metadata (dict):
            How the table was produced, e.g. {"method": "linear"} for policy evaluation.
    """

    def __init__(self, values: np.ndarray, agent_index: int = 0, metadata: dict | None = None) -> None:
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2:
            raise ParameterError(f"Q-table values must be 2-D (states x actions), got shape {values.shape}.")
        if not np.all(np.isfinite(values)):
            raise ParameterError("Q-table entries must be finite.")

        self.values = values
        self.agent_index = int(agent_index)
        self.metadata = dict(metadata or {})

    def __repr__(self) -> str:
        return f"QTable(agent={self.agent_index}, shape={self.values.shape})"

    @classmethod
    def zeros(cls, num_states: int, num_actions: int, agent_index: int = 0) -> QTable:
        return cls(np.zeros((num_states, num_actions)), agent_index)

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def num_actions(self) -> int:
        return self.values.shape[1]

    def copy(self) -> QTable:
        return QTable(self.values.copy(), self.agent_index, self.metadata)


class JointPolicy:
    """
    The per-agent policies that together define the joint policy pi = prod_i pi_i.

    Each agent's table is either a (S,) array of action indices (deterministic) or a
    (S, A_i) array of action probabilities (stochastic).
    """

    def __init__(self, tables: Sequence[np.ndarray], action_dims: Sequence[int] | None = None) -> None:
        if not tables:
            raise ParameterError("A joint policy needs at least one agent.")

        tables = [np.array(table) for table in tables]
        num_states = tables[0].shape[0]

        if action_dims is None:
            action_dims = []
            for table in tables:
                if policy_kind(table) is PolicyKind.STOCHASTIC:
                    action_dims.append(table.shape[1])
                else:
                    action_dims.append(int(table.max()) + 1 if table.size else 1)

        if len(action_dims) != len(tables):
            raise ParameterError(f"Got {len(tables)} policy tables for {len(action_dims)} agents.")

        for table, dim in zip(tables, action_dims):
            policy_matrix(table, num_states, dim)
            table.setflags(write=False)

        self.tables = tables
        self.action_dims = tuple(int(dim) for dim in action_dims)
        self.num_states = num_states

    def __repr__(self) -> str:
        kinds = ", ".join(kind.value for kind in self.kinds)
        return f"JointPolicy(states={self.num_states}, action_dims={list(self.action_dims)}, kinds=[{kinds}])"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, JointPolicy):
            return NotImplemented
        return self.action_dims == other.action_dims and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.tables, other.tables)
        )

    @classmethod
    def uniform(cls, num_states: int, action_dims: Sequence[int]) -> JointPolicy:
        return cls([np.full((num_states, dim), 1.0 / dim) for dim in action_dims], action_dims)

    @classmethod
    def constant(cls, num_states: int, action_dims: Sequence[int], action: int = 0) -> JointPolicy:
        return cls([np.full(num_states, action, dtype=np.int64) for _ in action_dims], action_dims)

    @classmethod
    def greedy(cls, q_tables: Sequence[QTable]) -> JointPolicy:
        return cls([greedy_policy(q) for q in q_tables], [q.num_actions for q in q_tables])

    @property
    def num_agents(self) -> int:
        return len(self.tables)

    @property
    def kinds(self) -> list[PolicyKind]:
        return [policy_kind(table) for table in self.tables]

    def probabilities(self, agent_i: int) -> np.ndarray:
        """
        Agent i's (S, A_i) action-probability matrix (one-hot rows for a deterministic agent).
        """
        return policy_matrix(self.tables[agent_i], self.num_states, self.action_dims[agent_i])

    def joint_probabilities(self) -> np.ndarray:
        """
        (S, J) probability of every flattened joint action, agent 0 most significant.
        """

        joint = np.ones((self.num_states, 1))
        for agent in range(self.num_agents):
            joint = (joint[:, :, None] * self.probabilities(agent)[:, None, :]).reshape(self.num_states, -1)
        return joint

    def with_agent(self, agent_i: int, table: np.ndarray) -> JointPolicy:
        """
        A copy of this joint policy with agent i's policy replaced.
        """

        tables = list(self.tables)
        tables[agent_i] = np.array(table)
        return JointPolicy(tables, self.action_dims)


class InducedMDP:
    """
    The single-agent MDP (P_i, r_i) that agent i faces while every other agent's policy is frozen.

    Attributes:
        transition (np.ndarray):
            P_i[s][a_i][s'], shape (S, A_i, S).

        reward (np.ndarray):
            r_i[s][a_i], shape (S, A_i).

        frozen_policies (JointPolicy):
            The joint policy the MDP was built from. Agent i's own slot plays no part.
    """

    def __init__(
        self,
        transition: np.ndarray,
        reward: np.ndarray,
        gamma: float,
        agent_index: int = 0,
        frozen_policies: JointPolicy | None = None,
    ) -> None:
        transition = np.asarray(transition, dtype=np.float64)
        reward = np.asarray(reward, dtype=np.float64)

        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ParameterError(f"transition must have shape (S, A, S), got {transition.shape}.")
        if reward.shape != transition.shape[:2]:
            raise ParameterError(f"reward must have shape {transition.shape[:2]}, got {reward.shape}.")
        if not 0.0 <= gamma < 1.0:
            raise ParameterError(f"gamma must be in [0, 1), got {gamma}.")

        sums = transition.sum(axis=2)
        if np.any(transition < 0.0) or np.any(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE):
            raise ParameterError("Every induced transition row must be a probability distribution.")

        self.transition = transition
        self.reward = reward
        self.gamma = float(gamma)
        self.agent_index = int(agent_index)
        self.frozen_policies = frozen_policies

    def __repr__(self) -> str:
        return f"InducedMDP(agent={self.agent_index}, states={self.num_states}, actions={self.num_actions})"

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def backup(self, q: np.ndarray) -> np.ndarray:
        """
        One synchronous Bellman optimality backup: r + gamma * P max_a' Q(s', a').
        """
        return self.reward + self.gamma * (self.transition @ q.max(axis=1))


def induce_mdp(game: StochasticGame, agent_i: int, others: JointPolicy) -> InducedMDP:
    """
    Marginalize every other agent out of the game under their frozen policies.

        P_i(s'|s, a_i) = E_{a_-i ~ pi_-i}[P(s'|s, a_i, a_-i)]
        r_i(s, a_i)    = E_{a_-i ~ pi_-i}[r(s, a_i, a_-i)]

    The expectation is an exact weighted sum over every joint action of the other agents.

    Arguments:
        others (JointPolicy):
            A policy for every agent of the game. Agent i's own slot is ignored.
    """

    n = game.num_agents
    if not 0 <= agent_i < n:
        raise ParameterError(f"Agent index {agent_i} is out of range for a {n}-agent game.")
    if others.num_agents != n:
        raise ParameterError(f"Expected policies for {n} agents, got {others.num_agents}.")
    if others.num_states != game.num_states:
        raise ParameterError(f"Policies cover {others.num_states} states, the game has {game.num_states}.")
    for j in range(n):
        if j != agent_i and others.action_dims[j] != game.action_dims[j]:
            raise ParameterError(
                f"Agent {j} policy has {others.action_dims[j]} actions, the game gives it {game.action_dims[j]}."
            )

    # einsum axis labels: 0 = state, 1..n = agent actions, n + 1 = next state
    agent_axes = list(range(1, n + 1))
    transition_operands = [game.transition_view(), [0, *agent_axes, n + 1]]
    reward_operands = [game.reward_view(), [0, *agent_axes]]
    for j in range(n):
        if j == agent_i:
            continue
        weights = others.probabilities(j)
        transition_operands += [weights, [0, j + 1]]
        reward_operands += [weights, [0, j + 1]]

    transition = np.einsum(*transition_operands, [0, agent_i + 1, n + 1], optimize=n > 2)
    reward = np.einsum(*reward_operands, [0, agent_i + 1], optimize=n > 2)

    return InducedMDP(transition, reward, game.gamma, agent_i, others)


def _check_q_shape(mdp: InducedMDP, q: QTable) -> None:
    if q.values.shape != (mdp.num_states, mdp.num_actions):
        raise ParameterError(
            f"Q-table shape {q.values.shape} does not match the MDP's {(mdp.num_states, mdp.num_actions)}."
        )


def q_iteration(mdp: InducedMDP, q_init: QTable, iterations: int) -> QTable:
    """
    Apply exactly `iterations` synchronous Q-iteration backups starting from q_init.

        Q^{t+1}(s, a_i) = r_i(s, a_i) + gamma * E_{s' ~ P_i}[max_a' Q^t(s', a')]

    q_init is never modified. Zero iterations returns an unchanged copy.
    """

    if iterations < 0:
        raise ParameterError(f"iterations must be >= 0, got {iterations}.")
    _check_q_shape(mdp, q_init)

    q = q_init.values.copy()
    for _ in range(iterations):
        q = mdp.backup(q)
    return QTable(q, mdp.agent_index, {"iterations": int(iterations)})


def stopping_residual(gamma: float, tol: float) -> float:
    """
    Successive-iterate residual that certifies a sup-norm error of at most tol from the fixed point.
    """

    if gamma == 0.0:
        return np.inf
    return tol * (1.0 - gamma) / (2.0 * gamma)


def q_iteration_to_tolerance(
    mdp: InducedMDP, q_init: QTable | None = None, tol: float = 1e-6, max_iterations: int = MAX_ITERATIONS
) -> QTable:
    """
    Q-iteration until ||Q^{t+1} - Q^t|| <= tol (1 - gamma) / (2 gamma), which guarantees ||Q - Q*|| <= tol.
    The iteration count is kept in the returned table's metadata.
    """

    if tol <= 0:
        raise ParameterError(f"tol must be > 0, got {tol}.")
    if q_init is None:
        q_init = QTable.zeros(mdp.num_states, mdp.num_actions, mdp.agent_index)
    _check_q_shape(mdp, q_init)

    threshold = stopping_residual(mdp.gamma, tol)
    q = q_init.values.copy()
    for iteration in range(1, max_iterations + 1):
        q_next = mdp.backup(q)
        residual = float(np.max(np.abs(q_next - q)))
        q = q_next
        if residual <= threshold:
            break
    else:
        raise CapacityError(f"Q-iteration did not reach residual {threshold} within {max_iterations} backups.")

    logging.debug(f"Agent {mdp.agent_index} Q-iteration converged in {iteration} backups (residual {residual:.3e})")
    return QTable(q, mdp.agent_index, {"iterations": iteration, "residual": residual})


def bellman_residual(mdp: InducedMDP, q: QTable) -> float:
    """
    Sup-norm distance between Q and one optimality backup of Q.
    """

    _check_q_shape(mdp, q)
    return float(np.max(np.abs(mdp.backup(q.values) - q.values)))


def _evaluate_values(
    transition: np.ndarray, reward: np.ndarray, gamma: float, method: str, residual: float = EVALUATION_RESIDUAL
) -> tuple[np.ndarray, int]:
    """
    Solve V = r + gamma P V for a Markov chain (P is S x S). Returns the values and the iteration count.
    """

    if method == "linear":
        size = transition.shape[0]
        return np.linalg.solve(np.eye(size) - gamma * transition, reward), 0

    if method != "iterative":
        raise ParameterError(f"Unknown evaluation method '{method}'. Use 'iterative' or 'linear'.")

    values = np.zeros_like(reward)
    for iteration in range(1, MAX_ITERATIONS + 1):
        new_values = reward + gamma * (transition @ values)
        change = float(np.max(np.abs(new_values - values)))
        values = new_values
        if change <= residual:
            return values, iteration
    raise CapacityError(f"Policy evaluation did not reach residual {residual} within {MAX_ITERATIONS} sweeps.")


def policy_evaluation(mdp: InducedMDP, policy: np.ndarray, method: str = "iterative") -> QTable:
    """
    Q-function of a single-agent policy on an induced MDP, the fixed point of

        Q(s, a_i) = r_i(s, a_i) + gamma * E_{s' ~ P_i, a' ~ pi_i}[Q(s', a')]

    Arguments:
        method (str):
            "iterative" sweeps the equation until successive iterates differ by at most 1e-10.
            "linear" solves the state-value system directly and backs it up once.
            The method used is recorded in the table's metadata.
    """

    probabilities = policy_matrix(policy, mdp.num_states, mdp.num_actions)

    # V_pi solves the chain induced by pi, then Q = r + gamma P V_pi
    chain = np.einsum("sa,sat->st", probabilities, mdp.transition)
    chain_reward = np.einsum("sa,sa->s", probabilities, mdp.reward)
    values, iterations = _evaluate_values(chain, chain_reward, mdp.gamma, method)
    q = mdp.reward + mdp.gamma * (mdp.transition @ values)
    return QTable(q, mdp.agent_index, {"method": method, "iterations": iterations})


def greedy_policy(q: QTable) -> np.ndarray:
    """
    Per-state argmax of a Q-table. Ties go to the lowest action index.
    """

    return np.argmax(q.values, axis=1).astype(np.int64)


def policy_iteration(
    mdp: InducedMDP, policy_init: np.ndarray | None = None, method: str = "linear"
) -> tuple[QTable, np.ndarray, int]:
    """
    Classic policy iteration on one induced MDP: evaluate the incumbent, improve greedily, repeat until stable.

    An incumbent action is only replaced when another action beats it by more than 1e-10, so
    evaluation round-off can't make the loop cycle between equally good actions.

    Returns the final Q-table, the (deterministic) policy and the number of improvement steps.
    """

    if policy_init is None:
        policy = np.zeros(mdp.num_states, dtype=np.int64)
    else:
        policy = np.asarray(policy_init)
        if policy_kind(policy) is PolicyKind.STOCHASTIC:
            policy = np.argmax(policy, axis=1)
        policy = policy.astype(np.int64)
        policy_matrix(policy, mdp.num_states, mdp.num_actions)

    states = np.arange(mdp.num_states)
    for improvement in range(1, MAX_ITERATIONS + 1):
        q = policy_evaluation(mdp, policy, method)
        best = greedy_policy(q)
        gain = q.values[states, best] - q.values[states, policy]
        new_policy = np.where(gain > IMPROVEMENT_THRESHOLD, best, policy)
        if np.array_equal(new_policy, policy):
            return q, policy, improvement
        policy = new_policy

    raise CapacityError(f"Policy iteration did not stabilize within {MAX_ITERATIONS} improvements.")


def best_response(
    game: StochasticGame, agent_i: int, others: JointPolicy, tol: float, q_init: QTable | None = None
) -> tuple[QTable, np.ndarray]:
    """
    Agent i's optimal policy against the frozen policies of everyone else.

    Runs Q-iteration on the induced MDP until the successive-iterate residual certifies
    ||Q - Q*|| <= tol, then takes the greedy policy. A warm start only changes how many
    backups that takes.
    """

    if tol <= 0:
        raise ParameterError(f"tol must be > 0, got {tol}.")

    mdp = induce_mdp(game, agent_i, others)
    q = q_iteration_to_tolerance(mdp, q_init, tol)
    return q, greedy_policy(q)


class JointOptimum(NamedTuple):
    """
    The OPTIMAL baseline: joint Q over (S, J), its greedy joint policy and V*.
    """

    q: np.ndarray
    policy: JointPolicy
    values: np.ndarray
    iterations: int


def solve_joint_optimal(game: StochasticGame, tol: float, capacity_limit: int = JOINT_CAPACITY_LIMIT) -> JointOptimum:
    """
    Value iteration on the joint-action MDP, as if one central controller picked every agent's action.

    Stops when ||V^{t+1} - V^t|| <= tol (1 - gamma) / (2 gamma). The argmax joint action of each
    state is unflattened into one deterministic policy per agent.
    """

    if tol <= 0:
        raise ParameterError(f"tol must be > 0, got {tol}.")
    cells = game.num_states * game.joint_dim
    if cells > capacity_limit:
        raise CapacityError(
            f"Joint MDP has {cells} state x joint-action cells, above the configured limit of {capacity_limit}."
        )

    threshold = stopping_residual(game.gamma, tol)
    values = np.zeros(game.num_states)
    for iteration in range(1, MAX_ITERATIONS + 1):
        q = game.reward + game.gamma * (game.transition @ values)
        new_values = q.max(axis=1)
        residual = float(np.max(np.abs(new_values - values)))
        values = new_values
        if residual <= threshold:
            break
    else:
        raise CapacityError(f"Joint value iteration did not converge within {MAX_ITERATIONS} sweeps.")

    logging.debug(f"Joint value iteration converged in {iteration} sweeps (residual {residual:.3e})")

    best_joint = np.argmax(q, axis=1)
    tables = np.zeros((game.num_agents, game.num_states), dtype=np.int64)
    for state, joint in enumerate(best_joint):
        tables[:, state] = unflatten_joint(int(joint), game.action_dims)

    policy = JointPolicy(list(tables), game.action_dims)
    return JointOptimum(q=q, policy=policy, values=values, iterations=iteration)


def _check_joint_policy(game: StochasticGame, policy: JointPolicy) -> None:
    if policy.num_agents != game.num_agents or policy.action_dims != game.action_dims:
        raise ParameterError(
            f"Policy action dims {list(policy.action_dims)} don't match the game's {list(game.action_dims)}."
        )
    if policy.num_states != game.num_states:
        raise ParameterError(f"Policy covers {policy.num_states} states, the game has {game.num_states}.")


def joint_policy_value(game: StochasticGame, policy: JointPolicy, method: str = "linear") -> np.ndarray:
    """
    Exact state values V_pi of a joint policy on the joint MDP.
    """

    _check_joint_policy(game, policy)

    joint = policy.joint_probabilities()
    chain = np.einsum("sj,sjt->st", joint, game.transition)
    chain_reward = np.einsum("sj,sj->s", joint, game.reward)
    values, _ = _evaluate_values(chain, chain_reward, game.gamma, method)
    return values


def joint_policy_q(game: StochasticGame, policy: JointPolicy, method: str = "linear") -> np.ndarray:
    """
    Joint action values Q_pi(s, a_i, a_-i), flattened to shape (S, J).
    """

    values = joint_policy_value(game, policy, method)
    return game.reward + game.gamma * (game.transition @ values)
