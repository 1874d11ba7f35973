"""
Tabular trainers for cooperative stochastic games.

IQL and MA2QL share one sample-based loop and differ only in who learns from each batch:

    IQL:   every agent updates on every batch
    MA2QL: only the agent whose turn it is updates; the turn passes after K batches

MA2QL-DP and alternate policy iteration replace the samples with exact dynamic programming
on the MDP each agent faces while the others are frozen.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from ma2ql_lab.learn.schedules import EpsilonSchedule, LearningRate, epsilon_greedy
from ma2ql_lab.meta.meta_tools import Algorithm, ParameterError, SchedulingError
from ma2ql_lab.solvers.dp import (
    JointPolicy,
    QTable,
    induce_mdp,
    joint_policy_value,
    policy_iteration,
    q_iteration,
    q_iteration_to_tolerance,
)
from ma2ql_lab.solvers.metrics import action_gap, eval_return, nash_gap
from ma2ql_lab.utils import array_digest
from ma2ql_lab.wrangle.game import MAX_SEED, AgentTransition, StochasticGame, reset, step
from ma2ql_lab.wrangle.run_log import EvalRecord, RunLog

EVAL_STREAM = 0x6576616C


@dataclass
class TrainConfig:
    """
    Settings of a sample-based run. The defaults reproduce the didactic-game study.

    Attributes:
        samples_per_update (int):
            Transitions collected before each update batch.

        updates_per_turn (int):
            K, the number of update batches an MA2QL agent performs before the turn passes on.

        eval_every (int):
            Env steps between evaluations. None means 1% of total_env_steps.

        dp_iters_per_turn (int):
            t, the number of Q-iteration backups per turn in MA2QL-DP.
    """

    total_env_steps: int = 90_000
    updates_per_turn: int = 10
    samples_per_update: int = 30
    alpha: float = 0.1
    alpha_schedule: str = "constant"
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.3
    eval_every: int | None = None
    eval_episodes: int = 32
    dp_iters_per_turn: int = 1
    track_nash_gap: bool = False
    nash_tol: float = 1e-6
    seed: int = 0

    @property
    def eval_interval(self) -> int:
        if self.eval_every is not None:
            return self.eval_every
        return max(self.samples_per_update, self.total_env_steps // 100)

    def violations(self, num_agents: int = 1) -> list[str]:
        """
        Every problem with this config for a game of num_agents agents. Empty when valid.
        """

        problems = []
        counts = {
            "total_env_steps": self.total_env_steps,
            "updates_per_turn": self.updates_per_turn,
            "samples_per_update": self.samples_per_update,
            "eval_every": self.eval_interval,
            "eval_episodes": self.eval_episodes,
            "dp_iters_per_turn": self.dp_iters_per_turn,
        }
        for name, value in counts.items():
            if not isinstance(value, (int, np.integer)) or value < 1:
                problems.append(f"{name} must be a positive integer, got {value!r}")

        for name in ("epsilon_start", "epsilon_end", "epsilon_decay_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                problems.append(f"{name} must be in [0, 1], got {value!r}")

        if not 0.0 < self.alpha <= 1.0:
            problems.append(f"alpha must be in (0, 1], got {self.alpha!r}")
        if self.alpha_schedule not in LearningRate.KINDS:
            kinds = ", ".join(LearningRate.KINDS)
            problems.append(f"alpha_schedule must be one of {kinds}, got {self.alpha_schedule!r}")
        if self.nash_tol <= 0:
            problems.append(f"nash_tol must be > 0, got {self.nash_tol!r}")
        if not 0 <= self.seed <= MAX_SEED:
            problems.append(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

        if problems:
            return problems

        round_steps = self.samples_per_update * self.updates_per_turn * num_agents
        if self.total_env_steps % round_steps:
            problems.append(
                f"total_env_steps ({self.total_env_steps}) must be a multiple of samples_per_update x updates_per_turn"
                f" x agents ({round_steps}) so IQL and MA2QL get identical update budgets"
            )
        if self.eval_interval % self.samples_per_update:
            problems.append(
                f"eval_every ({self.eval_interval}) must be a multiple of"
                f" samples_per_update ({self.samples_per_update})"
            )
        if self.total_env_steps % self.eval_interval:
            problems.append(
                f"total_env_steps ({self.total_env_steps}) must be a multiple of eval_every ({self.eval_interval})"
            )
        return problems

    def check(self, num_agents: int = 1) -> None:
        problems = self.violations(num_agents)
        if problems:
            raise ParameterError("Invalid training config: " + "; ".join(problems))

    def snapshot(self) -> dict:
        snapshot = asdict(self)
        snapshot["eval_every"] = self.eval_interval
        return snapshot


def evaluation_rng(seed: int, index: int) -> np.random.Generator:
    """
    The stream for the index-th evaluation of a run. It depends on nothing but (seed, index), so
    two runs holding the same greedy policy at the same evaluation report the same return.
    """

    return np.random.Generator(np.random.PCG64([seed, EVAL_STREAM, index]))


def q_learning_update(q: QTable, transition: AgentTransition, alpha: float, gamma: float) -> QTable:
    """
    Single-sample Q-learning on one agent's table, in place:

        Q[s][a_i] += alpha * (r + gamma * max_a' Q[s'][a'] - Q[s][a_i])

    Episodes are only cut by the horizon, which is not a true terminal state, so the bootstrap
    term is kept even when transition.done is set.
    """

    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}.")
    s, a, s_next = transition.state, transition.action, transition.next_state
    if not (0 <= s < q.num_states and 0 <= s_next < q.num_states and 0 <= a < q.num_actions):
        raise ParameterError(f"Transition {transition} is out of range for {q!r}.")

    values = q.values
    values[s, a] += alpha * (transition.reward + gamma * values[s_next].max() - values[s, a])
    return q


class _SampleTrainer:
    """
    The loop shared by IQL and MA2QL. Only `_learners` differs between the two.
    """

    def __init__(self, game: StochasticGame, cfg: TrainConfig, algorithm: Algorithm) -> None:
        cfg.check(game.num_agents)

        self.game = game
        self.cfg = cfg
        self.algorithm = algorithm
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self.epsilon = EpsilonSchedule(
            cfg.epsilon_start, cfg.epsilon_end, int(round(cfg.epsilon_decay_fraction * cfg.total_env_steps))
        )
        self.learning_rate = LearningRate(cfg.alpha_schedule, cfg.alpha)

        self.q_tables = [QTable.zeros(game.num_states, dim, agent) for agent, dim in enumerate(game.action_dims)]
        self.visits = [np.zeros((game.num_states, dim), dtype=np.int64) for dim in game.action_dims]
        self.update_counts = [0] * game.num_agents

        self.active_agent = 0
        self.batches_in_turn = 0
        self.turns = 0

        self.run_log = RunLog(
            algorithm=algorithm.value,
            config=cfg.snapshot(),
            seed=cfg.seed,
            notes={
                "return_aggregation": "undiscounted episode sum",
                "epsilon_schedule": "shared by all agents and by IQL and MA2QL",
                "horizon_bootstrap": "kept",
                "passes_per_batch": 1 if algorithm is Algorithm.IQL else game.num_agents,
                "rng_algorithm": "PCG64",
            },
        )

    def _learners(self) -> tuple[list[int], int]:
        """
        Who updates on the current batch, and how many passes each makes over it.
        An MA2QL agent sweeps its batch n times so its update total matches IQL's.
        """

        if self.algorithm is Algorithm.IQL:
            return list(range(self.game.num_agents)), 1
        return [self.active_agent], self.game.num_agents

    def _update(self, agent: int, batch: list) -> None:
        q = self.q_tables[agent]
        visits = self.visits[agent]
        gamma = self.game.gamma
        for transition in batch:
            projected = transition.project(agent)
            visits[projected.state, projected.action] += 1
            alpha = self.learning_rate.rate(visits[projected.state, projected.action])
            q_learning_update(q, projected, alpha, gamma)
        self.update_counts[agent] += len(batch)

    def _evaluate(self, env_steps: int, learn_steps: int, index: int) -> None:
        policy = JointPolicy.greedy(self.q_tables)
        mean, std = eval_return(self.game, policy, self.cfg.eval_episodes, evaluation_rng(self.cfg.seed, index))

        gap = None
        if self.cfg.track_nash_gap:
            gap = nash_gap(self.game, policy, self.cfg.nash_tol).overall_gap

        self.run_log.append(
            EvalRecord(env_steps=env_steps, learn_steps=learn_steps, mean_return=mean, std_return=std, nash_gap=gap)
        )
        logging.debug(f"{self.algorithm.value} seed={self.cfg.seed} step={env_steps} return={mean:.4f}")

    def _inactive_digests(self) -> dict[int, str]:
        return {
            agent: array_digest(q.values) for agent, q in enumerate(self.q_tables) if agent != self.active_agent
        }

    def run(self) -> RunLog:
        cfg = self.cfg
        game = self.game
        started = time.perf_counter()

        state = reset(game, self.rng)
        episode_step = 0
        env_steps = 0
        learn_steps = 0
        evaluations = 0

        self._evaluate(0, 0, evaluations)
        turn_digests = self._inactive_digests()

        while env_steps < cfg.total_env_steps:
            batch = []
            for _ in range(cfg.samples_per_update):
                epsilon = self.epsilon.value(env_steps)
                actions = tuple(epsilon_greedy(q.values[state], epsilon, self.rng) for q in self.q_tables)
                transition = step(game, state, actions, self.rng)
                episode_step += 1
                done = episode_step >= game.horizon
                batch.append(transition._replace(done=done))
                env_steps += 1

                if done:
                    state = reset(game, self.rng)
                    episode_step = 0
                else:
                    state = transition.next_state

            # fresh transitions are consumed by this batch's learners and then dropped
            learners, passes = self._learners()
            for agent in learners:
                for _ in range(passes):
                    self._update(agent, batch)
            learn_steps += 1

            if self.algorithm is Algorithm.MA2QL:
                self.batches_in_turn += 1
                if self.batches_in_turn == cfg.updates_per_turn:
                    self._end_turn(turn_digests)
                    turn_digests = self._inactive_digests()

            if env_steps % cfg.eval_interval == 0:
                evaluations += 1
                self._evaluate(env_steps, learn_steps, evaluations)

        self._check_budget()

        self.run_log.update_counts = list(self.update_counts)
        self.run_log.final_policy = JointPolicy.greedy(self.q_tables)
        self.run_log.final_q_tables = [q.copy() for q in self.q_tables]
        self.run_log.wall_clock = time.perf_counter() - started
        logging.info(
            f"{self.algorithm.value} seed={cfg.seed} finished {env_steps} env steps in {self.run_log.wall_clock:.1f}s,"
            f" final return {self.run_log.records[-1].mean_return:.4f}"
        )
        return self.run_log

    def _end_turn(self, turn_digests: dict[int, str]) -> None:
        if self._inactive_digests() != turn_digests:
            raise SchedulingError(f"An inactive agent's Q-table changed during agent {self.active_agent}'s turn.")

        self.turns += 1
        self.batches_in_turn = 0
        self.active_agent = (self.active_agent + 1) % self.game.num_agents

    def _check_budget(self) -> None:
        expected = self.cfg.total_env_steps
        if any(count != expected for count in self.update_counts):
            raise SchedulingError(f"Per-agent update counts {self.update_counts} differ from the budget {expected}.")


def train_iql(game: StochasticGame, cfg: TrainConfig) -> RunLog:
    """
    Independent Q-learning: every samples_per_update env steps, all agents update simultaneously
    on the batch just collected, each treating the others as part of the environment.
    """

    return _SampleTrainer(game, cfg, Algorithm.IQL).run()


def train_ma2ql(game: StochasticGame, cfg: TrainConfig) -> RunLog:
    """
    Multi-agent alternate Q-learning: agents take turns. During agent i's turn everyone keeps acting
    epsilon-greedily, but only agent i learns, for K batches, then the turn passes to agent i + 1.

    Raises:
        SchedulingError: an inactive agent's table changed during a turn, or the per-agent update
            totals don't equal IQL's under the same config.
    """

    return _SampleTrainer(game, cfg, Algorithm.MA2QL).run()


def _dp_record(
    game: StochasticGame,
    q_tables: list[QTable],
    turn: int,
    learn_steps: int,
    seed: int,
    eval_episodes: int,
    tol: float,
    sup_q_error: list[float | None],
    active_agent: int | None,
) -> EvalRecord:
    policy = JointPolicy.greedy(q_tables)
    values = joint_policy_value(game, policy)
    mean, std = eval_return(game, policy, eval_episodes, evaluation_rng(seed, turn))
    report = nash_gap(game, policy, tol, warm_start=q_tables)
    return EvalRecord(
        env_steps=turn,
        learn_steps=learn_steps,
        mean_return=mean,
        std_return=std,
        nash_gap=report.overall_gap,
        sup_q_error=list(sup_q_error),
        joint_value=float(game.init_dist @ values),
        state_values=values.tolist(),
        active_agent=active_agent,
    )


def train_ma2ql_dp(
    game: StochasticGame,
    rounds: int,
    t_per_turn: int,
    tol: float = 1e-6,
    eval_episodes: int = 32,
    seed: int = 0,
) -> RunLog:
    """
    Exact alternate Q-iteration (MA2QL-DP).

    At each turn the active agent's MDP is induced from the other agents' current greedy policies,
    and exactly t_per_turn backups are applied to its own table, warm-started from where its last
    turn left it. Every turn logs the greedy joint policy's value, its Nash gap and the active
    agent's distance to the optimal Q of the MDP it just faced.
    """

    if rounds < 1:
        raise ParameterError(f"rounds must be >= 1, got {rounds}.")
    if t_per_turn < 1:
        raise ParameterError(f"t_per_turn must be >= 1, got {t_per_turn}.")

    started = time.perf_counter()
    n = game.num_agents
    q_tables = [QTable.zeros(game.num_states, dim, agent) for agent, dim in enumerate(game.action_dims)]
    sup_q_error: list[float | None] = [None] * n

    run_log = RunLog(
        algorithm=Algorithm.MA2QL_DP.value,
        config={"rounds": rounds, "t_per_turn": t_per_turn, "tol": tol, "eval_episodes": eval_episodes, "seed": seed},
        seed=seed,
        notes={"return_aggregation": "undiscounted episode sum", "others_policies": "greedy", "rng_algorithm": "PCG64"},
    )
    run_log.append(_dp_record(game, q_tables, 0, 0, seed, eval_episodes, tol, sup_q_error, None))

    turn = 0
    for _ in range(rounds):
        for agent in range(n):
            others = JointPolicy.greedy(q_tables)
            before = [array_digest(q.values) for q in q_tables]

            mdp = induce_mdp(game, agent, others)
            q_tables[agent] = q_iteration(mdp, q_tables[agent], t_per_turn)
            q_star = q_iteration_to_tolerance(mdp, q_tables[agent], tol * 1e-3)
            sup_q_error[agent] = float(np.max(np.abs(q_tables[agent].values - q_star.values)))

            after = [array_digest(q.values) for q in q_tables]
            if any(b != a for index, (b, a) in enumerate(zip(before, after)) if index != agent):
                raise SchedulingError(f"An inactive agent's Q-table changed during agent {agent}'s turn.")

            turn += 1
            run_log.append(
                _dp_record(game, q_tables, turn, turn * t_per_turn, seed, eval_episodes, tol, sup_q_error, agent)
            )

    run_log.update_counts = [rounds * t_per_turn] * n
    run_log.final_policy = JointPolicy.greedy(q_tables)
    run_log.final_q_tables = [q.copy() for q in q_tables]
    gap = action_gap(q_tables)
    # null when no agent has a second action to compare against
    run_log.notes["action_gap"] = gap if math.isfinite(gap) else None
    run_log.wall_clock = time.perf_counter() - started
    logging.info(
        f"ma2ql-dp t={t_per_turn} finished {rounds} rounds in {run_log.wall_clock:.1f}s,"
        f" nash gap {run_log.records[-1].nash_gap:.3e}"
    )
    return run_log


def train_alt_policy_iteration(
    game: StochasticGame, max_rounds: int, tol: float = 1e-6, eval_episodes: int = 32, seed: int = 0
) -> RunLog:
    """
    Alternate policy iteration: agents take turns adopting an exact best response (policy iteration
    on their induced MDP) to the others' current policies.

    The joint value can only go up from turn to turn. Stops once a whole round of n consecutive
    turns changes nobody's policy, or after max_rounds rounds.
    """

    if max_rounds < 1:
        raise ParameterError(f"max_rounds must be >= 1, got {max_rounds}.")
    if tol <= 0:
        raise ParameterError(f"tol must be > 0, got {tol}.")

    started = time.perf_counter()
    n = game.num_agents
    policy = JointPolicy.constant(game.num_states, game.action_dims)

    run_log = RunLog(
        algorithm=Algorithm.ALT_PI.value,
        config={"max_rounds": max_rounds, "tol": tol, "eval_episodes": eval_episodes, "seed": seed},
        seed=seed,
        notes={
            "return_aggregation": "undiscounted episode sum",
            "evaluation": "linear solve",
            "rng_algorithm": "PCG64",
        },
    )

    def record(turn: int, learn_steps: int, active_agent: int | None) -> EvalRecord:
        values = joint_policy_value(game, policy)
        mean, std = eval_return(game, policy, eval_episodes, evaluation_rng(seed, turn))
        return EvalRecord(
            env_steps=turn,
            learn_steps=learn_steps,
            mean_return=mean,
            std_return=std,
            nash_gap=nash_gap(game, policy, tol).overall_gap,
            joint_value=float(game.init_dist @ values),
            state_values=values.tolist(),
            active_agent=active_agent,
        )

    run_log.append(record(0, 0, None))

    turn = 0
    learn_steps = 0
    unchanged_turns = 0
    update_counts = [0] * n
    while turn < max_rounds * n and unchanged_turns < n:
        agent = turn % n
        before = [array_digest(table) for table in policy.tables]

        mdp = induce_mdp(game, agent, policy)
        _, response, improvements = policy_iteration(mdp, policy.tables[agent])
        changed = not np.array_equal(response, policy.tables[agent])
        policy = policy.with_agent(agent, response)

        after = [array_digest(table) for table in policy.tables]
        if any(b != a for index, (b, a) in enumerate(zip(before, after)) if index != agent):
            raise SchedulingError(f"An inactive agent's policy changed during agent {agent}'s turn.")

        unchanged_turns = 0 if changed else unchanged_turns + 1
        update_counts[agent] += improvements
        learn_steps += improvements
        turn += 1
        run_log.append(record(turn, learn_steps, agent))

    run_log.update_counts = update_counts
    run_log.final_policy = policy
    run_log.notes["converged"] = unchanged_turns >= n
    run_log.notes["turns"] = turn
    run_log.wall_clock = time.perf_counter() - started
    logging.info(
        f"alt-pi finished after {turn} turns in {run_log.wall_clock:.1f}s (converged={unchanged_turns >= n})"
    )
    return run_log
