"""
Long-running checks on the didactic game and against Monte-Carlo oracles.
Deselected by default, run them with `pytest -m slow`.
"""

import itertools
import math

import numpy as np
import pytest

from ma2ql_lab.learn.trainers import TrainConfig, evaluation_rng, train_iql, train_ma2ql, train_ma2ql_dp
from ma2ql_lab.solvers.dp import (
    JointPolicy,
    QTable,
    induce_mdp,
    policy_evaluation,
    policy_iteration,
    q_iteration,
    solve_joint_optimal,
)
from ma2ql_lab.solvers.metrics import eval_return, lemma2_min_iterations, nash_gap
from ma2ql_lab.wrangle.game import generate_game

pytestmark = pytest.mark.slow


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def didactic_game(seed: int = 1):
    return generate_game(seed, 30, 3, 5, 0.95, 1e-6, 30)


@pytest.mark.parametrize("seed", range(5))
def test_alternate_q_iteration_converges_for_any_t(seed):
    game = didactic_game(seed)
    optimal = solve_joint_optimal(game, 1e-9).values

    run_logs = [train_ma2ql_dp(game, rounds=200, t_per_turn=t_per_turn) for t_per_turn in (1, 5, 10, 50)]
    for run_log in run_logs:
        assert run_log.records[-1].nash_gap <= 1e-6
        assert np.all(np.array(run_log.records[-1].state_values) <= optimal + 1e-8)
        assert nash_gap(game, run_log.final_policy).certified

    for first, second in itertools.combinations(run_logs, 2):
        if first.final_policy == second.final_policy:
            assert abs(first.records[-1].joint_value - second.records[-1].joint_value) <= 1e-6


def test_ma2ql_outlearns_iql_on_most_seeds():
    wins = 0
    for seed in range(5):
        game = didactic_game(seed)
        cfg = TrainConfig(seed=seed)
        optimum = solve_joint_optimal(game, 1e-9)
        optimal_mean, optimal_std = eval_return(game, optimum.policy, 10_000, evaluation_rng(seed, 0))

        finals = [train(game, cfg).records[-1] for train in (train_iql, train_ma2ql)]
        for final in finals:
            standard_error = math.hypot(final.std_return / math.sqrt(cfg.eval_episodes), optimal_std / 100)
            assert final.mean_return <= optimal_mean + 2 * standard_error

        iql, ma2ql = finals
        wins += ma2ql.mean_return >= iql.mean_return

    assert wins >= 4


def test_didactic_budget_parity():
    game = didactic_game()
    cfg = TrainConfig()

    iql = train_iql(game, cfg)
    ma2ql = train_ma2ql(game, cfg)

    assert iql.update_counts == ma2ql.update_counts == [90_000] * 3
    assert iql.records[-1].env_steps == ma2ql.records[-1].env_steps == 90_000


def test_policy_evaluation_matches_rollouts():
    game = generate_game(21, 5, 1, 3, 0.9, 0.0, 200)
    mdp = induce_mdp(game, 0, JointPolicy.constant(5, [3]))
    policy = rng(0).dirichlet(np.ones(3), size=5)
    q = policy_evaluation(mdp, policy, method="linear")

    rollouts = 100_000
    transition_cdf = np.cumsum(mdp.transition, axis=2)
    policy_cdf = np.cumsum(policy, axis=1)
    generator = rng(1)

    for action in range(3):
        states = np.zeros(rollouts, dtype=np.int64)
        actions = np.full(rollouts, action)
        returns = np.zeros(rollouts)
        for k in range(200):
            returns += mdp.gamma**k * mdp.reward[states, actions]
            draws = generator.random(rollouts)
            states = np.minimum(np.count_nonzero(transition_cdf[states, actions] <= draws[:, None], axis=1), 4)
            draws = generator.random(rollouts)
            actions = np.minimum(np.count_nonzero(policy_cdf[states] <= draws[:, None], axis=1), 2)

        standard_error = returns.std() / math.sqrt(rollouts)
        assert abs(returns.mean() - q.values[0, action]) <= 4 * standard_error + 1e-6


def test_eval_return_matches_finite_horizon_values():
    game = generate_game(22, 6, 2, 3, 0.9, 0.0, 15)
    policy = JointPolicy.uniform(6, [3, 3])

    joint = policy.joint_probabilities()
    chain = np.einsum("sj,sjt->st", joint, game.transition)
    chain_reward = np.einsum("sj,sj->s", joint, game.reward)
    values = np.zeros(6)
    for _ in range(game.horizon):
        values = chain_reward + chain @ values
    expected = float(game.init_dist @ values)

    episodes = 10_000
    mean, std = eval_return(game, policy, episodes, rng(3))
    assert abs(mean - expected) <= 4 * std / math.sqrt(episodes)


@pytest.mark.parametrize("gamma", [0.5, 0.9, 0.95])
@pytest.mark.parametrize("epsilon", [1e-2, 1e-4])
def test_warm_started_backups_stay_within_epsilon(gamma, epsilon):
    for seed in range(50):
        game = generate_game(seed, 5, 2, 3, gamma, 0.0, 10)
        generator = rng(seed)
        policies = [JointPolicy([generator.integers(3, size=5) for _ in range(2)], [3, 3]) for _ in range(2)]
        before = induce_mdp(game, 0, policies[0])
        after = induce_mdp(game, 0, policies[1])

        q_before, _, _ = policy_iteration(before)
        q_after, _, _ = policy_iteration(after)
        warm = QTable(q_before.values + generator.uniform(-epsilon, epsilon, size=(5, 3)))

        q = q_iteration(after, warm, lemma2_min_iterations(gamma, game.r_max, epsilon))
        assert np.max(np.abs(q.values - q_after.values)) <= epsilon
