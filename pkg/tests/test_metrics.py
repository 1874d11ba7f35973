import math
from pathlib import Path

import numpy as np
import pytest

from ma2ql_lab.meta.meta_tools import ParameterError
from ma2ql_lab.solvers.dp import JointPolicy, QTable, induce_mdp, policy_iteration, q_iteration, solve_joint_optimal
from ma2ql_lab.solvers.metrics import (
    action_gap,
    eval_return,
    lemma2_error_bound,
    lemma2_min_iterations,
    nash_gap,
    noise_performance_bound,
    target_discrepancy_bound,
)
from ma2ql_lab.wrangle.game import generate_game
from ma2ql_lab.wrangle.game_file import load_game
from ma2ql_lab.wrangle.policy_file import load_policy

GAMES = Path(__file__).parent / "test_games"


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class TestNashGap:
    """
    Unilateral-deviation gaps of joint policies.
    """

    def test_coordinated_matrix_policy(self):
        report = nash_gap(load_game(GAMES / "matrix_game.json"), load_policy(GAMES / "matrix_policy_coordinated.json"))

        assert report.overall_gap == 0.0
        assert report.certified

    def test_bad_coordination_is_still_nash(self):
        """
        Both agents playing action 1 earns nothing, but neither gains by switching alone.
        """

        game = load_game(GAMES / "matrix_game.json")
        report = nash_gap(game, JointPolicy([np.array([1]), np.array([1])], [2, 2]))

        assert report.overall_gap == 0.0
        assert report.certified

    def test_miscoordinated_matrix_policy(self):
        report = nash_gap(
            load_game(GAMES / "matrix_game.json"), load_policy(GAMES / "matrix_policy_miscoordinated.json")
        )

        assert report.agent_gaps == [0.0, 1.0]
        assert report.overall_gap == 1.0
        assert not report.certified
        assert report.best_responses[1].tolist() == [0]

    def test_joint_optimum_is_nash(self):
        tol = 1e-6
        game = generate_game(1, 6, 2, 3, 0.9, 1e-6, 10)
        report = nash_gap(game, solve_joint_optimal(game, 1e-9).policy, tol)

        assert report.overall_gap <= 2 * tol
        assert all(gap >= -2 * tol for gap in report.agent_gaps)

    def test_perturbed_optimum_has_positive_gap(self):
        game = generate_game(2, 6, 2, 3, 0.9, 1e-6, 10)
        optimal = solve_joint_optimal(game, 1e-9).policy
        table = optimal.tables[0].copy()
        table[0] = (table[0] + 1) % 3

        report = nash_gap(game, optimal.with_agent(0, table))

        assert report.agent_gaps[0] > 0.0
        assert not report.certified

    def test_warm_start_gives_same_certificate(self):
        game = generate_game(3, 5, 2, 2, 0.9, 1e-6, 10)
        policy = JointPolicy.uniform(5, [2, 2])
        warm = [QTable(np.full((5, 2), 3.0), agent) for agent in range(2)]

        cold_report = nash_gap(game, policy, 1e-8)
        warm_report = nash_gap(game, policy, 1e-8, warm_start=warm)

        assert abs(cold_report.overall_gap - warm_report.overall_gap) <= 1e-12
        assert cold_report.certified == warm_report.certified

    def test_tol_must_be_positive(self):
        game = load_game(GAMES / "matrix_game.json")
        with pytest.raises(ParameterError):
            nash_gap(game, JointPolicy.constant(1, [2, 2]), tol=0.0)

    def test_report_dict(self):
        report = nash_gap(
            load_game(GAMES / "matrix_game.json"), load_policy(GAMES / "matrix_policy_miscoordinated.json")
        )

        assert report.to_dict() == {
            "overall_gap": 1.0,
            "agent_gaps": [0.0, 1.0],
            "tol": 1e-6,
            "certified": False,
            "best_responses": [[0], [0]],
        }


class TestEvalReturn:
    def test_deterministic_rollouts_have_no_spread(self):
        game = load_game(GAMES / "chain_game.json")
        mean, std = eval_return(game, JointPolicy([np.array([0, 0])], [2]), 8, rng())

        # one step to reach state 1, then 9 steps collecting 2
        assert mean == 18.0
        assert std == 0.0

    def test_discounted_returns(self):
        game = load_game(GAMES / "chain_game.json")
        mean, _ = eval_return(game, JointPolicy([np.array([0, 0])], [2]), 4, rng(), discounted=True)

        expected = sum(2.0 * 0.5**k for k in range(1, 10))
        assert abs(mean - expected) <= 1e-12

    def test_single_step_expectation(self):
        game = load_game(GAMES / "matrix_game.json")
        episodes = 10_000
        mean, _ = eval_return(game, JointPolicy.uniform(1, [2, 2]), episodes, rng(5))

        # only the (0, 0) cell pays, and it is hit a quarter of the time
        sigma = math.sqrt(0.25 * 0.75)
        assert abs(mean - 0.25) <= 4 * sigma / math.sqrt(episodes)

    def test_doubling_episodes_shrinks_standard_error(self):
        game = generate_game(5, 6, 2, 3, 0.9, 0.0, 15)
        policy = JointPolicy.uniform(6, [3, 3])

        _, std_small = eval_return(game, policy, 4000, rng(11))
        _, std_large = eval_return(game, policy, 8000, rng(12))

        ratio = (std_small / math.sqrt(4000)) / (std_large / math.sqrt(8000))
        assert 1.2 <= ratio <= 1.7

    def test_same_stream_same_result(self):
        game = generate_game(4, 5, 2, 3, 0.9, 0.0, 20)
        policy = JointPolicy.uniform(5, [3, 3])

        assert eval_return(game, policy, 16, rng(9)) == eval_return(game, policy, 16, rng(9))

    def test_episodes_must_be_positive(self):
        game = load_game(GAMES / "chain_game.json")
        with pytest.raises(ParameterError):
            eval_return(game, JointPolicy.constant(2, [2]), 0, rng())

    def test_policy_must_fit(self):
        game = load_game(GAMES / "chain_game.json")
        with pytest.raises(ParameterError):
            eval_return(game, JointPolicy.constant(3, [2]), 1, rng())


class TestWarmStartIterationBound:
    def test_reference_values(self):
        assert lemma2_min_iterations(0.9, 1.0, 0.01) == 95
        assert lemma2_min_iterations(0.5, 1.0, 1.0) == 4

    def test_monotone_in_epsilon(self):
        counts = [lemma2_min_iterations(0.9, 1.0, epsilon) for epsilon in (1.0, 0.1, 0.01, 1e-3, 1e-4)]
        assert counts == sorted(counts)

    @pytest.mark.parametrize("gamma, r_max, epsilon", [(0.9, 1.0, 0.01), (0.5, 1.0, 1.0), (0.95, 2.0, 1e-3)])
    def test_matches_brute_force_scan(self, gamma, r_max, epsilon):
        t = 0
        while lemma2_error_bound(gamma, r_max, epsilon, t) > epsilon:
            t += 1

        assert lemma2_min_iterations(gamma, r_max, epsilon) == t

    @pytest.mark.parametrize(
        "gamma, r_max, epsilon", [(0.0, 1.0, 0.1), (1.0, 1.0, 0.1), (0.9, 0.0, 0.1), (0.9, 1.0, 0)]
    )
    def test_domain(self, gamma, r_max, epsilon):
        with pytest.raises(ParameterError):
            lemma2_min_iterations(gamma, r_max, epsilon)

    def test_warm_started_turn_reaches_epsilon(self):
        """
        A table within epsilon of last turn's optimum ends within epsilon of this turn's optimum after the
        prescribed number of backups, even though the other agent changed its policy in between.
        """

        epsilon = 1e-2
        for seed in range(5):
            game = generate_game(seed, 5, 2, 3, 0.9, 0.0, 10)
            before = induce_mdp(game, 0, JointPolicy.constant(5, [3, 3], action=0))
            after = induce_mdp(game, 0, JointPolicy.constant(5, [3, 3], action=2))

            q_before, _, _ = policy_iteration(before)
            q_after, _, _ = policy_iteration(after)

            noise = rng(seed).uniform(-epsilon, epsilon, size=(5, 3))
            warm = QTable(q_before.values + noise)
            t = lemma2_min_iterations(game.gamma, game.r_max, epsilon)

            q = q_iteration(after, warm, t)
            assert np.max(np.abs(q.values - q_after.values)) <= epsilon


class TestTargetDiscrepancyBound:
    def test_identical_distributions(self):
        p = np.array([[0.2, 0.8], [1.0, 0.0]])
        assert target_discrepancy_bound(p, p, 0.9, 1.0).tolist() == [0.0, 0.0]

    def test_disjoint_point_masses(self):
        bound = target_discrepancy_bound(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), 0.5, 1.0)
        assert bound.tolist() == [3.0]

    def test_half_overlap(self):
        bound = target_discrepancy_bound(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]), 0.0, 1.0)
        assert bound.tolist() == [1.0]

    def test_mismatched_supports(self):
        with pytest.raises(ParameterError):
            target_discrepancy_bound(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0, 0.0]]), 0.5, 1.0)

    def test_rows_must_be_distributions(self):
        with pytest.raises(ParameterError):
            target_discrepancy_bound(np.array([[0.5, 0.6]]), np.array([[1.0, 0.0]]), 0.5, 1.0)


class TestDiagnostics:
    def test_action_gap(self):
        q_tables = [QTable(np.array([[0.0, 1.0, 3.0], [2.0, 0.5, 1.5]])), QTable(np.array([[4.0], [1.0]]), 1)]
        assert action_gap(q_tables) == 0.5

    def test_action_gap_ties(self):
        assert action_gap([QTable(np.array([[2.0, 2.0]]))]) == 0.0

    def test_single_action_agents_dont_count(self):
        assert action_gap([QTable(np.array([[1.0], [2.0]]))]) == math.inf

    def test_noise_performance_bound(self):
        assert noise_performance_bound(1e-6, 0.9) == pytest.approx(1e-5)
        assert noise_performance_bound(0.0, 0.5) == 0.0

    def test_noise_performance_bound_domain(self):
        with pytest.raises(ParameterError):
            noise_performance_bound(-1.0, 0.5)
