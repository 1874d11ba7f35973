import json
from pathlib import Path

import numpy as np
import pytest

from ma2ql_lab.meta.meta_tools import FormatError
from ma2ql_lab.solvers.dp import JointPolicy, QTable
from ma2ql_lab.utils import atomic_write_text, file_digest
from ma2ql_lab.wrangle.game import generate_game
from ma2ql_lab.wrangle.game_file import game_to_dict, load_game, save_game
from ma2ql_lab.wrangle.policy_file import load_policy, q_table_csv, save_policy

GAMES = Path(__file__).parent / "test_games"


class TestGameFiles:
    """
    Saving and loading games through the versioned JSON container.
    """

    def test_saved_game_loads_bit_exact(self, tmp_path):
        game = generate_game(1, 5, 2, 3, 0.95, 1e-6, 30)
        path = tmp_path / "game.json"
        save_game(game, path)

        loaded = load_game(path)
        assert loaded == game
        assert loaded.reward.tobytes() == game.reward.tobytes()
        assert loaded.reward_noise.tobytes() == game.reward_noise.tobytes()

    def test_same_game_same_digest(self, tmp_path):
        save_game(generate_game(1, 5, 2, 3, 0.95, 1e-6, 30), tmp_path / "a.json")
        save_game(generate_game(1, 5, 2, 3, 0.95, 1e-6, 30), tmp_path / "b.json")

        assert file_digest(tmp_path / "a.json") == file_digest(tmp_path / "b.json")

    def test_handcrafted_game(self):
        game = load_game(GAMES / "chain_game.json")

        assert game.num_states == 2
        assert game.action_dims == (2,)
        assert game.gamma == 0.5
        assert game.init_dist.tolist() == [1.0, 0.0]

    def test_row_sum_rejected(self):
        with pytest.raises(FormatError, match="sums to"):
            load_game(GAMES / "bad_row_sum.json")

    def test_truncated_file_rejected(self):
        with pytest.raises(FormatError, match="truncated_game.json"):
            load_game(GAMES / "truncated_game.json")

    def test_other_major_version_rejected(self):
        with pytest.raises(FormatError, match="version"):
            load_game(GAMES / "future_version.json")

    def test_minor_version_accepted(self, tmp_path):
        document = json.loads((GAMES / "chain_game.json").read_text())
        document["header"]["format_version"] = "1.3"
        path = tmp_path / "game.json"
        path.write_text(json.dumps(document))

        assert load_game(path) == load_game(GAMES / "chain_game.json")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError, match="not found"):
            load_game(tmp_path / "nowhere.json")

    def test_shape_mismatch_names_the_tensor(self, tmp_path):
        document = game_to_dict(generate_game(1, 3, 1, 2, 0.9, 0.0, 5))
        document["reward"]["data"] = document["reward"]["data"][:-1]
        path = tmp_path / "game.json"
        path.write_text(json.dumps(document))

        with pytest.raises(FormatError, match="reward"):
            load_game(path)

    @pytest.mark.parametrize("key, value", [("gamma", "zero"), ("horizon", "ten"), ("seed", None), ("num_agents", [1])])
    def test_non_numeric_header_value(self, tmp_path, key, value):
        document = json.loads((GAMES / "chain_game.json").read_text())
        document["header"][key] = value
        path = tmp_path / "game.json"
        path.write_text(json.dumps(document))

        with pytest.raises(FormatError, match=r"\[header\]"):
            load_game(path)

    def test_failed_save_keeps_old_file(self, tmp_path):
        path = tmp_path / "game.json"
        save_game(generate_game(1, 3, 1, 2, 0.9, 0.0, 5), path)
        before = path.read_bytes()

        class Unserializable:
            pass

        with pytest.raises(TypeError):
            atomic_write_text(path, Unserializable())

        assert path.read_bytes() == before
        assert [p.name for p in tmp_path.iterdir()] == ["game.json"]


class TestPolicyFiles:
    def test_policy_round_trip(self, tmp_path):
        policy = JointPolicy([np.array([0, 1, 1]), np.array([[0.5, 0.5], [1.0, 0.0], [0.25, 0.75]])], [2, 2])
        save_policy(policy, tmp_path / "policy.json")

        assert load_policy(tmp_path / "policy.json") == policy

    def test_handcrafted_policy(self):
        policy = load_policy(GAMES / "matrix_policy_miscoordinated.json")

        assert policy.num_agents == 2
        assert [table.tolist() for table in policy.tables] == [[0], [1]]

    def test_policy_out_of_range(self, tmp_path):
        path = tmp_path / "policy.json"
        path.write_text(json.dumps({"format_version": "1.0", "action_dims": [2], "tables": [[0, 2]]}))

        with pytest.raises(FormatError, match="invalid policy"):
            load_policy(path)

    def test_game_is_not_a_policy(self):
        with pytest.raises(FormatError):
            load_policy(GAMES / "chain_game.json")

    def test_q_table_csv(self):
        text = q_table_csv(QTable(np.array([[0.1, 2.0], [3.0, -0.5]])))
        assert text == "state,action_0,action_1\n0,0.1,2.0\n1,3.0,-0.5\n"
