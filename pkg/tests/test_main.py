import json
import shutil
from pathlib import Path

from click.testing import CliRunner

from ma2ql_lab import __version__
from ma2ql_lab.main import cli
from ma2ql_lab.utils import file_digest

GAMES = Path(__file__).parent / "test_games"
GENERATE = ["generate", "--seed", "1", "--states", "5", "--agents", "2", "--actions", "3", "--horizon", "10"]


def invoke(*args: str, **kwargs):
    return CliRunner().invoke(cli, [str(arg) for arg in args], **kwargs)


def test_version():
    result = invoke("--version")

    assert result.exit_code == 0
    assert __version__ in result.output


class TestGenerate:
    def test_prints_digest(self, tmp_path):
        path = tmp_path / "game.json"
        result = invoke(*GENERATE, "--gamma", "0.95", "--noise", "1e-6", "-o", path)

        assert result.exit_code == 0
        assert result.output.split()[0] == file_digest(path)

    def test_rerun_gives_same_digest(self, tmp_path):
        first = invoke(*GENERATE, "--gamma", "0.95", "-o", tmp_path / "a.json")
        second = invoke(*GENERATE, "--gamma", "0.95", "-o", tmp_path / "b.json")

        assert first.output.split()[0] == second.output.split()[0]

    def test_missing_flag(self, tmp_path):
        result = invoke("generate", "--seed", "1", "--states", "5", "-o", tmp_path / "game.json")

        assert result.exit_code == 2
        assert "Missing option" in result.output
        assert not (tmp_path / "game.json").exists()

    def test_gamma_must_stay_below_one(self, tmp_path):
        result = invoke(*GENERATE, "--gamma", "1.0", "-o", tmp_path / "game.json")

        assert result.exit_code == 2
        assert "gamma" in result.output
        assert not (tmp_path / "game.json").exists()


class TestNashCheck:
    """
    Exit codes: 0 certified, 1 not certified, 2 bad input.
    """

    def test_certified(self, tmp_path):
        report = tmp_path / "report.json"
        result = invoke(
            "nash-check", GAMES / "matrix_game.json", GAMES / "matrix_policy_coordinated.json", "-o", report
        )

        assert result.exit_code == 0
        assert "certified" in result.output
        assert report.is_file()

    def test_not_certified(self, tmp_path):
        result = invoke(
            "nash-check",
            GAMES / "matrix_game.json",
            GAMES / "matrix_policy_miscoordinated.json",
            "-o",
            tmp_path / "report.json",
        )

        assert result.exit_code == 1
        assert "NOT certified" in result.output

    def test_default_report_location(self, tmp_path):
        policy = tmp_path / "policy.json"
        shutil.copy(GAMES / "matrix_policy_coordinated.json", policy)

        invoke("nash-check", GAMES / "matrix_game.json", policy)
        assert (tmp_path / "policy_nash.json").is_file()

    def test_tol_must_be_positive(self, tmp_path):
        result = invoke(
            "nash-check",
            GAMES / "matrix_game.json",
            GAMES / "matrix_policy_coordinated.json",
            "--tol",
            "0",
            "-o",
            tmp_path / "report.json",
        )

        assert result.exit_code == 2

    def test_bad_game_file(self, tmp_path):
        result = invoke(
            "nash-check",
            GAMES / "bad_row_sum.json",
            GAMES / "matrix_policy_coordinated.json",
            "-o",
            tmp_path / "report.json",
        )

        assert result.exit_code == 2
        assert "bad_row_sum.json" in result.output

    def test_non_numeric_header(self, tmp_path):
        document = json.loads((GAMES / "matrix_game.json").read_text())
        document["header"]["gamma"] = "zero"
        game = tmp_path / "game.json"
        game.write_text(json.dumps(document))

        result = invoke("nash-check", game, GAMES / "matrix_policy_coordinated.json", "-o", tmp_path / "report.json")

        assert result.exit_code == 2
        assert "[header]" in result.output
        assert not (tmp_path / "report.json").exists()


class TestSolveOptimal:
    def test_chain_game(self, tmp_path):
        result = invoke("solve-optimal", GAMES / "chain_game.json", "-o", tmp_path, "--tol", "1e-10")

        assert result.exit_code == 0
        assert "mean V* 3.000000" in result.output
        assert (tmp_path / "policy_optimal.json").is_file()
        assert (tmp_path / "values_optimal.csv").read_text().splitlines()[0] == "state,value"

    def test_capacity_limit(self, tmp_path):
        result = invoke("solve-optimal", GAMES / "chain_game.json", "-o", tmp_path, "--capacity-limit", "3")
        assert result.exit_code == 2


class TestRunAndCompare:
    def write_spec(self, path: Path, t_values: str) -> Path:
        path.write_text(
            'format_version = "1.0"\n'
            'algorithm = "ma2ql-dp"\n'
            "seeds = [0]\n"
            'output_dir = "unused"\n'
            "[game]\n"
            "states = 4\n"
            "agents = 2\n"
            "actions = 2\n"
            "horizon = 5\n"
            "[dp]\n"
            "rounds = 2\n"
            "eval_episodes = 2\n"
            "[sweep]\n"
            'axis = "t"\n'
            f"values = {t_values}\n"
        )
        return path

    def test_run_then_compare(self, tmp_path):
        first = self.write_spec(tmp_path / "first.toml", "[1, 2]")
        second = self.write_spec(tmp_path / "second.toml", "[5]")

        assert invoke("run", first, "--output-dir", tmp_path / "t_small").exit_code == 0
        assert invoke("run", second, "--output-dir", tmp_path / "t_large").exit_code == 0

        output = tmp_path / "comparison.csv"
        result = invoke("compare", tmp_path / "t_small", tmp_path / "t_large", "-o", output)

        assert result.exit_code == 0
        assert output.read_text().splitlines()[0] == (
            "env_steps,t_small@1:mean_return,t_small@1:std_return,t_small@2:mean_return,t_small@2:std_return,"
            "t_large@5:mean_return,t_large@5:std_return"
        )

    def test_invalid_spec_lists_problems(self, tmp_path):
        spec = tmp_path / "spec.toml"
        spec.write_text('format_version = "1.0"\nalgorithm = "sarsa"\nseeds = []\n')

        result = invoke("run", spec)

        assert result.exit_code == 2
        assert "3 problem(s)" in result.output

    def test_compare_needs_aggregate(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()

        result = invoke("compare", tmp_path / "a", tmp_path / "b", "-o", tmp_path / "out.csv")
        assert result.exit_code == 2


def test_unknown_log_level(tmp_path):
    result = invoke(
        "nash-check",
        GAMES / "matrix_game.json",
        GAMES / "matrix_policy_coordinated.json",
        "-o",
        tmp_path / "report.json",
        env={"MA2QL_LAB_LOG_LEVEL": "LOUD"},
    )

    assert result.exit_code == 2
    assert "LOUD" in result.output
    assert not (tmp_path / "report.json").exists()
