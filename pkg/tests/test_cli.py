"""Tests for the command-line entry point."""

import json
from unittest.mock import patch

import pytest

from bandit_rex.cli import (
    EXIT_CONFIG,
    EXIT_MISSING_DATA,
    EXIT_OK,
    EXIT_SOLVER,
    build_parser,
    main,
)
from bandit_rex.errors import SolverFailure


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "experiment.json"
    document = {
        "environment": {
            "n_users": 8,
            "n_challenges": 20,
            "horizon_weeks": 5,
            "weekly_pool": 14,
            "K": 3,
            "seed": 11,
        },
        "policies": [
            {"name": "ts", "kind": "ts_diverse"},
            {"name": "exploit", "kind": "pure_exploit"},
        ],
        "evaluation": {"replications": 2, "train_weeks": 2, "dynamic_users_n": 3},
    }
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


class TestBuildParser:
    """Test suite for build_parser function."""

    def test_evaluate_requires_data(self):
        """Test that evaluate without --data is a usage error."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["evaluate"])

    def test_run_options(self):
        """Test that run accepts the shared experiment options."""
        args = build_parser().parse_args(["run", "--seed", "5", "--policies", "ts", "--quiet"])
        assert args.seed == 5
        assert args.policies == "ts"
        assert args.quiet

    def test_version(self, capsys):
        """Test that --version prints the package version."""
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert "bandit-rex" in capsys.readouterr().out


class TestMain:
    """Test suite for main function."""

    def test_generate_run_report(self, config_path, tmp_path):
        """Test the full generate, run and report cycle."""
        data_dir = tmp_path / "data"
        results = tmp_path / "results"
        assert main(["generate", "--config", str(config_path), "--out", str(data_dir)]) == EXIT_OK
        assert (data_dir / "ground_truth.json").is_file()

        assert main(["run", "--config", str(config_path), "--out", str(results)]) == EXIT_OK
        assert (results / "metrics.csv").is_file()
        assert (results / "run_manifest.json").is_file()

        assert main(["report", str(results), "--quiet"]) == EXIT_OK
        assert (results / "summary.csv").is_file()
        assert (results / "significance.csv").is_file()

    def test_generate_defaults_to_data_dir(self, config_path, tmp_path, monkeypatch):
        """Test that generate without --out writes to ./data."""
        monkeypatch.chdir(tmp_path)
        assert main(["generate", "--config", str(config_path), "--quiet"]) == EXIT_OK
        assert (tmp_path / "data" / "users.csv").is_file()

    def test_logs_the_config_path(self, config_path, tmp_path, capsys):
        """Test that the loaded configuration file is named on the log stream."""
        assert main(["generate", "--config", str(config_path), "--out", str(tmp_path)]) == EXIT_OK
        assert f"Loaded experiment v1 from {config_path}" in capsys.readouterr().err

    def test_evaluate_generated_data(self, config_path, tmp_path):
        """Test that evaluate replays a generated data directory."""
        data_dir = tmp_path / "data"
        results = tmp_path / "results"
        main(["generate", "--config", str(config_path), "--out", str(data_dir), "--quiet"])
        code = main(
            [
                "evaluate",
                "--config",
                str(config_path),
                "--data",
                str(data_dir),
                "--out",
                str(results),
                "--policies",
                "exploit",
                "--quiet",
            ]
        )
        assert code == EXIT_OK
        manifest = json.loads((results / "run_manifest.json").read_text(encoding="utf-8"))
        assert manifest["policies"] == ["exploit"]

    def test_invalid_config(self, tmp_path, capsys):
        """Test that an invalid configuration exits 1 naming the field."""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"policies": [{"name": "x", "kind": "nope"}]}), "utf-8")
        assert main(["run", "--config", str(path)]) == EXIT_CONFIG
        assert "policies[0].kind" in capsys.readouterr().err

    def test_unknown_policy_override(self, config_path):
        """Test that --policies naming an unconfigured policy exits 1."""
        assert main(["run", "--config", str(config_path), "--policies", "nope"]) == EXIT_CONFIG

    def test_missing_data(self, config_path, tmp_path):
        """Test that evaluating a missing data directory exits 2."""
        code = main(["evaluate", "--config", str(config_path), "--data", str(tmp_path / "none")])
        assert code == EXIT_MISSING_DATA

    def test_missing_results(self, tmp_path):
        """Test that reporting on an empty directory exits 2."""
        assert main(["report", str(tmp_path)]) == EXIT_MISSING_DATA

    def test_solver_failure(self, config_path, capsys):
        """Test that a solver failure exits 3 and names the round."""
        failure = SolverFailure("policy ts: no convergence", 0.5, round_index=4)
        with patch("bandit_rex.cli.run_experiment", side_effect=failure):
            assert main(["run", "--config", str(config_path)]) == EXIT_SOLVER
        assert "round 4" in capsys.readouterr().err
