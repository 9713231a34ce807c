"""Tests for reporting module."""

import json
import math

import pandas as pd
import pytest
from scipy.stats import ttest_rel

from bandit_rex.config_manager import parse_experiment
from bandit_rex.errors import MissingDataFile
from bandit_rex.reporting import (
    MANIFEST_NAME,
    config_hash,
    read_metrics,
    significance,
    summarize,
    write_report,
    write_results,
)
from bandit_rex.runner import CurveRow, MetricRow, ReplicationResult, RunResult


@pytest.fixture
def run_result():
    config = parse_experiment(
        {
            "environment": {"n_users": 5, "n_challenges": 10, "weekly_pool": 5, "K": 3},
            "policies": [{"name": "ts", "kind": "ts_diverse"}, {"name": "ucb", "kind": "ucb"}],
            "evaluation": {"replications": 3},
        }
    )
    values = {"ts": (0.6, 0.7, 0.9), "ucb": (0.5, 0.4, 0.6)}
    replications = tuple(
        ReplicationResult(
            r,
            r,
            metrics=tuple(
                MetricRow(r, r, policy, "omniscient", values[policy][r]) for policy in values
            ),
            curves=(CurveRow(r, r, "ts", 1, 0.1 * (r + 1), 0.1 * (r + 1)),),
        )
        for r in range(3)
    )
    return RunResult(config, (0, 1, 2), replications)


def metrics_frame(rows) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=["replication", "seed", "policy", "metric", "value"])


class TestWriteResults:
    """Test suite for write_results and read_metrics."""

    def test_files_and_manifest(self, run_result, tmp_path):
        """Test that the tables and a manifest with the config hash are written."""
        written = write_results(run_result, tmp_path)
        assert [p.name for p in written] == [
            "metrics.csv",
            "learning_curves.csv",
            "diversity.csv",
            MANIFEST_NAME,
        ]
        manifest = json.loads((tmp_path / MANIFEST_NAME).read_text(encoding="utf-8"))
        assert manifest["config_hash"] == config_hash(run_result.config.to_dict())
        assert manifest["seeds"] == [0, 1, 2]
        assert manifest["policies"] == ["ts", "ucb"]

    def test_identical_runs_identical_bytes(self, run_result, tmp_path):
        """Test that writing the same result twice gives the same files."""
        write_results(run_result, tmp_path / "a")
        write_results(run_result, tmp_path / "b")
        for name in ("metrics.csv", "learning_curves.csv", "diversity.csv", MANIFEST_NAME):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_learning_curves_end_with_means(self, run_result, tmp_path):
        """Test that learning_curves.csv appends the across-replication mean per round."""
        write_results(run_result, tmp_path)
        frame = pd.read_csv(tmp_path / "learning_curves.csv")
        assert frame["replication"].tolist() == [0, 1, 2, -1]
        mean_row = frame.iloc[-1]
        assert mean_row["seed"] == -1
        assert mean_row["policy"] == "ts"
        assert mean_row["round"] == 1
        assert mean_row["reward"] == pytest.approx(0.2)
        assert mean_row["cumulative_mean"] == pytest.approx(0.2)

    def test_read_back(self, run_result, tmp_path):
        """Test that metrics.csv reads back with one row per metric value."""
        write_results(run_result, tmp_path)
        frame, manifest = read_metrics(tmp_path)
        assert len(frame) == 6
        assert manifest["policies"] == ["ts", "ucb"]

    def test_missing_results(self, tmp_path):
        """Test that a directory without metrics raises MissingDataFile."""
        with pytest.raises(MissingDataFile, match="metrics.csv"):
            read_metrics(tmp_path)

    def test_hash_ignores_key_order(self):
        """Test that the hash is taken over canonical JSON."""
        assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})


class TestSummaries:
    """Test suite for summarize and significance."""

    def test_mean_and_standard_error(self):
        """Test the mean and the ddof-1 standard error over replications."""
        frame = metrics_frame([(0, 0, "ts", "m", 0.2), (1, 1, "ts", "m", 0.4)])
        row = summarize(frame).iloc[0]
        assert row["mean"] == pytest.approx(0.3)
        assert row["std_error"] == pytest.approx(0.1)
        assert row["n_replications"] == 2

    def test_single_replication_has_zero_error(self):
        """Test that one replication reports a zero standard error."""
        frame = metrics_frame([(0, 0, "ts", "m", 0.2)])
        assert summarize(frame).iloc[0]["std_error"] == 0.0

    def test_policy_order(self):
        """Test that rows follow the requested policy order."""
        frame = metrics_frame([(0, 0, "b", "m", 0.1), (0, 0, "a", "m", 0.2)])
        assert summarize(frame, ["a", "b"])["policy"].tolist() == ["a", "b"]

    def test_paired_t_test(self, run_result):
        """Test that significance matches a paired t-test against the focal policy."""
        rows = [(r.replication, r.seed, r.policy, r.metric, r.value) for r in run_result.metrics]
        frame = metrics_frame(rows)
        table = significance(frame, "ts")
        expected = ttest_rel([0.6, 0.7, 0.9], [0.5, 0.4, 0.6])
        row = table.iloc[0]
        assert row["policy"] == "ucb"
        assert row["t_statistic"] == pytest.approx(expected.statistic)
        assert row["p_value"] == pytest.approx(expected.pvalue)
        assert row["mean_difference"] == pytest.approx(0.7 / 3)

    def test_constant_difference_has_no_statistic(self):
        """Test that a constant paired difference gives NaN instead of a statistic."""
        frame = metrics_frame(
            [
                (0, 0, "ts", "m", 0.5),
                (0, 0, "ucb", "m", 0.25),
                (1, 1, "ts", "m", 0.75),
                (1, 1, "ucb", "m", 0.5),
            ]
        )
        row = significance(frame, "ts").iloc[0]
        assert math.isnan(row["t_statistic"])
        assert row["mean_difference"] == 0.25


class TestWriteReport:
    """Test suite for write_report function."""

    def test_report_files(self, run_result, tmp_path):
        """Test that summary tables are written next to the metrics."""
        write_results(run_result, tmp_path)
        summary = write_report(tmp_path)
        assert summary["policy"].tolist() == ["ts", "ucb"]
        records = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
        assert records[0]["seed_list"] == [0, 1, 2]
        assert records[0]["value"] == pytest.approx(2.2 / 3)
        assert (tmp_path / "significance.csv").is_file()
