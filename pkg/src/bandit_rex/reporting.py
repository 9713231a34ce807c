"""Result files: per-replication tables, the run manifest, and summary reports."""

import hashlib
import json
import logging
import math
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.stats import ttest_rel

from bandit_rex import __version__
from bandit_rex.errors import MissingDataFile, ParseError
from bandit_rex.runner import CurveRow, DiversityRow, MetricRow, RunResult

logger = logging.getLogger(__name__)

METRIC_COLUMNS = tuple(f.name for f in fields(MetricRow))
CURVE_COLUMNS = tuple(f.name for f in fields(CurveRow))
DIVERSITY_COLUMNS = tuple(f.name for f in fields(DiversityRow))
SUMMARY_COLUMNS = ("policy", "metric", "mean", "std_error", "n_replications")
SIGNIFICANCE_COLUMNS = ("metric", "policy", "focal", "mean_difference", "t_statistic", "p_value")
MANIFEST_NAME = "run_manifest.json"


def config_hash(document: dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of a configuration document."""
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_results(result: RunResult, out_dir: str | Path) -> list[Path]:
    """Write metrics.csv, learning_curves.csv, diversity.csv and run_manifest.json.

    learning_curves.csv ends with one row per policy and round averaged across
    replications, marked by replication and seed -1.

    The files depend only on the configuration, so identical runs give identical bytes.

    Returns:
        The paths written
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = (
        ("metrics.csv", result.metrics, METRIC_COLUMNS),
        ("learning_curves.csv", result.curves + result.mean_curves, CURVE_COLUMNS),
        ("diversity.csv", result.diversity, DIVERSITY_COLUMNS),
    )
    written = []
    for name, rows, columns in tables:
        frame = pd.DataFrame([asdict(row) for row in rows], columns=list(columns))
        frame.to_csv(out / name, index=False)
        written.append(out / name)

    document = result.config.to_dict()
    manifest = {
        "version": __version__,
        "config_hash": config_hash(document),
        "seeds": list(result.seeds),
        "policies": [p.name for p in result.config.policies],
        "config": document,
    }
    manifest_path = out / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
    written.append(manifest_path)
    logger.info("Wrote %d result files to %s", len(written), out)
    return written


def read_metrics(results_dir: str | Path) -> tuple[pd.DataFrame, dict[str, Any]]:
    """Read metrics.csv and the run manifest of a results directory.

    Raises:
        MissingDataFile: If either file is missing
        ParseError: If metrics.csv lacks a column or the manifest is not JSON
    """
    results_dir = Path(results_dir)
    metrics_path = results_dir / "metrics.csv"
    manifest_path = results_dir / MANIFEST_NAME
    for path in (metrics_path, manifest_path):
        if not path.is_file():
            raise MissingDataFile(f"missing result file: {path}")
    frame = pd.read_csv(metrics_path, dtype={"policy": str, "metric": str})
    missing = [c for c in METRIC_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"{metrics_path}: missing column(s) {', '.join(missing)}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{manifest_path}: {e}") from e
    return frame, manifest


def summarize(metrics: pd.DataFrame, policy_order: list[str] | None = None) -> pd.DataFrame:
    """Mean and standard error of every (policy, metric) across replications.

    Rows follow policy_order (then first appearance) and the metrics' first appearance.
    """
    rows = []
    policies = _ordered(metrics["policy"], policy_order)
    metric_names = _ordered(metrics["metric"], None)
    for policy in policies:
        for metric in metric_names:
            values = metrics.loc[
                (metrics["policy"] == policy) & (metrics["metric"] == metric), "value"
            ].to_numpy(dtype=float)
            if len(values) == 0:
                continue
            rows.append(
                {
                    "policy": policy,
                    "metric": metric,
                    "mean": float(np.mean(values)),
                    "std_error": _std_error(values),
                    "n_replications": len(values),
                }
            )
    return pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))


def significance(metrics: pd.DataFrame, focal: str) -> pd.DataFrame:
    """Paired t-test of every policy against the focal policy, per metric.

    Replications pair the samples; metrics with fewer than two paired replications get a
    NaN statistic.
    """
    rows = []
    for metric in _ordered(metrics["metric"], None):
        subset = metrics[metrics["metric"] == metric]
        table = subset.pivot_table(index="replication", columns="policy", values="value")
        if focal not in table.columns:
            continue
        for policy in _ordered(subset["policy"], None):
            if policy == focal:
                continue
            paired = table[[focal, policy]].dropna()
            difference = (paired[focal] - paired[policy]).to_numpy(dtype=float)
            if len(paired) >= 2 and np.ptp(difference) > 0:
                result = ttest_rel(paired[focal], paired[policy])
                statistic, p_value = float(result.statistic), float(result.pvalue)
            else:
                statistic, p_value = math.nan, math.nan
            rows.append(
                {
                    "metric": metric,
                    "policy": policy,
                    "focal": focal,
                    "mean_difference": float(np.mean(difference)) if len(difference) else math.nan,
                    "t_statistic": statistic,
                    "p_value": p_value,
                }
            )
    return pd.DataFrame(rows, columns=list(SIGNIFICANCE_COLUMNS))


def write_report(results_dir: str | Path) -> pd.DataFrame:
    """Write summary.csv, summary.json and significance.csv next to metrics.csv.

    Returns:
        The summary table
    """
    results_dir = Path(results_dir)
    metrics, manifest = read_metrics(results_dir)
    policy_order = list(manifest.get("policies", []))
    seeds = list(manifest.get("seeds", []))

    summary = summarize(metrics, policy_order)
    summary.to_csv(results_dir / "summary.csv", index=False)
    records = [
        {
            "metric": row.metric,
            "policy": row.policy,
            "value": row.mean,
            "std_error": row.std_error,
            "n_replications": int(row.n_replications),
            "seed_list": seeds,
        }
        for row in summary.itertuples(index=False)
    ]
    (results_dir / "summary.json").write_text(json.dumps(records, indent=2) + "\n", "utf-8")

    if policy_order:
        tests = significance(metrics, policy_order[0])
        tests.to_csv(results_dir / "significance.csv", index=False)
    logger.info("Wrote summary of %d policy-metric pairs to %s", len(summary), results_dir)
    return summary


def _ordered(values: pd.Series, preferred: list[str] | None) -> list[str]:
    seen = list(dict.fromkeys(values.astype(str)))
    if not preferred:
        return seen
    head = [v for v in preferred if v in seen]
    return head + [v for v in seen if v not in head]


def _std_error(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))
