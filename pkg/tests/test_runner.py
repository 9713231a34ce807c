"""Tests for runner module."""

from dataclasses import replace
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from bandit_rex.config_manager import ConfigManager, parse_experiment
from bandit_rex.errors import SolverFailure
from bandit_rex.evaluation import (
    doubly_robust_estimate,
    doubly_robust_terms,
    fit_reward_simulator,
)
from bandit_rex.runner import (
    MEAN_REPLICATION,
    build_world,
    covers_all_dimensions,
    replication_seeds,
    run_experiment,
    run_replication,
)
from bandit_rex.simdata import generate_environment, generate_logs
from bandit_rex.utils import named_stream

ABLATION_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ablation.json"

SMALL_ENVIRONMENT = {
    "n_users": 12,
    "n_challenges": 24,
    "horizon_weeks": 6,
    "weekly_pool": 16,
    "K": 4,
    "seed": 3,
}


def experiment(policies=None, **evaluation):
    settings = {"replications": 2, "train_weeks": 3, "dynamic_users_n": 5, **evaluation}
    return parse_experiment(
        {
            "environment": SMALL_ENVIRONMENT,
            "policies": policies
            or [
                {"name": "ts", "kind": "ts_diverse"},
                {"name": "ucb", "kind": "ucb", "params": {"alpha": 0.5}},
                {"name": "exploit", "kind": "pure_exploit"},
                {"name": "explore", "kind": "pure_explore"},
                {"name": "cb", "kind": "cb"},
                {"name": "pmf", "kind": "pmf", "params": {"f": 2, "epochs": 5}},
            ],
            "evaluation": settings,
        }
    )


def values(result, policy: str) -> dict[tuple[int, str], float]:
    return {(r.replication, r.metric): r.value for r in result.metrics if r.policy == policy}


@pytest.fixture(scope="module")
def result():
    return run_experiment(experiment())


class TestRunExperiment:
    """Test suite for run_experiment function."""

    def test_seeds_follow_base_seed(self, result):
        """Test that replication r uses seed base + r."""
        assert result.seeds == (3, 4)
        assert replication_seeds(experiment(replications=3)) == (3, 4, 5)
        assert [r.seed for r in result.replications] == [3, 4]

    def test_every_policy_gets_its_metrics(self, result):
        """Test that each policy reports the configured evaluators and analyses."""
        expected = {
            "doubly_robust",
            "doubly_robust_dynamic",
            "offline_precision",
            "offline_precision_dynamic",
            "coverage_rate",
            "diversity_jsd",
            "omniscient",
            "omniscient_dynamic",
            "weight_outcome",
            "final_reward",
        }
        for policy in ("ts", "ucb", "exploit", "explore", "cb", "pmf"):
            names = {metric for _, metric in values(result, policy)}
            assert expected <= names
        assert "user_improvement" not in {m for _, m in values(result, "ts")}
        assert "user_improvement" in {m for _, m in values(result, "ucb")}

    def test_metrics_in_range(self, result):
        """Test that probabilities, rates and divergences lie in [0, 1]."""
        bounded = {
            "offline_precision",
            "coverage_rate",
            "diversity_jsd",
            "omniscient",
            "weight_outcome",
            "final_reward",
            "user_improvement",
        }
        for row in result.metrics:
            if row.metric in bounded:
                assert 0.0 <= row.value <= 1.0, row

    def test_diverse_policy_always_covers(self, result):
        """Test that the constrained sampler covers every dimension every time."""
        for (_, metric), value in values(result, "ts").items():
            if metric == "coverage_rate":
                assert value == 1.0

    def test_metrics_follow_policy_order(self, result):
        """Test that rows are grouped in configured policy order within a replication."""
        order = ["ts", "ucb", "exploit", "explore", "cb", "pmf"]
        for replication in result.replications:
            policies = [row.policy for row in replication.metrics]
            positions = [order.index(p) for p in policies]
            assert positions == sorted(positions)

    def test_learning_curves(self, result):
        """Test one curve row per week whose last cumulative mean is the final reward."""
        rows = [c for c in result.curves if c.policy == "ts" and c.replication == 0]
        assert [c.round for c in rows] == list(range(1, 7))
        assert rows[-1].cumulative_mean == pytest.approx(values(result, "ts")[(0, "final_reward")])

    def test_mean_curves(self, result):
        """Test that the averaged curve is the per-round mean over replications."""
        means = [c for c in result.mean_curves if c.policy == "ts"]
        assert [c.round for c in means] == list(range(1, 7))
        assert {(c.replication, c.seed) for c in means} == {(MEAN_REPLICATION, MEAN_REPLICATION)}
        per_replication = [
            [c.reward for c in result.curves if c.policy == "ts" and c.replication == r]
            for r in (0, 1)
        ]
        expected = np.mean(per_replication, axis=0)
        assert [c.reward for c in means] == pytest.approx(expected.tolist())

    def test_diversity_rows(self, result):
        """Test that each replication has a logged reference row plus one per policy."""
        rows = [d for d in result.diversity if d.replication == 0]
        assert rows[0].policy == "logged"
        assert rows[0].jsd == 0.0
        for row in rows:
            assert row.weight_loss + row.diet + row.exercise == pytest.approx(1.0)

    def test_deterministic(self, result):
        """Test that rerunning the same configuration reproduces every metric."""
        assert run_experiment(experiment()).metrics == result.metrics

    def test_policy_streams_are_isolated(self, result):
        """Test that removing other policies leaves a policy's own metrics unchanged."""
        alone = run_experiment(experiment(policies=[{"name": "ts", "kind": "ts_diverse"}]))
        assert values(alone, "ts") == values(result, "ts")

    def test_fitted_simulator(self):
        """Test that the fitted simulation source runs end to end."""
        fitted = run_experiment(
            experiment(
                policies=[{"name": "ts", "kind": "ts_diverse"}],
                replications=1,
                simulator_source="fitted",
                evaluators=["omniscient"],
                analyses=["weight_outcome"],
            )
        )
        names = {row.metric for row in fitted.metrics}
        assert names == {"omniscient", "weight_outcome"}

    def test_reused_data(self, small_env):
        """Test that shared data gives a deterministic policy the same value every time."""
        log = generate_logs(small_env, "uniform", 6, slate_size=1, rng=np.random.default_rng(0))
        config = experiment(
            policies=[{"name": "exploit", "kind": "pure_exploit"}],
            evaluators=["offline_precision"],
            analyses=[],
        )
        reused = run_experiment(config, data=(small_env, log))
        first, second = (values(reused, "exploit")[(r, "offline_precision")] for r in (0, 1))
        assert first == second


class TestRunReplication:
    """Test suite for run_replication function."""

    def test_solver_failure_names_round(self):
        """Test that a failed posterior update reports the week it happened in."""
        config = experiment(policies=[{"name": "ts", "kind": "ts_diverse"}])
        failure = SolverFailure("no convergence", 1.0)
        with (
            patch("bandit_rex.policies.update_posterior", side_effect=failure),
            pytest.raises(SolverFailure) as excinfo,
        ):
            run_replication(config, 0, 3)
        assert excinfo.value.round_index == 4
        assert "policy ts" in str(excinfo.value)


class TestHelpers:
    """Test suite for runner helpers."""

    def test_covers_all_dimensions(self, small_env):
        """Test coverage of a recommendation set against the catalog."""
        ids = list(small_env.catalog)
        assert covers_all_dimensions(ids, small_env)
        assert not covers_all_dimensions([], small_env)

    def test_world_splits_log(self, small_env):
        """Test that the world separates training and evaluation weeks."""
        log = generate_logs(small_env, "uniform", 6, slate_size=1, rng=np.random.default_rng(0))
        world = build_world(small_env, log, 3)
        assert world.train_log.weeks() == (1, 2, 3)
        assert world.eval_log.weeks() == (4, 5, 6)
        record = log.records[0]
        np.testing.assert_allclose(
            world.canonical(record.user_id, record.week, record.action), record.context
        )


class TestReplicationDirections:
    """Test suite for seeded multi-replication outcomes on the shipped configurations."""

    def test_diversity_constraint_wins_the_ablation(self):
        """Test that the constrained sampler beats its unconstrained twin in 7 of 10 runs."""
        config = (
            ConfigManager(ABLATION_CONFIG)
            .get_config()
            .with_overrides(policy_names=["full", "no_diversity"])
        )
        config = replace(
            config, settings=replace(config.settings, evaluators=("omniscient",), analyses=())
        )
        result = run_experiment(config)
        full, ablated = values(result, "full"), values(result, "no_diversity")
        replications = range(config.settings.replications)
        assert len(replications) == 10
        wins = sum(full[r, "omniscient"] >= ablated[r, "omniscient"] for r in replications)
        assert wins >= 7

    def test_doubly_robust_brackets_the_truth(self):
        """Test that DR lies within 2 standard errors of the exact value in 18 of 20 seeds."""
        environment = ConfigManager().get_config().environment
        hits = 0
        for seed in range(20):
            env = generate_environment(replace(environment, seed=seed))
            stream = named_stream(seed, "logs")
            log = generate_logs(
                env, "uniform", env.config.horizon_weeks, slate_size=1, rng=stream
            )
            world = build_world(env, log, 4)
            rho = fit_reward_simulator(world.train_log)
            eval_log = world.eval_log
            target = named_stream(seed, "target")
            recs = {
                (r.user_id, r.week): tuple(
                    str(c)
                    for c in target.choice(env.available(r.week), size=env.config.K, replace=False)
                )
                for r in eval_log.records
            }
            terms = doubly_robust_terms(eval_log, recs, rho, world.canonical)
            estimate = doubly_robust_estimate(eval_log, recs, rho, world.canonical)
            truth = np.mean(
                [
                    np.mean(
                        [
                            env.ground_truth.probability(world.canonical(r.user_id, r.week, c))
                            for c in recs[r.user_id, r.week]
                        ]
                    )
                    for r in eval_log.records
                ]
            )
            std_error = np.std(terms, ddof=1) / np.sqrt(len(terms))
            hits += abs(estimate - truth) <= 2 * std_error
        assert hits >= 18

    def test_thompson_sampling_learns_and_leads(self):
        """Test the learning direction of the default setup in 8 of 10 replications.

        Each counted replication ends above its first-round value; separately, the
        sampler's final cumulative reward is at least both pure strategies' in 8 of 10.
        """
        config = (
            ConfigManager()
            .get_config()
            .with_overrides(policy_names=["ts_diverse", "pure_explore", "pure_exploit"])
        )
        config = replace(
            config, settings=replace(config.settings, evaluators=(), analyses=("learning_curve",))
        )
        result = run_experiment(config)
        learned = leads = 0
        for r in range(config.settings.replications):
            final = {
                p: values(result, p)[r, "final_reward"]
                for p in ("ts_diverse", "pure_explore", "pure_exploit")
            }
            first = next(
                c.cumulative_mean
                for c in result.curves
                if c.policy == "ts_diverse" and c.replication == r and c.round == 1
            )
            learned += final["ts_diverse"] > first
            leads += final["ts_diverse"] >= max(final["pure_explore"], final["pure_exploit"])
        assert learned >= 8
        assert leads >= 8
