"""Experiment runner: seeded replications of the replay and simulation regimes.

Replay regime: policies walk the logged evaluation weeks, see contexts built from the
logged histories and learn only from logged actions they recommended. It yields the
doubly-robust estimate, offline precision, diversity JSD and user improvement.

Simulation regime: policies run the whole horizon against a ground-truth (or fitted)
selection model. It yields the omniscient reward, learning curves and the in-period
weight-loss rate.
"""

import logging
from collections import defaultdict
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from bandit_rex.config_manager import EvaluationSettings, ExperimentConfig, PolicySpec
from bandit_rex.domain import DimMask, SelectionEvent, WeighIn
from bandit_rex.errors import NoTypedEvents, SolverFailure
from bandit_rex.evaluation import (
    DiversityDistribution,
    InteractionLog,
    InteractionRecord,
    OmniscientSimulator,
    Recommendations,
    UserWeek,
    diversity_distribution,
    doubly_robust_estimate,
    fit_reward_simulator,
    fit_weight_outcome_model,
    in_period_weightloss_rate,
    jsd,
    learning_curve,
    make_omniscient,
    offline_precision,
    select_dynamic_users,
    simulate_feedback,
    user_improvement,
    weighin_outcomes,
    weight_outcome_input,
    weight_outcome_round,
)
from bandit_rex.features import (
    ITEM_META_DIM,
    FeatureBuilder,
    UserHistory,
    build_user_context,
    load_embeddings,
)
from bandit_rex.policies import FeedbackRecord, Policy, make_policy
from bandit_rex.simdata import (
    SyntheticEnvironment,
    canonical_context,
    generate_environment,
    generate_logs,
    next_weight,
)
from bandit_rex.utils import named_stream, worker_count

logger = logging.getLogger(__name__)

REPLAY_METRICS = ("doubly_robust", "offline_precision", "diversity_jsd", "user_improvement")
SIMULATION_METRICS = ("omniscient", "weight_outcome", "learning_curve")
DYNAMIC_SUFFIX = "_dynamic"
# replication and seed of the curve rows averaged across replications
MEAN_REPLICATION = -1


@dataclass(frozen=True)
class MetricRow:
    replication: int
    seed: int
    policy: str
    metric: str
    value: float


@dataclass(frozen=True)
class CurveRow:
    """Mean realized reward of one simulated round and the cumulative mean through it."""

    replication: int
    seed: int
    policy: str
    round: int
    reward: float
    cumulative_mean: float


@dataclass(frozen=True)
class DiversityRow:
    """Dimension shares of a policy's recommendations (or of logged selections)."""

    replication: int
    seed: int
    policy: str
    source: str
    weight_loss: float
    diet: float
    exercise: float
    jsd: float


@dataclass(frozen=True)
class ReplicationResult:
    replication: int
    seed: int
    metrics: tuple[MetricRow, ...] = ()
    curves: tuple[CurveRow, ...] = ()
    diversity: tuple[DiversityRow, ...] = ()


@dataclass(frozen=True)
class RunResult:
    config: ExperimentConfig
    seeds: tuple[int, ...]
    replications: tuple[ReplicationResult, ...]

    @property
    def metrics(self) -> list[MetricRow]:
        return [row for r in self.replications for row in r.metrics]

    @property
    def curves(self) -> list[CurveRow]:
        return [row for r in self.replications for row in r.curves]

    @property
    def mean_curves(self) -> list[CurveRow]:
        """Per policy and round, the curve averaged over the replications that reached it."""
        grouped: defaultdict[tuple[str, int], list[CurveRow]] = defaultdict(list)
        for row in self.curves:
            grouped[row.policy, row.round].append(row)
        return [
            CurveRow(
                MEAN_REPLICATION,
                MEAN_REPLICATION,
                policy,
                week,
                float(np.mean([row.reward for row in rows])),
                float(np.mean([row.cumulative_mean for row in rows])),
            )
            for (policy, week), rows in grouped.items()
        ]

    @property
    def diversity(self) -> list[DiversityRow]:
        return [row for r in self.replications for row in r.diversity]


@dataclass
class ReplayOutcome:
    recommendations: dict[UserWeek, tuple[str, ...]] = field(default_factory=dict)


@dataclass
class SimulationOutcome:
    round_rewards: list[list[float]] = field(default_factory=list)
    true_probabilities: dict[str, list[float]] = field(default_factory=lambda: defaultdict(list))
    weight_outcomes: list[int] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class LoggedWorld:
    """An environment with its log and the histories and contexts derived from it."""

    env: SyntheticEnvironment
    log: InteractionLog
    train_weeks: int
    histories: Mapping[str, UserHistory]
    contexts: Mapping[UserWeek, np.ndarray]

    @property
    def train_log(self) -> InteractionLog:
        return self.log.between(1, self.train_weeks)

    @property
    def eval_log(self) -> InteractionLog:
        return self.log.between(self.train_weeks + 1, self.env.config.horizon_weeks)

    def canonical(self, user_id: str, week: int, challenge_id: str) -> np.ndarray:
        return canonical_context(self.contexts[(user_id, week)], self.env.catalog[challenge_id])


def replication_seeds(config: ExperimentConfig) -> tuple[int, ...]:
    base = config.environment.seed
    return tuple(base + r for r in range(config.settings.replications))


def run_experiment(
    config: ExperimentConfig, data: tuple[SyntheticEnvironment, InteractionLog] | None = None
) -> RunResult:
    """Run every replication, concurrently up to worker_count() threads.

    Args:
        config: Validated experiment configuration
        data: A previously generated environment and log; when given, every replication
            reuses them and only the policies' random streams change

    Returns:
        Results ordered by replication, then by configured policy order

    Raises:
        SolverFailure: If a posterior update fails; the error names the round
    """
    seeds = replication_seeds(config)
    workers = min(worker_count(), len(seeds))
    logger.info(
        "Running %d replication(s) of %d policies on %d thread(s)",
        len(seeds),
        len(config.policies),
        workers,
    )
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(run_replication, config, replication, seed, data)
            for replication, seed in enumerate(seeds)
        ]
        results = tuple(future.result() for future in futures)
    return RunResult(config, seeds, results)


def run_replication(
    config: ExperimentConfig,
    replication: int,
    seed: int,
    data: tuple[SyntheticEnvironment, InteractionLog] | None = None,
) -> ReplicationResult:
    """Generate (or reuse) one environment and evaluate every configured policy on it."""
    settings = config.settings
    if data is None:
        env = generate_environment(replace(config.environment, seed=seed))
        log = generate_logs(
            env,
            settings.logging_policy,
            env.config.horizon_weeks,
            slate_size=settings.logging_slate_size,
            rng=named_stream(seed, "logs"),
        )
    else:
        env, log = data
    world = build_world(env, log, settings.train_weeks)
    requested = set(settings.evaluators) | set(settings.analyses)
    dynamic = "dynamic_users" in requested
    dynamic_users = (
        select_dynamic_users(_selected_vectors(world), settings.dynamic_users_n) if dynamic else ()
    )

    metrics: list[MetricRow] = []
    curves: list[CurveRow] = []
    diversity: list[DiversityRow] = []

    def metric(policy: str, name: str, value: float) -> None:
        metrics.append(MetricRow(replication, seed, policy, name, float(value)))

    if requested & set(REPLAY_METRICS):
        replays = {
            spec.name: replay_policy(spec, world, named_stream(seed, "replay", spec.name))
            for spec in config.policies
        }
        eval_log = world.eval_log
        rho = fit_reward_simulator(world.train_log) if "doubly_robust" in requested else None
        preferences = world.log.preference_sets()
        logged = _logged_distribution(world)
        if logged is not None and "diversity_jsd" in requested:
            diversity.append(_diversity_row(replication, seed, "logged", "selected", logged, 0.0))

        focal = config.focal.name
        for spec in config.policies:
            recs = replays[spec.name].recommendations
            if rho is not None:
                value = doubly_robust_estimate(
                    eval_log, recs, rho, world.canonical, settings.propensity_floor
                )
                metric(spec.name, "doubly_robust", value)
                dynamic_log = eval_log.for_users(dynamic_users)
                if dynamic and dynamic_log.records:
                    value = doubly_robust_estimate(
                        dynamic_log,
                        _restrict(recs, dynamic_users),
                        rho,
                        world.canonical,
                        settings.propensity_floor,
                    )
                    metric(spec.name, "doubly_robust" + DYNAMIC_SUFFIX, value)
            if "offline_precision" in requested:
                metric(spec.name, "offline_precision", offline_precision(recs, preferences))
                if dynamic:
                    value = offline_precision(_restrict(recs, dynamic_users), preferences)
                    metric(spec.name, "offline_precision" + DYNAMIC_SUFFIX, value)
            if "diversity_jsd" in requested and logged is not None:
                covered = [covers_all_dimensions(s, env) for s in recs.values()]
                metric(spec.name, "coverage_rate", _mean([float(c) for c in covered]))
                events = [c for s in recs.values() for c in s]
                try:
                    recommended = diversity_distribution(events, env.catalog)
                except NoTypedEvents:
                    logger.warning("%s recommended no typed challenge", spec.name)
                else:
                    divergence = jsd(recommended, logged)
                    metric(spec.name, "diversity_jsd", divergence)
                    row = _diversity_row(
                        replication, seed, spec.name, "recommended", recommended, divergence
                    )
                    diversity.append(row)
            if "user_improvement" in requested and spec.name != focal:
                value = user_improvement(replays[focal].recommendations, recs, preferences)
                metric(spec.name, "user_improvement", value)

    if requested & set(SIMULATION_METRICS):
        truth, omega = simulation_models(world, settings, seed)
        for spec in config.policies:
            outcome = simulate_policy(spec, world, truth, omega, seed)
            if "omniscient" in requested:
                everything = [p for probs in outcome.true_probabilities.values() for p in probs]
                metric(spec.name, "omniscient", _mean(everything))
                if dynamic:
                    restricted = [
                        p for u in dynamic_users for p in outcome.true_probabilities.get(u, [])
                    ]
                    metric(spec.name, "omniscient" + DYNAMIC_SUFFIX, _mean(restricted))
            if "weight_outcome" in requested:
                rate = in_period_weightloss_rate(outcome.weight_outcomes)
                metric(spec.name, "weight_outcome", rate)
            if "learning_curve" in requested:
                curve = learning_curve(outcome.round_rewards)
                for week, (rewards, cumulative) in enumerate(
                    zip(outcome.round_rewards, curve, strict=True), start=1
                ):
                    curves.append(
                        CurveRow(
                            replication,
                            seed,
                            spec.name,
                            week,
                            _mean(rewards),
                            float(cumulative),
                        )
                    )
                metric(spec.name, "final_reward", float(curve[-1]) if len(curve) else 0.0)

    order = {spec.name: i for i, spec in enumerate(config.policies)}
    metrics.sort(key=lambda row: order.get(row.policy, -1))
    logger.info("Replication %d (seed %d) finished", replication, seed)
    return ReplicationResult(replication, seed, tuple(metrics), tuple(curves), tuple(diversity))


def build_world(env: SyntheticEnvironment, log: InteractionLog, train_weeks: int) -> LoggedWorld:
    """Index the log by user and compute canonical user contexts for every logged week."""
    histories = {u.user_id: UserHistory() for u in env.users}
    for weighin in log.weighins:
        histories[weighin.user_id].weighins.append(weighin)
    for selection in log.selections():
        histories[selection.user_id].selections.append(selection)
    profiles = {u.user_id: u for u in env.users}
    contexts: dict[UserWeek, np.ndarray] = {}
    for record in log.records:
        key = (record.user_id, record.week)
        if key not in contexts:
            history = histories[record.user_id]
            contexts[key] = build_user_context(
                profiles[record.user_id],
                history.weighins,
                history.selections,
                env.catalog,
                record.week,
            )
    return LoggedWorld(env, log, train_weeks, histories, contexts)


def build_features(spec: PolicySpec, env: SyntheticEnvironment) -> FeatureBuilder:
    """The feature view a policy spec asks for, loading embedding tables as needed.

    Raises:
        MissingDataFile: If an embeddings file does not exist
    """
    user_table = load_embeddings(spec.user_embeddings) if spec.user_embeddings else None
    item_table = load_embeddings(spec.item_embeddings) if spec.item_embeddings else None
    return FeatureBuilder(
        env.catalog, spec.user_features, spec.item_features, user_table, item_table
    )


def build_policy(spec: PolicySpec, env: SyntheticEnvironment) -> Policy:
    return make_policy(
        spec.name,
        spec.kind,
        build_features(spec, env),
        env.config.K,
        spec.diversity,
        spec.reward_target,
        **spec.params,
    )


def replay_policy(spec: PolicySpec, world: LoggedWorld, rng: np.random.Generator) -> ReplayOutcome:
    """Walk the evaluation weeks of the log with a fresh policy.

    Each week the policy recommends to every user with a logged record that week, then
    learns from the logged records whose action it recommended.
    """
    env = world.env
    policy = build_policy(spec, env)
    policy.pretrain(world.train_log, rng)
    by_key: dict[UserWeek, list[InteractionRecord]] = defaultdict(list)
    for record in world.eval_log.records:
        by_key[(record.user_id, record.week)].append(record)

    outcome = ReplayOutcome()
    profiles = {u.user_id: u for u in env.users}
    for week in sorted({week for _, week in by_key}):
        feedback: list[FeedbackRecord] = []
        available = env.available(week)
        for user_id in sorted(u for u, w in by_key if w == week):
            x = policy.features.user_context(profiles[user_id], world.histories[user_id], week)
            slate = policy.slate(user_id, week, x, available)
            decision = policy.recommend(slate, rng)
            outcome.recommendations[(user_id, week)] = decision.recommended
            rows = {c: j for j, c in enumerate(slate.challenge_ids)}
            for record in by_key[(user_id, week)]:
                if record.action in decision.recommended:
                    j = rows[record.action]
                    feedback.append(
                        FeedbackRecord(
                            user_id,
                            week,
                            record.action,
                            slate.contexts[j],
                            slate.item_features[j],
                            record.reward,
                        )
                    )
        _observe(policy, feedback, week)
    return outcome


def simulation_models(
    world: LoggedWorld, settings: EvaluationSettings, seed: int
) -> tuple[OmniscientSimulator | None, np.ndarray]:
    """Selection and weight-outcome models driving the simulation regime.

    Returns (None, omega) for the environment's own ground truth, where per-user type
    affinities apply; otherwise a perturbed fit of the training log and a fitted omega.
    """
    if settings.simulator_source == "ground_truth":
        return None, world.env.omega
    rng = named_stream(seed, "simulator")
    simulator = make_omniscient(world.train_log, settings.sigma_scale, rng)
    inputs, outcomes = _weight_outcome_data(world)
    omega = fit_weight_outcome_model(inputs, outcomes)
    return simulator, omega


def simulate_policy(
    spec: PolicySpec,
    world: LoggedWorld,
    truth: OmniscientSimulator | None,
    omega: np.ndarray,
    seed: int,
) -> SimulationOutcome:
    """Run a fresh policy over every week of the horizon against the simulated users.

    The users' own randomness comes from one stream shared by every policy, so policies
    face the same draws wherever their recommendations agree.
    """
    env = world.env
    policy = build_policy(spec, env)
    policy_rng = named_stream(seed, "simulate", spec.name)
    world_rng = named_stream(seed, "users")
    policy.pretrain(world.train_log, policy_rng)
    sim = truth if truth is not None else env.ground_truth

    histories = {u.user_id: UserHistory() for u in env.users}
    weights = {u.user_id: round(u.initial_weight, 1) for u in env.users}
    for user in env.users:
        histories[user.user_id].weighins.append(
            WeighIn(user.user_id, 0, weights[user.user_id])
        )

    outcome = SimulationOutcome()
    for week in range(1, env.config.horizon_weeks + 1):
        available = env.available(week)
        round_rewards: list[float] = []
        feedback: list[FeedbackRecord] = []
        for user in env.users:
            history = histories[user.user_id]
            x = build_user_context(user, history.weighins, history.selections, env.catalog, week)
            view = policy.features.user_context(user, history, week)
            slate = policy.slate(user.user_id, week, view, available)
            decision = policy.recommend(slate, policy_rng)
            rows = {c: j for j, c in enumerate(slate.challenge_ids)}

            selected: list[tuple[int, str]] = []
            chosen_items = []
            for challenge_id in decision.recommended:
                challenge = env.catalog[challenge_id]
                v = canonical_context(x, challenge)
                offset = env.affinity_offset(user.user_id, challenge_id) if truth is None else 0.0
                outcome.true_probabilities[user.user_id].append(sim.probability(v, offset))
                reward = simulate_feedback(sim, v, world_rng, offset)
                round_rewards.append(float(reward))
                selected.append((reward, challenge_id))
                if reward:
                    history.selections.append(SelectionEvent(user.user_id, week, challenge_id))
                    chosen_items.append(v[1 + len(x) :])

            non_gain = weight_outcome_round(x, chosen_items, omega, world_rng)
            outcome.weight_outcomes.append(non_gain)
            weights[user.user_id] = next_weight(weights[user.user_id], bool(non_gain), world_rng)
            if world_rng.random() < env.config.weighin_prob:
                history.weighins.append(WeighIn(user.user_id, week, weights[user.user_id]))

            for reward, challenge_id in selected:
                if spec.reward_target == "weight_outcome":
                    reward = reward * non_gain
                j = rows[challenge_id]
                feedback.append(
                    FeedbackRecord(
                        user.user_id,
                        week,
                        challenge_id,
                        slate.contexts[j],
                        slate.item_features[j],
                        reward,
                    )
                )
        outcome.round_rewards.append(round_rewards)
        _observe(policy, feedback, week)
        logger.debug("%s week %d: mean reward %.4f", spec.name, week, _mean(round_rewards))
    return outcome


def covers_all_dimensions(recommended: Sequence[str], env: SyntheticEnvironment) -> bool:
    coverage = DimMask.NONE
    for challenge_id in recommended:
        coverage |= env.catalog.mask(challenge_id)
    return coverage == DimMask.ALL


def _observe(policy: Policy, feedback: list[FeedbackRecord], week: int) -> None:
    try:
        policy.observe(feedback)
    except SolverFailure as e:
        raise SolverFailure(
            f"policy {policy.name}: {e.args[0]}", e.gradient_norm, round_index=week
        ) from e


def _weight_outcome_data(world: LoggedWorld) -> tuple[np.ndarray, np.ndarray]:
    """Inputs and non-gain outcomes of the training weeks' weigh-in periods."""
    chosen: dict[UserWeek, list[np.ndarray]] = defaultdict(list)
    for record in world.train_log.records:
        if record.reward == 1:
            chosen[(record.user_id, record.week)].append(record.context[-ITEM_META_DIM:])
    weighins = [w for w in world.log.weighins if w.week <= world.train_weeks]
    inputs, outcomes = [], []
    for key, outcome in sorted(weighin_outcomes(weighins).items()):
        if key not in world.contexts:
            continue
        inputs.append(weight_outcome_input(world.contexts[key], chosen[key], ITEM_META_DIM))
        outcomes.append(outcome)
    if not inputs:
        return np.empty((0, 0)), np.empty(0)
    return np.vstack(inputs), np.array(outcomes, dtype=float)


def _selected_vectors(world: LoggedWorld) -> dict[str, list[np.ndarray]]:
    vectors: dict[str, list[np.ndarray]] = defaultdict(list)
    for record in world.log.records:
        if record.reward == 1:
            vectors[record.user_id].append(record.context[-ITEM_META_DIM:])
    return vectors


def _logged_distribution(world: LoggedWorld) -> DiversityDistribution | None:
    events = [s.challenge_id for s in world.eval_log.selections()]
    try:
        return diversity_distribution(events, world.env.catalog)
    except NoTypedEvents:
        logger.warning("Logged selections carry no dimension; skipping diversity JSD")
        return None


def _diversity_row(
    replication: int,
    seed: int,
    policy: str,
    source: str,
    distribution: DiversityDistribution,
    divergence: float,
) -> DiversityRow:
    weight_loss, diet, exercise = distribution.probabilities
    return DiversityRow(replication, seed, policy, source, weight_loss, diet, exercise, divergence)


def _restrict(recs: Recommendations, user_ids: Sequence[str]) -> dict[UserWeek, tuple[str, ...]]:
    keep = set(user_ids)
    return {key: tuple(s) for key, s in recs.items() if key[0] in keep}


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else 0.0

