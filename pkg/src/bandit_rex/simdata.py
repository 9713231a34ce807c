"""Synthetic weight-management platform: users, challenges, ground-truth preferences and logs."""

import json
import logging
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.special import expit, softmax

from bandit_rex.domain import (
    DIMENSION_NAMES,
    DIMENSIONS,
    META_FEATURE_NAMES,
    Catalog,
    ChallengeMeta,
    ChallengeRecord,
    DimMask,
    Intensity,
    SelectionEvent,
    UserProfile,
    WeighIn,
    encode_challenge_meta,
)
from bandit_rex.errors import InvalidConfig
from bandit_rex.evaluation import (
    InteractionLog,
    InteractionRecord,
    OmniscientSimulator,
    simulate_feedback,
    weight_outcome_round,
)
from bandit_rex.features import (
    ITEM_META_DIM,
    SELECTION_RATE_START,
    USER_CONTEXT_DIM,
    UserHistory,
    build_user_context,
    concat_context,
    context_matrix,
)
from bandit_rex.utils import named_stream

logger = logging.getLogger(__name__)

CONTEXT_DIM = 1 + USER_CONTEXT_DIM + ITEM_META_DIM
# positions of the diet, activity and weight_loss flags inside v = [1, x, z]
DIMENSION_FEATURE_INDEX = {
    DimMask.DIET: 1 + USER_CONTEXT_DIM + META_FEATURE_NAMES.index("diet"),
    DimMask.EXERCISE: 1 + USER_CONTEXT_DIM + META_FEATURE_NAMES.index("activity"),
    DimMask.WEIGHT_LOSS: 1 + USER_CONTEXT_DIM + META_FEATURE_NAMES.index("weight_loss"),
}
# positions of the trailing selection rates (weight_loss, diet, exercise) inside v
SELECTION_RATE_INDEX = tuple(1 + SELECTION_RATE_START + i for i in range(len(DIMENSIONS)))
MAX_GENERATION_ATTEMPTS = 100
OUTCOME_TYPE_BOOST = 0.5
MIN_WEIGHT = 40.0
_LEVELS = (Intensity.L, Intensity.M, Intensity.H)
PER_DIMENSION_FIELDS = ("type_mix", "type_preference", "engagement_boost")

USER_COLUMNS = (
    "user_id",
    "gender",
    "age",
    "initial_weight",
    "membership_weeks",
    "friends",
    "posts",
)
CHALLENGE_COLUMNS = (
    "challenge_id",
    "title",
    "description",
    *META_FEATURE_NAMES[:-1],
    "duration_weeks",
    "start_week",
    "end_week",
)
WEIGHIN_COLUMNS = ("user_id", "week", "weight")
SELECTION_COLUMNS = ("user_id", "week", "challenge_id", "propensity")
INTERACTION_COLUMNS = ("user_id", "week", "challenge_id", "reward", "propensity")


@dataclass(frozen=True)
class EnvConfig:
    """Shape and randomness of a synthetic environment.

    type_mix gives the independent probability of each dimension flag in
    (weight_loss, diet, exercise) order. type_preference shifts the selection logit of
    challenges carrying each dimension for everyone, and engagement_boost raises every
    selection logit by the given amount per unit of trailing selection rate in that
    dimension, so users who recently took up a dimension engage more across the board.
    """

    n_users: int = 200
    n_challenges: int = 60
    horizon_weeks: int = 16
    weekly_pool: int = 50
    K: int = 10
    seed: int = 0
    ground_truth_sigma: float = 0.5
    type_mix: tuple[float, float, float] = (0.3, 0.4, 0.4)
    base_logit: float = -1.0
    type_boost: float = 1.0
    type_affinity_scale: float = 0.0
    type_preference: tuple[float, float, float] = (0.0, 0.0, 0.0)
    engagement_boost: tuple[float, float, float] = (0.0, 0.0, 0.0)
    weighin_prob: float = 0.7

    def __post_init__(self):
        for name in PER_DIMENSION_FIELDS:
            object.__setattr__(self, name, tuple(float(p) for p in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        """Raise InvalidConfig naming the first field that breaks an invariant."""
        for name in ("n_users", "n_challenges", "horizon_weeks", "weekly_pool", "K"):
            if getattr(self, name) < 1:
                raise InvalidConfig(
                    f"environment.{name} must be at least 1, got {getattr(self, name)}"
                )
        if self.weekly_pool > self.n_challenges:
            raise InvalidConfig(
                f"environment.weekly_pool ({self.weekly_pool}) exceeds "
                f"n_challenges ({self.n_challenges})"
            )
        for name in PER_DIMENSION_FIELDS:
            if len(getattr(self, name)) != len(DIMENSIONS):
                raise InvalidConfig(f"environment.{name} needs {len(DIMENSIONS)} values")
            if not all(np.isfinite(getattr(self, name))):
                raise InvalidConfig(f"environment.{name} values must be finite")
        if any(not 0.0 <= p <= 1.0 for p in self.type_mix) or not any(self.type_mix):
            raise InvalidConfig("environment.type_mix entries must lie in [0, 1], not all zero")
        if not 0.0 <= self.weighin_prob <= 1.0:
            raise InvalidConfig("environment.weighin_prob must lie in [0, 1]")
        if self.ground_truth_sigma < 0:
            raise InvalidConfig("environment.ground_truth_sigma must be non-negative")
        if self.type_affinity_scale < 0:
            raise InvalidConfig("environment.type_affinity_scale must be non-negative")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig(f"environment.{unknown[0]} is not a recognised setting")
        try:
            return cls(**data)
        except TypeError as e:
            raise InvalidConfig(f"environment: {e}") from e

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for name in PER_DIMENSION_FIELDS:
            data[name] = list(getattr(self, name))
        return data


@dataclass(frozen=True, eq=False)
class SyntheticEnvironment:
    """Generated users and catalog with the ground-truth selection and weight models."""

    config: EnvConfig
    users: tuple[UserProfile, ...]
    catalog: Catalog
    zeta: np.ndarray
    omega: np.ndarray
    preferred: Mapping[str, DimMask] = field(default_factory=dict)

    @property
    def ground_truth(self) -> OmniscientSimulator:
        return OmniscientSimulator(self.zeta)

    @property
    def challenges(self) -> tuple[ChallengeRecord, ...]:
        return self.catalog.records

    def available(self, week: int) -> tuple[str, ...]:
        return self.catalog.available(week)

    def affinity_offset(self, user_id: str, challenge_id: str) -> float:
        """Extra selection logit for challenges in the user's preferred dimension."""
        preferred = self.preferred.get(user_id, DimMask.NONE)
        if self.config.type_affinity_scale and self.catalog.mask(challenge_id) & preferred:
            return self.config.type_affinity_scale
        return 0.0

    def true_probabilities(
        self, user_id: str, contexts: np.ndarray, challenge_ids: tuple[str, ...]
    ) -> np.ndarray:
        offsets = np.array([self.affinity_offset(user_id, c) for c in challenge_ids])
        return expit(contexts @ self.zeta + offsets)

    def item_matrix(self, challenge_ids: tuple[str, ...]) -> np.ndarray:
        return np.vstack([encode_challenge_meta(self.catalog[c].meta) for c in challenge_ids])


def canonical_context(x: np.ndarray, challenge: ChallengeRecord) -> np.ndarray:
    """The environment's own v = [1, x, meta(z)] for one user context and challenge."""
    return concat_context(x, encode_challenge_meta(challenge.meta))


def type_structure(cfg: EnvConfig) -> np.ndarray:
    """Deterministic part of zeta from the per-dimension preference and engagement settings."""
    structure = np.zeros(CONTEXT_DIM)
    for flag, preference, boost, rate_index in zip(
        DIMENSIONS, cfg.type_preference, cfg.engagement_boost, SELECTION_RATE_INDEX, strict=True
    ):
        structure[DIMENSION_FEATURE_INDEX[flag]] += preference
        structure[rate_index] += boost
    return structure


class LoggingPolicy(StrEnum):
    """How the platform chose what to offer in the logged data."""

    UNIFORM = "uniform"
    ORACLE = "oracle"
    SKEWED = "skewed"


def generate_environment(cfg: EnvConfig) -> SyntheticEnvironment:
    """Draw a synthetic environment from cfg.seed.

    Generation is repeated with a fresh stream until every week's pool is non-empty and
    covers all three dimensions.

    Raises:
        InvalidConfig: If the configuration is invalid or no attempt yields full coverage
    """
    cfg.validate()
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        rng = named_stream(cfg.seed, "environment", attempt)
        users = _draw_users(cfg, rng)
        catalog = _draw_catalog(cfg, rng)
        if _covers_every_week(catalog, cfg.horizon_weeks):
            zeta = _draw_weights(cfg, rng, cfg.type_boost, cfg.base_logit) + type_structure(cfg)
            omega = _draw_weights(cfg, rng, OUTCOME_TYPE_BOOST, 0.0)
            preferred = {
                u.user_id: DIMENSIONS[int(rng.integers(len(DIMENSIONS)))] for u in users
            }
            if attempt:
                logger.info("Environment seed %d needed %d regenerations", cfg.seed, attempt)
            return SyntheticEnvironment(cfg, users, catalog, zeta, omega, preferred)
    raise InvalidConfig(
        f"no environment with full weekly coverage after {MAX_GENERATION_ATTEMPTS} attempts; "
        "raise environment.weekly_pool or environment.type_mix"
    )


def next_weight(weight: float, non_gain: bool, rng: np.random.Generator) -> float:
    """Weight after one week: down by U(0, 1) kg on non-gain, up by U(0.1, 1) kg on gain."""
    if non_gain:
        change = -round(float(rng.uniform(0.0, 1.0)), 1)
    else:
        change = round(float(rng.uniform(0.1, 1.0)), 1)
    return round(max(weight + change, MIN_WEIGHT), 1)


def generate_logs(
    env: SyntheticEnvironment,
    logging_policy: LoggingPolicy | str,
    rounds: int,
    *,
    slate_size: int | None = None,
    rng: np.random.Generator,
) -> InteractionLog:
    """Simulate the platform's historical data for weeks 1..rounds.

    Every offered item becomes one record with its exact offer probability: K/n for uniform
    offers of K out of n, 1 for the deterministic oracle, and the softmax probability of
    the single offered item for the skewed logger. Weigh-ins start with the initial weight
    in week 0.

    Args:
        env: The environment
        logging_policy: uniform, oracle or skewed
        rounds: Number of logged weeks (at most the horizon)
        slate_size: Items offered per user and week (default: env K; skewed requires 1)
        rng: Generator for offers, rewards and weigh-ins

    Returns:
        The interaction log with its weigh-ins
    """
    logging_policy = LoggingPolicy(logging_policy)
    if not 1 <= rounds <= env.config.horizon_weeks:
        raise ValueError(f"rounds must lie in [1, {env.config.horizon_weeks}], got {rounds}")
    slate_size = env.config.K if slate_size is None else slate_size
    if slate_size < 1:
        raise ValueError(f"slate_size must be positive, got {slate_size}")
    if logging_policy is LoggingPolicy.SKEWED and slate_size != 1:
        raise ValueError("the skewed logging policy offers exactly one item per round")

    sim = env.ground_truth
    histories = {u.user_id: UserHistory() for u in env.users}
    weights = {u.user_id: round(u.initial_weight, 1) for u in env.users}
    weighins: list[WeighIn] = [WeighIn(u.user_id, 0, weights[u.user_id]) for u in env.users]
    for weighin in weighins:
        histories[weighin.user_id].weighins.append(weighin)
    records: list[InteractionRecord] = []

    for week in range(1, rounds + 1):
        ids = env.available(week)
        items = env.item_matrix(ids)
        for user in env.users:
            history = histories[user.user_id]
            x = build_user_context(user, history.weighins, history.selections, env.catalog, week)
            contexts = context_matrix(x, items)
            offered, propensities = _offer(
                env, logging_policy, user.user_id, ids, contexts, slate_size, rng
            )
            chosen_items = []
            for j, propensity in zip(offered, propensities, strict=True):
                offset = env.affinity_offset(user.user_id, ids[j])
                reward = simulate_feedback(sim, contexts[j], rng, offset)
                records.append(
                    InteractionRecord(user.user_id, week, ids[j], contexts[j], reward, propensity)
                )
                if reward:
                    selection = SelectionEvent(user.user_id, week, ids[j], propensity)
                    history.selections.append(selection)
                    chosen_items.append(items[j])
            non_gain = weight_outcome_round(x, chosen_items, env.omega, rng)
            weights[user.user_id] = next_weight(weights[user.user_id], bool(non_gain), rng)
            if rng.random() < env.config.weighin_prob:
                weighin = WeighIn(user.user_id, week, weights[user.user_id])
                weighins.append(weighin)
                history.weighins.append(weighin)

    logger.info(
        "Logged %d interactions over %d weeks (%s offers, slate %d)",
        len(records),
        rounds,
        logging_policy.value,
        slate_size,
    )
    return InteractionLog(tuple(records), tuple(weighins))


def write_environment(
    env: SyntheticEnvironment, out_dir: str | Path, log: InteractionLog | None = None
) -> list[Path]:
    """Write users, challenges, weigh-ins, selections (and interactions) CSVs plus ground truth.

    Returns:
        The paths written
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    users = pd.DataFrame([asdict(u) for u in env.users], columns=list(USER_COLUMNS))
    written.append(_write_csv(users, out / "users.csv"))

    challenges = pd.DataFrame(
        [
            {
                "challenge_id": c.challenge_id,
                "title": c.title,
                "description": c.description,
                **{name: _csv_value(getattr(c.meta, name)) for name in META_FEATURE_NAMES[:-1]},
                "duration_weeks": c.meta.duration_weeks,
                "start_week": c.start_week,
                "end_week": c.end_week,
            }
            for c in env.challenges
        ],
        columns=list(CHALLENGE_COLUMNS),
    )
    written.append(_write_csv(challenges, out / "challenges.csv"))

    weighins = log.weighins if log is not None else ()
    frame = pd.DataFrame([asdict(w) for w in weighins], columns=list(WEIGHIN_COLUMNS))
    written.append(_write_csv(frame, out / "weighins.csv"))

    selections = log.selections() if log is not None else []
    frame = pd.DataFrame([asdict(s) for s in selections], columns=list(SELECTION_COLUMNS))
    written.append(_write_csv(frame, out / "selections.csv"))

    if log is not None:
        rows = [(r.user_id, r.week, r.action, r.reward, r.propensity) for r in log.records]
        frame = pd.DataFrame(rows, columns=list(INTERACTION_COLUMNS))
        written.append(_write_csv(frame, out / "interactions.csv"))

    truth_path = out / "ground_truth.json"
    truth = {
        "zeta": env.zeta.tolist(),
        "omega": env.omega.tolist(),
        "seed": env.config.seed,
        "config": env.config.to_dict(),
        "preferred_dimensions": {
            user_id: DIMENSION_NAMES[DIMENSIONS.index(mask)]
            for user_id, mask in env.preferred.items()
        },
    }
    truth_path.write_text(json.dumps(truth, indent=2), encoding="utf-8")
    written.append(truth_path)
    logger.info(
        "Wrote environment (%d users, %d challenges) to %s", len(env.users), len(env.catalog), out
    )
    return written


def _draw_users(cfg: EnvConfig, rng: np.random.Generator) -> tuple[UserProfile, ...]:
    width = len(str(cfg.n_users))
    return tuple(
        UserProfile(
            user_id=f"u{i:0{width}d}",
            gender=int(rng.integers(0, 2)),
            age=float(rng.integers(20, 70)),
            initial_weight=round(float(np.clip(rng.normal(85.0, 15.0), 50.0, 150.0)), 1),
            membership_weeks=int(rng.integers(0, 261)),
            friends=int(rng.geometric(1.0 / 6.0)) - 1,
            posts=int(rng.geometric(1.0 / 6.0)) - 1,
        )
        for i in range(1, cfg.n_users + 1)
    )


def _draw_catalog(cfg: EnvConfig, rng: np.random.Generator) -> Catalog:
    width = len(str(cfg.n_challenges))
    permanent_prob = cfg.weekly_pool / cfg.n_challenges
    records = []
    for k in range(1, cfg.n_challenges + 1):
        weight_loss, diet, activity = (int(rng.random() < p) for p in cfg.type_mix)
        while not (weight_loss or diet or activity):
            weight_loss, diet, activity = (int(rng.random() < p) for p in cfg.type_mix)
        duration = int(rng.integers(1, 9))
        meta = ChallengeMeta(
            specific=int(rng.integers(0, 2)),
            measurable=int(rng.integers(0, 2)),
            diet=diet,
            intensity_diet=_level(diet, rng),
            activity=activity,
            intensity_activity=_level(activity, rng),
            weight_loss=weight_loss,
            intensity_weight_loss=_level(weight_loss, rng),
            motivational=int(rng.integers(0, 2)),
            self_monitoring=int(rng.integers(0, 2)),
            duration_weeks=duration,
        )
        if rng.random() < permanent_prob:
            start, end = 1, cfg.horizon_weeks
        else:
            start = int(rng.integers(1, cfg.horizon_weeks + 1))
            end = min(start + duration - 1, cfg.horizon_weeks)
        flags = (weight_loss, diet, activity)
        kinds = [name for name, flag in zip(DIMENSION_NAMES, flags, strict=True) if flag]
        records.append(
            ChallengeRecord(
                challenge_id=f"c{k:0{width}d}",
                title=f"{' & '.join(kinds).replace('_', ' ').title()} challenge {k}",
                description=f"A {duration}-week {'/'.join(kinds)} challenge.",
                meta=meta,
                start_week=start,
                end_week=end,
            )
        )
    return Catalog.from_records(records)


def _level(flag: int, rng: np.random.Generator) -> Intensity:
    if not flag:
        return Intensity.NA
    return _LEVELS[int(rng.integers(len(_LEVELS)))]


def _covers_every_week(catalog: Catalog, horizon_weeks: int) -> bool:
    for week in range(1, horizon_weeks + 1):
        coverage = DimMask.NONE
        for challenge_id in catalog.available(week):
            coverage |= catalog.mask(challenge_id)
        if coverage != DimMask.ALL:
            return False
    return True


def _draw_weights(
    cfg: EnvConfig, rng: np.random.Generator, boost: float, intercept: float
) -> np.ndarray:
    weights = rng.normal(0.0, 1.0, CONTEXT_DIM) * cfg.ground_truth_sigma
    weights[0] += intercept
    for index in DIMENSION_FEATURE_INDEX.values():
        weights[index] += boost
    return weights


def _offer(
    env: SyntheticEnvironment,
    logging_policy: LoggingPolicy,
    user_id: str,
    ids: tuple[str, ...],
    contexts: np.ndarray,
    slate_size: int,
    rng: np.random.Generator,
) -> tuple[list[int], list[float]]:
    n = len(ids)
    size = min(slate_size, n)
    if logging_policy is LoggingPolicy.UNIFORM:
        picks = rng.choice(n, size=size, replace=False)
        return sorted(int(j) for j in picks), [size / n] * size
    logits = contexts @ env.zeta + np.array([env.affinity_offset(user_id, c) for c in ids])
    if logging_policy is LoggingPolicy.ORACLE:
        order = sorted(range(n), key=lambda j: (-logits[j], ids[j]))[:size]
        return sorted(order), [1.0] * size
    probabilities = softmax(logits)
    j = int(rng.choice(n, p=probabilities))
    return [j], [float(probabilities[j])]


def _csv_value(value: Any) -> Any:
    return value.value if isinstance(value, Intensity) else value


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False)
    return path
