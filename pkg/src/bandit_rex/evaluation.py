"""Offline and simulated evaluation: doubly-robust estimation, precision, diversity, outcomes."""

import logging
import math
from collections import defaultdict
from collections.abc import Callable, Collection, Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, rel_entr

from bandit_rex.domain import NUM_DIMENSIONS, Catalog, SelectionEvent, WeighIn
from bandit_rex.errors import (
    EmptyLog,
    LengthMismatch,
    MissingRecommendation,
    NoTypedEvents,
)
from bandit_rex.reward_model import FeedbackBatch, fit_logistic

logger = logging.getLogger(__name__)

PROPENSITY_FLOOR = 0.01
DEFAULT_DYNAMIC_USERS = 30
SIMULATOR_PRIOR_VARIANCE = 100.0

UserWeek = tuple[str, int]
Recommendations = Mapping[UserWeek, Collection[str]]
ContextLookup = Callable[[str, int, str], np.ndarray]


@dataclass(frozen=True, eq=False)
class InteractionRecord:
    """One logged (user, week, action) with its context, reward and logging propensity."""

    user_id: str
    week: int
    action: str
    context: np.ndarray
    reward: int
    propensity: float

    def __post_init__(self):
        if self.reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {self.reward!r}")
        if not 0.0 < self.propensity <= 1.0:
            raise ValueError(f"propensity must lie in (0, 1], got {self.propensity}")
        object.__setattr__(self, "context", np.asarray(self.context, dtype=float))


@dataclass(frozen=True, eq=False)
class InteractionLog:
    """Logged interactions plus the weigh-ins observed over the same weeks."""

    records: tuple[InteractionRecord, ...]
    weighins: tuple[WeighIn, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "weighins", tuple(self.weighins))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[InteractionRecord]:
        return iter(self.records)

    def users(self) -> tuple[str, ...]:
        return tuple(sorted({r.user_id for r in self.records}))

    def weeks(self) -> tuple[int, ...]:
        return tuple(sorted({r.week for r in self.records}))

    def between(self, first_week: int, last_week: int) -> "InteractionLog":
        """Records and weigh-ins with first_week <= week <= last_week."""
        return InteractionLog(
            tuple(r for r in self.records if first_week <= r.week <= last_week),
            tuple(w for w in self.weighins if first_week <= w.week <= last_week),
        )

    def for_users(self, user_ids: Collection[str]) -> "InteractionLog":
        keep = set(user_ids)
        return InteractionLog(
            tuple(r for r in self.records if r.user_id in keep),
            tuple(w for w in self.weighins if w.user_id in keep),
        )

    def selections(self) -> list[SelectionEvent]:
        """Logged actions the user took up (reward 1)."""
        return [
            SelectionEvent(r.user_id, r.week, r.action, r.propensity)
            for r in self.records
            if r.reward == 1
        ]

    def preference_sets(self) -> dict[str, frozenset[str]]:
        """Per user, the set of challenges selected anywhere in the log."""
        chosen: dict[str, set[str]] = defaultdict(set)
        for record in self.records:
            if record.reward == 1:
                chosen[record.user_id].add(record.action)
        return {user_id: frozenset(items) for user_id, items in chosen.items()}

    def batch(self) -> FeedbackBatch:
        if not self.records:
            raise EmptyLog("interaction log has no records")
        return FeedbackBatch(
            np.vstack([r.context for r in self.records]),
            np.array([r.reward for r in self.records], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class RewardSimulator:
    """Pre-trained logistic reward predictor used by the direct-method term."""

    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(weights)):
            raise ValueError("reward simulator weights must be finite")
        object.__setattr__(self, "weights", weights)

    def predict(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        if v.shape != self.weights.shape:
            raise LengthMismatch(
                f"context has length {v.shape[0]}, simulator expects {self.weights.shape[0]}"
            )
        return float(expit(self.weights @ v))


@dataclass(frozen=True, eq=False)
class OmniscientSimulator:
    """Ground-truth selection model P(select) = sigmoid(zeta . v + offset)."""

    zeta: np.ndarray

    def __post_init__(self):
        zeta = np.asarray(self.zeta, dtype=float)
        if not np.all(np.isfinite(zeta)):
            raise ValueError("simulator weights must be finite")
        object.__setattr__(self, "zeta", zeta)

    def probability(self, v: np.ndarray, offset: float = 0.0) -> float:
        v = np.asarray(v, dtype=float)
        if v.shape != self.zeta.shape:
            raise LengthMismatch(
                f"context has length {v.shape[0]}, simulator expects {self.zeta.shape[0]}"
            )
        return float(expit(self.zeta @ v + offset))


@dataclass(frozen=True)
class DiversityDistribution:
    """Share of events per dimension, in (weight_loss, diet, exercise) order."""

    probabilities: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.probabilities)
        if len(p) != NUM_DIMENSIONS:
            raise LengthMismatch(f"expected {NUM_DIMENSIONS} probabilities, got {len(p)}")
        if any(x < 0.0 for x in p) or abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError(f"not a probability distribution: {p}")
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def from_counts(cls, counts: Sequence[float]) -> "DiversityDistribution":
        total = math.fsum(counts)
        if total <= 0:
            raise NoTypedEvents("no event carried a dimension bit")
        return cls(tuple(c / total for c in counts))

    def as_array(self) -> np.ndarray:
        return np.array(self.probabilities)


def fit_reward_simulator(train_log: InteractionLog) -> RewardSimulator:
    """Fit the direct-method predictor by logistic MLE under a weak N(0, 100) prior.

    Raises:
        EmptyLog: If the log has no records
        SolverFailure: If the fit does not converge
    """
    batch = train_log.batch()
    posterior = fit_logistic(batch.contexts, batch.rewards, SIMULATOR_PRIOR_VARIANCE)
    return RewardSimulator(posterior.m)


def perturb_weights(
    weights: np.ndarray, sigma_scale: float, rng: np.random.Generator
) -> np.ndarray:
    """Add N(0, sigma^2) noise per coordinate, sigma = sigma_scale * |w| / sqrt(d)."""
    weights = np.asarray(weights, dtype=float)
    if sigma_scale == 0.0:
        return weights.copy()
    sigma = sigma_scale * float(np.linalg.norm(weights)) / math.sqrt(weights.shape[0])
    return weights + rng.normal(0.0, sigma, size=weights.shape[0])


def make_omniscient(
    train_log: InteractionLog, sigma_scale: float, rng: np.random.Generator
) -> OmniscientSimulator:
    """Omniscient simulator from a perturbed copy of weights fitted on train_log."""
    fitted = fit_reward_simulator(train_log)
    return OmniscientSimulator(perturb_weights(fitted.weights, sigma_scale, rng))


def simulate_feedback(
    sim: OmniscientSimulator, v: np.ndarray, rng: np.random.Generator, offset: float = 0.0
) -> int:
    """Bernoulli(sigmoid(zeta . v + offset)) selection draw."""
    return int(rng.random() < sim.probability(v, offset))


def doubly_robust_terms(
    log: InteractionLog,
    recs: Recommendations,
    rho: RewardSimulator,
    contexts: ContextLookup,
    propensity_floor: float = PROPENSITY_FLOOR,
) -> np.ndarray:
    """Per-record doubly-robust value of the recommendation sets.

    For a record (i, t, a) with reward r and propensity p, the term is
    (1/K) sum_{k in S_it} [rho(v_itk) + (r - rho(v_ita)) 1[k = a] / max(p, floor)].

    Raises:
        EmptyLog: If the log has no records
        MissingRecommendation: If a logged (user, week) has no recommendation set
    """
    if not log.records:
        raise EmptyLog("cannot evaluate on an empty log")
    terms = np.empty(len(log.records))
    for position, record in enumerate(log.records):
        key = (record.user_id, record.week)
        if key not in recs:
            raise MissingRecommendation(f"no recommendation for user {key[0]} in week {key[1]}")
        recommended = recs[key]
        if not recommended:
            raise ValueError(f"empty recommendation set for user {key[0]} in week {key[1]}")
        p = max(record.propensity, propensity_floor)
        parts = []
        for challenge_id in sorted(recommended):
            if challenge_id == record.action:
                rho_a = rho.predict(record.context)
                parts.append(rho_a * (1.0 - 1.0 / p) + record.reward / p)
            else:
                parts.append(rho.predict(contexts(record.user_id, record.week, challenge_id)))
        terms[position] = math.fsum(parts) / len(recommended)
    return terms


def doubly_robust_estimate(
    log: InteractionLog,
    recs: Recommendations,
    rho: RewardSimulator,
    contexts: ContextLookup,
    propensity_floor: float = PROPENSITY_FLOOR,
) -> float:
    """Mean of doubly_robust_terms over the log."""
    return float(np.mean(doubly_robust_terms(log, recs, rho, contexts, propensity_floor)))


def offline_precision(
    recs: Recommendations, preference_sets: Mapping[str, Collection[str]]
) -> float:
    """Mean over (user, week) of |S_it & P_i| / |S_it|; 0.0 when there is nothing to score."""
    if not recs:
        return 0.0
    ratios = []
    for (user_id, week), recommended in sorted(recs.items()):
        if not recommended:
            raise ValueError(f"empty recommendation set for user {user_id} in week {week}")
        preferred = preference_sets.get(user_id, frozenset())
        ratios.append(len(set(recommended) & set(preferred)) / len(recommended))
    return math.fsum(ratios) / len(ratios)


def jsd(
    p: DiversityDistribution | Sequence[float], q: DiversityDistribution | Sequence[float]
) -> float:
    """Jensen-Shannon divergence in bits, so the result lies in [0, 1].

    Examples:
        >>> round(jsd((0.5, 0.5, 0.0), (0.25, 0.75, 0.0)), 4)
        0.0488
    """
    p_arr = p.as_array() if isinstance(p, DiversityDistribution) else np.asarray(p, dtype=float)
    q_arr = q.as_array() if isinstance(q, DiversityDistribution) else np.asarray(q, dtype=float)
    if p_arr.shape != q_arr.shape:
        raise LengthMismatch(f"distributions have lengths {p_arr.shape[0]} and {q_arr.shape[0]}")
    mid = 0.5 * (p_arr + q_arr)
    nats = 0.5 * (math.fsum(rel_entr(p_arr, mid)) + math.fsum(rel_entr(q_arr, mid)))
    divergence = nats / math.log(2.0)
    return min(max(divergence, 0.0), 1.0)


def diversity_counts(events: Iterable[str], catalog: Catalog) -> np.ndarray:
    """One count per dimension bit per event."""
    counts = np.zeros(NUM_DIMENSIONS)
    for challenge_id in events:
        counts += catalog.mask(challenge_id).bits()
    return counts


def diversity_distribution(events: Iterable[str], catalog: Catalog) -> DiversityDistribution:
    """Dimension distribution of recommended or selected challenge ids.

    Raises:
        NoTypedEvents: If no event's challenge carries a dimension bit
    """
    return DiversityDistribution.from_counts(diversity_counts(events, catalog).tolist())


def preferred_counts(
    recs: Recommendations, preference_sets: Mapping[str, Collection[str]]
) -> dict[str, int]:
    """Per user, the number of recommended items found in the user's preference set."""
    counts: dict[str, int] = defaultdict(int)
    for (user_id, _week), recommended in recs.items():
        preferred = preference_sets.get(user_id, frozenset())
        counts[user_id] += len(set(recommended) & set(preferred))
    return counts


def user_improvement(
    focal_recs: Recommendations,
    baseline_recs: Recommendations,
    preference_sets: Mapping[str, Collection[str]],
) -> float:
    """Fraction of users who get strictly more preferred items from focal than baseline."""
    users = {user_id for user_id, _ in focal_recs} | {user_id for user_id, _ in baseline_recs}
    if not users:
        return 0.0
    focal = preferred_counts(focal_recs, preference_sets)
    baseline = preferred_counts(baseline_recs, preference_sets)
    improved = sum(1 for user_id in users if focal.get(user_id, 0) > baseline.get(user_id, 0))
    return improved / len(users)


def dynamic_score(item_vectors: Sequence[np.ndarray]) -> float:
    """Minimum over coordinates of the population variance of a user's chosen items."""
    if len(item_vectors) < 2:
        return 0.0
    return float(np.min(np.var(np.vstack(item_vectors), axis=0)))


def select_dynamic_users(
    selections: Mapping[str, Sequence[np.ndarray]], n: int = DEFAULT_DYNAMIC_USERS
) -> tuple[str, ...]:
    """The n users whose choices vary most, by descending dynamic_score then ascending id."""
    scored = sorted(
        ((dynamic_score(vectors), user_id) for user_id, vectors in selections.items()),
        key=lambda pair: (-pair[0], pair[1]),
    )
    return tuple(user_id for _, user_id in scored[:n])


def weight_outcome_input(
    user_emb: np.ndarray, chosen: Sequence[np.ndarray], item_dim: int
) -> np.ndarray:
    """[1, user_emb, mean of chosen item vectors], with zeros when nothing was chosen."""
    if len(chosen):
        mean = np.mean(np.vstack(chosen), axis=0)
        if mean.shape[0] != item_dim:
            raise LengthMismatch(f"item vectors have length {mean.shape[0]}, expected {item_dim}")
    else:
        mean = np.zeros(item_dim)
    return np.concatenate(([1.0], np.asarray(user_emb, dtype=float), mean))


def weight_outcome_probability(
    user_emb: np.ndarray, chosen: Sequence[np.ndarray], omega: np.ndarray
) -> float:
    """Probability the period ends without weight gain."""
    omega = np.asarray(omega, dtype=float)
    item_dim = omega.shape[0] - 1 - len(user_emb)
    if item_dim < 0:
        raise LengthMismatch(f"omega has length {omega.shape[0]}, too short for the user vector")
    return float(expit(omega @ weight_outcome_input(user_emb, chosen, item_dim)))


def weight_outcome_round(
    user_emb: np.ndarray,
    chosen: Sequence[np.ndarray],
    omega: np.ndarray,
    rng: np.random.Generator,
) -> int:
    """Draw one period's outcome: 1 for non-gain, 0 for gain."""
    return int(rng.random() < weight_outcome_probability(user_emb, chosen, omega))


def in_period_weightloss_rate(outcomes: Iterable[int | None]) -> float:
    """Share of periods with outcome 1 among periods with a defined outcome."""
    defined = [o for o in outcomes if o is not None]
    if not defined:
        return 0.0
    return sum(defined) / len(defined)


def weighin_outcomes(weighins: Iterable[WeighIn]) -> dict[UserWeek, int]:
    """Outcome of week w (1 if weight did not increase since week w - 1).

    Weeks without a weigh-in in both w - 1 and w have no outcome.
    """
    by_key = {(w.user_id, w.week): w.weight for w in weighins}
    outcomes: dict[UserWeek, int] = {}
    for (user_id, week), weight in sorted(by_key.items()):
        previous = by_key.get((user_id, week - 1))
        if previous is not None:
            outcomes[(user_id, week)] = int(weight <= previous)
    return outcomes


def fit_weight_outcome_model(inputs: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
    """Logistic fit of non-gain outcomes on weight_outcome_input rows."""
    if len(outcomes) == 0:
        raise EmptyLog("no defined weight outcomes to fit")
    return fit_logistic(inputs, outcomes, SIMULATOR_PRIOR_VARIANCE).m


def learning_curve(per_round_rewards: Sequence[Sequence[float]]) -> np.ndarray:
    """Cumulative mean reward through each round.

    Examples:
        >>> learning_curve([[0.5, 0.5], [1.0, 1.0]]).tolist()
        [0.5, 0.75]
    """
    sums = np.cumsum([math.fsum(rewards) for rewards in per_round_rewards])
    counts = np.cumsum([len(rewards) for rewards in per_round_rewards])
    return np.divide(sums, counts, out=np.zeros_like(sums, dtype=float), where=counts > 0)
