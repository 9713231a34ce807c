"""Recommendation policies behind one interface: recommend per user, observe per round.

The diversity-constrained Thompson sampler is the focal policy; UCB, epsilon-greedy, pure
exploitation and pure exploration share its logistic feature model, while content-based and
matrix-factorization baselines learn from the first logged weeks.
"""

import logging
import math
from collections import defaultdict
from collections.abc import Collection, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, ClassVar, Literal

import numpy as np
from scipy.special import expit

from bandit_rex.domain import DimMask
from bandit_rex.errors import EmptyCandidates, EmptyLog, LengthMismatch
from bandit_rex.evaluation import InteractionLog, InteractionRecord
from bandit_rex.features import FeatureBuilder, context_matrix
from bandit_rex.reward_model import (
    FeedbackBatch,
    GaussianPosterior,
    expected_rewards,
    sample_params,
    update_posterior,
)
from bandit_rex.selector import ScoredCandidate, SelectionProblem, solve_constrained_topk, top_k

logger = logging.getLogger(__name__)

RewardTarget = Literal["selection", "weight_outcome"]
PRETRAIN_WEEKS = 4


@dataclass(frozen=True, eq=False)
class CandidateSlate:
    """Challenges available to one user in one week, in ascending id order.

    contexts holds the full v = [1, x, z] row per candidate; item_features holds z alone.
    """

    user_id: str
    week: int
    challenge_ids: tuple[str, ...]
    contexts: np.ndarray
    item_features: np.ndarray
    masks: tuple[DimMask, ...]

    def __post_init__(self):
        n = len(self.challenge_ids)
        if n == 0:
            raise EmptyCandidates(
                f"no challenges available to user {self.user_id} in week {self.week}"
            )
        if len(set(self.challenge_ids)) != n:
            raise ValueError("candidate slate lists a challenge twice")
        contexts = np.asarray(self.contexts, dtype=float).reshape(n, -1)
        item_features = np.asarray(self.item_features, dtype=float).reshape(n, -1)
        if len(self.masks) != n:
            raise LengthMismatch(f"{n} candidates but {len(self.masks)} masks")
        order = sorted(range(n), key=lambda j: self.challenge_ids[j])
        object.__setattr__(self, "challenge_ids", tuple(self.challenge_ids[j] for j in order))
        object.__setattr__(self, "contexts", contexts[order])
        object.__setattr__(self, "item_features", item_features[order])
        object.__setattr__(self, "masks", tuple(DimMask(self.masks[j]) for j in order))

    @classmethod
    def build(
        cls,
        features: FeatureBuilder,
        user_id: str,
        week: int,
        user_ctx: np.ndarray,
        challenge_ids: Sequence[str],
    ) -> "CandidateSlate":
        ids = tuple(sorted(challenge_ids))
        item_features = features.item_matrix(ids)
        return cls(
            user_id=user_id,
            week=week,
            challenge_ids=ids,
            contexts=context_matrix(user_ctx, item_features),
            item_features=item_features,
            masks=tuple(features.catalog.mask(c) for c in ids),
        )

    def __len__(self) -> int:
        return len(self.challenge_ids)


@dataclass(frozen=True)
class PolicyDecision:
    """Recommended challenges (best first) with the score each was chosen on."""

    user_id: str
    week: int
    recommended: tuple[str, ...]
    scores: Mapping[str, float]

    def __post_init__(self):
        if len(set(self.recommended)) != len(self.recommended):
            raise ValueError("a decision cannot recommend the same challenge twice")


@dataclass(eq=False)
class PMFModel:
    """User and item factor matrices with their id indexes."""

    user_index: dict[str, int]
    item_index: dict[str, int]
    U: np.ndarray
    V: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    @property
    def f(self) -> int:
        return self.U.shape[1]

    def score(self, user_id: str, challenge_id: str) -> float:
        """Predicted interaction U_i . V_k, 0.0 for unseen users or items."""
        i = self.user_index.get(user_id)
        k = self.item_index.get(challenge_id)
        if i is None or k is None:
            return 0.0
        return float(self.U[i] @ self.V[k])


@dataclass(frozen=True, eq=False)
class FeedbackRecord:
    """Outcome of one recommended item: the policy-view context and the observed reward."""

    user_id: str
    week: int
    challenge_id: str
    context: np.ndarray
    item_features: np.ndarray
    reward: int


RoundFeedback = Sequence[FeedbackRecord]


def feedback_batch(feedback: RoundFeedback, d: int) -> FeedbackBatch:
    return FeedbackBatch.from_pairs(((r.context, r.reward) for r in feedback), d)


def choose(
    slate: CandidateSlate, scores: np.ndarray, K: int, required: DimMask
) -> PolicyDecision:
    """Pick K items by score, through the coverage solver when dimensions are required."""
    ids = slate.challenge_ids
    if required.is_empty():
        chosen = top_k(ids, scores, K)
    else:
        problem = SelectionProblem(
            tuple(
                ScoredCandidate(c, float(s), m)
                for c, s, m in zip(ids, scores, slate.masks, strict=True)
            ),
            K,
            required,
        )
        selected = solve_constrained_topk(problem)
        kept = [j for j, c in enumerate(ids) if c in selected]
        chosen = top_k([ids[j] for j in kept], [scores[j] for j in kept], K)
    score_of = dict(zip(ids, (float(s) for s in scores), strict=True))
    return PolicyDecision(slate.user_id, slate.week, chosen, {c: score_of[c] for c in chosen})


def recommend_ts_diverse(
    post: GaussianPosterior,
    slate: CandidateSlate,
    K: int,
    required: DimMask,
    rng: np.random.Generator,
) -> PolicyDecision:
    """One posterior draw, sampled selection probabilities, then the constrained top-K."""
    theta = sample_params(post, rng)
    return choose(slate, expected_rewards(theta, slate.contexts), K, required)


def recommend_ucb(
    post: GaussianPosterior,
    slate: CandidateSlate,
    K: int,
    alpha: float,
    required: DimMask = DimMask.NONE,
) -> PolicyDecision:
    """Score sigmoid(m . v + alpha * sqrt(sum_j v_j x_j^2)) and take the top K."""
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    if slate.contexts.shape[1] != post.d:
        raise LengthMismatch(
            f"contexts have {slate.contexts.shape[1]} columns, posterior has {post.d}"
        )
    bonus = np.sqrt((slate.contexts * slate.contexts) @ post.v)
    scores = expit(slate.contexts @ post.m + alpha * bonus)
    return choose(slate, scores, K, required)


def recommend_eps_greedy(
    post: GaussianPosterior,
    slate: CandidateSlate,
    K: int,
    epsilon: float,
    rng: np.random.Generator,
    required: DimMask = DimMask.NONE,
) -> PolicyDecision:
    """Fill each slot greedily with probability 1 - epsilon, else with a random remaining item.

    With required dimensions the filled slots are then repaired through the coverage
    solver, where every filled item scores above every other candidate.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    scores = expected_rewards(post.m, slate.contexts)
    ids = slate.challenge_ids
    remaining = sorted(range(len(ids)), key=lambda j: (-scores[j], ids[j]))
    chosen: list[str] = []
    for _ in range(min(K, len(ids))):
        if rng.random() < epsilon:
            j = remaining.pop(int(rng.integers(len(remaining))))
        else:
            j = remaining.pop(0)
        chosen.append(ids[j])
    score_of = dict(zip(ids, (float(s) for s in scores), strict=True))
    if not required.is_empty():
        filled = np.array([c in chosen for c in ids], dtype=float)
        repaired = choose(slate, 0.5 * scores + 0.5 * filled, K, required)
        chosen = list(repaired.recommended)
    return PolicyDecision(
        slate.user_id, slate.week, tuple(chosen), {c: score_of[c] for c in chosen}
    )


def recommend_pure_exploit(
    post: GaussianPosterior, slate: CandidateSlate, K: int, required: DimMask = DimMask.NONE
) -> PolicyDecision:
    """Top K by posterior-mean selection probability."""
    return choose(slate, expected_rewards(post.m, slate.contexts), K, required)


def recommend_pure_explore(
    slate: CandidateSlate, K: int, rng: np.random.Generator, required: DimMask = DimMask.NONE
) -> PolicyDecision:
    """Uniformly random K-subset; each recorded score is the inclusion probability.

    With required dimensions, independent uniform scores go through the coverage solver
    instead and each recorded score is the item's draw.
    """
    n = len(slate)
    if not required.is_empty():
        return choose(slate, rng.random(n), K, required)
    size = min(K, n)
    picks = rng.choice(n, size=size, replace=False)
    chosen = tuple(slate.challenge_ids[j] for j in picks)
    return PolicyDecision(slate.user_id, slate.week, chosen, dict.fromkeys(chosen, size / n))


def cosine_scores(profile: np.ndarray | None, item_features: np.ndarray) -> np.ndarray:
    """Cosine similarity of each row to the profile; 0 where either vector is zero."""
    n = item_features.shape[0]
    if profile is None:
        return np.zeros(n)
    profile_norm = float(np.linalg.norm(profile))
    row_norms = np.linalg.norm(item_features, axis=1)
    denominator = profile_norm * row_norms
    dots = item_features @ profile
    return np.divide(dots, denominator, out=np.zeros(n), where=denominator > 0)


def recommend_cb(
    history: Sequence[np.ndarray],
    slate: CandidateSlate,
    K: int,
    required: DimMask = DimMask.NONE,
) -> PolicyDecision:
    """Content-based: rank by cosine similarity to the mean of past selections."""
    profile = np.mean(np.vstack(history), axis=0) if len(history) else None
    scores = cosine_scores(profile, slate.item_features)
    return _choose_raw(slate, scores, K, required)


def fit_pmf(
    log: InteractionLog,
    f: int = 8,
    learning_rate: float = 0.05,
    reg: float = 0.1,
    epochs: int = 50,
    rng: np.random.Generator | None = None,
    batch_size: int = 64,
) -> PMFModel:
    """Probabilistic matrix factorization by mini-batch SGD on squared error.

    Each logged (user, challenge, reward) is one observation; offered-but-not-selected
    pairs are the zeros. Minimizes the mean over observations of
    1/2 (r - U_i . V_k)^2 + reg/2 (|U_i|^2 + |V_k|^2).

    Args:
        log: Training interactions
        f: Latent rank
        learning_rate: SGD step size
        reg: Ridge weight per observation
        epochs: Passes over the data
        rng: Generator for initialization and shuffling
        batch_size: Observations per SGD step

    Returns:
        The fitted model; loss_history holds the objective after each epoch

    Raises:
        EmptyLog: If the log has no records
    """
    if not log.records:
        raise EmptyLog("cannot fit matrix factorization on an empty log")
    if f < 1:
        raise ValueError(f"latent rank must be at least 1, got {f}")
    rng = rng if rng is not None else np.random.default_rng(0)

    user_index = {u: i for i, u in enumerate(sorted({r.user_id for r in log.records}))}
    item_index = {c: k for k, c in enumerate(sorted({r.action for r in log.records}))}
    users = np.array([user_index[r.user_id] for r in log.records])
    items = np.array([item_index[r.action] for r in log.records])
    rewards = np.array([r.reward for r in log.records], dtype=float)

    U = 0.1 * rng.standard_normal((len(user_index), f))
    V = 0.1 * rng.standard_normal((len(item_index), f))
    model = PMFModel(user_index, item_index, U, V)

    for _ in range(epochs):
        order = rng.permutation(len(rewards))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            u, k = users[idx], items[idx]
            err = np.sum(U[u] * V[k], axis=1) - rewards[idx]
            grad_u = err[:, None] * V[k] + reg * U[u]
            grad_v = err[:, None] * U[u] + reg * V[k]
            np.add.at(U, u, -learning_rate * grad_u)
            np.add.at(V, k, -learning_rate * grad_v)
        model.loss_history.append(_pmf_loss(U, V, users, items, rewards, reg))

    final_loss = model.loss_history[-1] if model.loss_history else math.nan
    logger.debug(
        "PMF fit: rank %d, %d observations, final loss %.4f", model.f, len(rewards), final_loss
    )
    return model


def recommend_pmf(
    model: PMFModel | None, slate: CandidateSlate, K: int, required: DimMask = DimMask.NONE
) -> PolicyDecision:
    """Rank by U_i . V_k; unseen users or items score 0."""
    if model is None:
        scores = np.zeros(len(slate))
    else:
        scores = np.array([model.score(slate.user_id, c) for c in slate.challenge_ids])
    return _choose_raw(slate, scores, K, required)


def _choose_raw(
    slate: CandidateSlate, scores: np.ndarray, K: int, required: DimMask
) -> PolicyDecision:
    # unbounded scores are squashed into (0, 1) before the coverage solver
    if required.is_empty():
        return choose(slate, scores, K, required)
    decision = choose(slate, expit(scores), K, required)
    raw = dict(zip(slate.challenge_ids, (float(s) for s in scores), strict=True))
    kept = {c: raw[c] for c in decision.recommended}
    return PolicyDecision(decision.user_id, decision.week, decision.recommended, kept)


def _pmf_loss(U, V, users, items, rewards, reg) -> float:
    err = np.sum(U[users] * V[items], axis=1) - rewards
    ridge = np.sum(U[users] ** 2, axis=1) + np.sum(V[items] ** 2, axis=1)
    return float(np.mean(0.5 * err**2 + 0.5 * reg * ridge))


class BanditState:
    """Shared logistic posterior for the contextual bandit policies."""

    def __init__(self, posterior: GaussianPosterior):
        self.posterior = posterior

    def observe(self, feedback: RoundFeedback) -> "BanditState":
        batch = feedback_batch(feedback, self.posterior.d)
        self.posterior = update_posterior(self.posterior, batch)
        return self


class ContentState:
    """Per-user item-feature vectors of past selections."""

    def __init__(self):
        self.history: dict[str, list[np.ndarray]] = defaultdict(list)

    def profile(self, user_id: str) -> np.ndarray | None:
        vectors = self.history.get(user_id)
        if not vectors:
            return None
        return np.mean(np.vstack(vectors), axis=0)

    def observe(self, feedback: RoundFeedback) -> "ContentState":
        for record in feedback:
            if record.reward == 1:
                self.history[record.user_id].append(np.asarray(record.item_features, dtype=float))
        return self


class PMFState:
    """Training interactions plus the current factor model.

    With refit_every = 0 the model stays fixed after the initial fit.
    """

    def __init__(self, params: Mapping[str, Any], refit_every: int = 0):
        self.params = dict(params)
        self.refit_every = refit_every
        self.records: list[InteractionRecord] = []
        self.model: PMFModel | None = None
        self.rounds_observed = 0
        self._rng: np.random.Generator | None = None

    def fit(self, records: Sequence[InteractionRecord], rng: np.random.Generator) -> "PMFState":
        self.records = list(records)
        self._rng = rng
        if self.records:
            self.model = fit_pmf(InteractionLog(tuple(self.records)), rng=rng, **self.params)
        return self

    def observe(self, feedback: RoundFeedback) -> "PMFState":
        if not feedback:
            return self
        self.records.extend(
            InteractionRecord(r.user_id, r.week, r.challenge_id, r.context, r.reward, 1.0)
            for r in feedback
        )
        self.rounds_observed += 1
        if self.refit_every and self.rounds_observed % self.refit_every == 0:
            rng = self._rng if self._rng is not None else np.random.default_rng(0)
            self.model = fit_pmf(InteractionLog(tuple(self.records)), rng=rng, **self.params)
        return self


PolicyState = BanditState | ContentState | PMFState


def observe_feedback(state: PolicyState, feedback: RoundFeedback) -> PolicyState:
    """Fold one round's feedback into a policy state."""
    return state.observe(feedback)


class Policy:
    """A named recommender with its own feature view."""

    kind: ClassVar[str]
    default_diversity: ClassVar[bool] = False

    def __init__(
        self,
        name: str,
        features: FeatureBuilder,
        K: int,
        diversity: bool | None = None,
        reward_target: RewardTarget = "selection",
    ):
        diversity = self.default_diversity if diversity is None else diversity
        self.name = name
        self.features = features
        self.K = K
        self.diversity = diversity
        self.reward_target = reward_target

    @property
    def required(self) -> DimMask:
        return DimMask.ALL if self.diversity else DimMask.NONE

    def slate(
        self, user_id: str, week: int, user_ctx: np.ndarray, challenge_ids: Collection[str]
    ) -> CandidateSlate:
        return CandidateSlate.build(self.features, user_id, week, user_ctx, tuple(challenge_ids))

    def recommend(self, slate: CandidateSlate, rng: np.random.Generator) -> PolicyDecision:
        raise NotImplementedError

    def pretrain(self, log: InteractionLog, rng: np.random.Generator) -> None:
        """Learn from the initial logged weeks; online learners start from their prior."""

    def observe(self, feedback: RoundFeedback) -> None:
        """Fold in one round of feedback."""


class _BanditPolicy(Policy):
    def __init__(
        self,
        name,
        features,
        K,
        diversity=None,
        reward_target="selection",
        prior_variance: float = 1.0,
    ):
        super().__init__(name, features, K, diversity, reward_target)
        self.state = BanditState(GaussianPosterior.standard(features.context_dim, prior_variance))

    @property
    def posterior(self) -> GaussianPosterior:
        return self.state.posterior

    def observe(self, feedback: RoundFeedback) -> None:
        observe_feedback(self.state, feedback)


class ThompsonPolicy(_BanditPolicy):
    kind = "ts_diverse"
    default_diversity = True

    def recommend(self, slate, rng):
        return recommend_ts_diverse(self.posterior, slate, self.K, self.required, rng)


class UCBPolicy(_BanditPolicy):
    kind = "ucb"

    def __init__(
        self,
        name,
        features,
        K,
        diversity=None,
        reward_target="selection",
        prior_variance: float = 1.0,
        alpha: float = 1.0,
    ):
        super().__init__(name, features, K, diversity, reward_target, prior_variance)
        if alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        self.alpha = alpha

    def recommend(self, slate, rng):
        return recommend_ucb(self.posterior, slate, self.K, self.alpha, self.required)


class EpsilonGreedyPolicy(_BanditPolicy):
    kind = "eps_greedy"

    def __init__(
        self,
        name,
        features,
        K,
        diversity=None,
        reward_target="selection",
        prior_variance: float = 1.0,
        epsilon: float = 0.1,
    ):
        super().__init__(name, features, K, diversity, reward_target, prior_variance)
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
        self.epsilon = epsilon

    def recommend(self, slate, rng):
        return recommend_eps_greedy(
            self.posterior, slate, self.K, self.epsilon, rng, self.required
        )


class ExploitPolicy(_BanditPolicy):
    kind = "pure_exploit"

    def recommend(self, slate, rng):
        return recommend_pure_exploit(self.posterior, slate, self.K, self.required)


class ExplorePolicy(Policy):
    kind = "pure_explore"

    def recommend(self, slate, rng):
        return recommend_pure_explore(slate, self.K, rng, self.required)


class ContentPolicy(Policy):
    kind = "cb"

    def __init__(self, name, features, K, diversity=None, reward_target="selection"):
        super().__init__(name, features, K, diversity, reward_target)
        self.state = ContentState()

    def pretrain(self, log, rng):
        self.state.observe(
            [
                FeedbackRecord(
                    r.user_id,
                    r.week,
                    r.action,
                    r.context,
                    self.features.item_features(r.action),
                    r.reward,
                )
                for r in log.records
            ]
        )

    def recommend(self, slate, rng):
        return recommend_cb(self.state.history.get(slate.user_id, []), slate, self.K, self.required)

    def observe(self, feedback):
        observe_feedback(self.state, feedback)


class PMFPolicy(Policy):
    kind = "pmf"

    def __init__(
        self,
        name,
        features,
        K,
        diversity=None,
        reward_target="selection",
        f: int = 8,
        learning_rate: float = 0.05,
        reg: float = 0.1,
        epochs: int = 50,
        batch_size: int = 64,
        refit_every: int = 0,
    ):
        super().__init__(name, features, K, diversity, reward_target)
        self.state = PMFState(
            {
                "f": f,
                "learning_rate": learning_rate,
                "reg": reg,
                "epochs": epochs,
                "batch_size": batch_size,
            },
            refit_every,
        )

    def pretrain(self, log, rng):
        self.state.fit(log.records, rng)

    def recommend(self, slate, rng):
        return recommend_pmf(self.state.model, slate, self.K, self.required)

    def observe(self, feedback):
        observe_feedback(self.state, feedback)


POLICY_CLASSES: dict[str, type[Policy]] = {
    cls.kind: cls
    for cls in (
        ThompsonPolicy,
        UCBPolicy,
        EpsilonGreedyPolicy,
        ExploitPolicy,
        ExplorePolicy,
        ContentPolicy,
        PMFPolicy,
    )
}
POLICY_KINDS = tuple(POLICY_CLASSES)


def make_policy(
    name: str,
    kind: str,
    features: FeatureBuilder,
    K: int,
    diversity: bool | None = None,
    reward_target: RewardTarget = "selection",
    **params: Any,
) -> Policy:
    """Instantiate a policy by kind with its hyperparameters."""
    try:
        policy_cls = POLICY_CLASSES[kind]
    except KeyError:
        expected = ", ".join(POLICY_KINDS)
        raise ValueError(f"unknown policy kind {kind!r}; expected one of {expected}") from None
    return policy_cls(name, features, K, diversity, reward_target, **params)
