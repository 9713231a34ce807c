"""Bayesian logistic reward model with a diagonal Laplace posterior.

The model predicts P(select) = sigmoid(theta . v). After each round the posterior mean is
moved to the minimizer of the penalized negative log-likelihood and the diagonal precision
accumulates the curvature at that mean.
"""

import json
import logging
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import expit

from bandit_rex.errors import LengthMismatch, ParseError, SolverFailure

logger = logging.getLogger(__name__)

POSTERIOR_DOCUMENT_VERSION = 1
VARIANCE_FLOOR = 1e-10
GRADIENT_TOLERANCE = 1e-6
MAX_NEWTON_ITERATIONS = 100
ARMIJO_C = 1e-4
MAX_HALVINGS = 40


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    """Independent Gaussian N(m_j, v_j) over each coefficient."""

    m: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if m.ndim != 1 or m.shape != v.shape:
            raise LengthMismatch(f"mean has shape {m.shape} but variance has shape {v.shape}")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
            raise ValueError("posterior entries must be finite")
        if np.any(v <= 0):
            raise ValueError("posterior variances must be positive")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "v", v)

    @classmethod
    def standard(cls, d: int, variance: float = 1.0) -> "GaussianPosterior":
        """Prior with zero mean and a shared variance."""
        return cls(np.zeros(d), np.full(d, float(variance)))

    @property
    def d(self) -> int:
        return self.m.shape[0]

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / self.v

    def to_document(self) -> dict:
        return {
            "version": POSTERIOR_DOCUMENT_VERSION,
            "d": self.d,
            "m": self.m.tolist(),
            "v": self.v.tolist(),
        }

    @classmethod
    def from_document(cls, document: dict) -> "GaussianPosterior":
        """Rebuild a posterior from its JSON document.

        Raises:
            ParseError: If the document has the wrong version or shape
        """
        version = document.get("version")
        if version != POSTERIOR_DOCUMENT_VERSION:
            raise ParseError(f"unsupported posterior document version {version!r}")
        try:
            m = np.array(document["m"], dtype=float)
            v = np.array(document["v"], dtype=float)
            posterior = cls(m, v)
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed posterior document: {e}") from e
        if posterior.d != document.get("d"):
            raise ParseError(
                f"posterior document declares d={document.get('d')} but holds {posterior.d}"
            )
        return posterior

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_document()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GaussianPosterior":
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}") from e
        return cls.from_document(document)


@dataclass(frozen=True, eq=False)
class FeedbackBatch:
    """One round of (context, reward) observations; rewards are 0 or 1."""

    contexts: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        contexts = np.asarray(self.contexts, dtype=float)
        rewards = np.asarray(self.rewards, dtype=float)
        if contexts.ndim != 2:
            raise LengthMismatch(f"contexts must be a matrix, got shape {contexts.shape}")
        if rewards.shape != (contexts.shape[0],):
            raise LengthMismatch(
                f"{contexts.shape[0]} contexts but rewards have shape {rewards.shape}"
            )
        if not np.all((rewards == 0.0) | (rewards == 1.0)):
            raise ValueError("rewards must be 0 or 1")
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "rewards", rewards)

    @classmethod
    def empty(cls, d: int) -> "FeedbackBatch":
        return cls(np.empty((0, d)), np.empty(0))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[np.ndarray, int]], d: int) -> "FeedbackBatch":
        pairs = list(pairs)
        if not pairs:
            return cls.empty(d)
        contexts, rewards = zip(*pairs, strict=True)
        return cls(np.vstack(contexts), np.array(rewards, dtype=float))

    def __len__(self) -> int:
        return self.contexts.shape[0]

    @property
    def dim(self) -> int:
        return self.contexts.shape[1]

    @property
    def labels(self) -> np.ndarray:
        """Rewards recoded 0 -> -1, 1 -> +1."""
        return 2.0 * self.rewards - 1.0


def expected_reward(theta: np.ndarray, v: np.ndarray) -> float:
    """Selection probability sigmoid(theta . v).

    Raises:
        LengthMismatch: If theta and v differ in length

    Examples:
        >>> expected_reward(np.array([np.log(3.0)]), np.array([1.0]))
        0.75
    """
    theta = np.asarray(theta, dtype=float)
    v = np.asarray(v, dtype=float)
    if theta.shape != v.shape:
        raise LengthMismatch(f"theta has length {theta.shape[0]} but context has {v.shape[0]}")
    return float(expit(theta @ v))


def expected_rewards(theta: np.ndarray, contexts: np.ndarray) -> np.ndarray:
    """Row-wise expected_reward for a matrix of contexts."""
    contexts = np.asarray(contexts, dtype=float)
    if contexts.shape[-1] != theta.shape[0]:
        raise LengthMismatch(
            f"theta has length {theta.shape[0]} but contexts have {contexts.shape[-1]} columns"
        )
    return expit(contexts @ theta)


def sample_params(post: GaussianPosterior, rng: np.random.Generator) -> np.ndarray:
    """Draw theta_j ~ N(m_j, v_j) independently for every coordinate."""
    return post.m + np.sqrt(post.v) * rng.standard_normal(post.d)


def penalized_objective(
    theta: np.ndarray, prior: GaussianPosterior, batch: FeedbackBatch
) -> tuple[float, np.ndarray]:
    """Penalized negative log-likelihood and its gradient.

    value = 1/2 sum_j (theta_j - m_j)^2 / v_j + sum_n log(1 + exp(-y_n theta . v_n)),
    with y_n = 2 r_n - 1.

    Raises:
        LengthMismatch: If theta, prior and batch disagree on the dimension
    """
    theta = np.asarray(theta, dtype=float)
    _check_dims(theta, prior, batch)
    diff = theta - prior.m
    margins = batch.labels * (batch.contexts @ theta)
    value = 0.5 * float(np.sum(diff * diff / prior.v)) + float(np.sum(np.logaddexp(0.0, -margins)))
    gradient = diff / prior.v + batch.contexts.T @ (-batch.labels * expit(-margins))
    return value, gradient


def update_posterior(
    prior: GaussianPosterior,
    batch: FeedbackBatch,
    *,
    tolerance: float = GRADIENT_TOLERANCE,
    max_iterations: int = MAX_NEWTON_ITERATIONS,
    start: np.ndarray | None = None,
) -> GaussianPosterior:
    """Laplace update: new mean minimizes the penalized objective, precision accumulates.

    The mean is found by damped Newton steps with Armijo backtracking, started at the prior
    mean unless another start is given; the objective is strictly convex, so every start
    reaches the same mean. Variances use p = sigmoid(m_new . v) and are floored at 1e-10
    (or at the prior variance if that is already smaller).

    Args:
        prior: Current posterior, used as the prior for this batch
        batch: The round's feedback
        tolerance: Infinity-norm gradient tolerance at the returned mean
        max_iterations: Newton iteration cap
        start: Newton starting point, the prior mean when omitted

    Returns:
        The updated posterior; the prior itself when the batch is empty

    Raises:
        SolverFailure: If the tolerance is not met within max_iterations
    """
    if len(batch) == 0:
        return prior
    theta = prior.m.copy() if start is None else np.array(start, dtype=float)
    _check_dims(theta, prior, batch)

    X = batch.contexts
    value, gradient = penalized_objective(theta, prior, batch)
    grad_norm = float(np.max(np.abs(gradient)))
    iteration = 0
    while grad_norm > tolerance:
        if iteration == max_iterations:
            raise SolverFailure(
                f"posterior mean did not converge in {max_iterations} Newton iterations",
                gradient_norm=grad_norm,
            )
        iteration += 1
        p = expit(X @ theta)
        hessian = np.diag(prior.precision) + X.T @ ((p * (1.0 - p))[:, None] * X)
        step = linalg.solve(hessian, -gradient, assume_a="pos")
        theta, value, gradient = _backtrack(theta, value, gradient, step, prior, batch)
        grad_norm = float(np.max(np.abs(gradient)))

    logger.debug("Newton converged in %d iterations (|g| = %.2e)", iteration, grad_norm)

    p = expit(X @ theta)
    precision = prior.precision + (X * X).T @ (p * (1.0 - p))
    variance = np.maximum(1.0 / precision, np.minimum(prior.v, VARIANCE_FLOOR))
    return GaussianPosterior(theta, variance)


def fit_logistic(
    contexts: np.ndarray, rewards: np.ndarray, prior_variance: float = 100.0
) -> GaussianPosterior:
    """Regularized logistic MLE: one update from a wide zero-mean prior."""
    batch = FeedbackBatch(contexts, rewards)
    return update_posterior(GaussianPosterior.standard(batch.dim, prior_variance), batch)


def _backtrack(
    theta: np.ndarray,
    value: float,
    gradient: np.ndarray,
    step: np.ndarray,
    prior: GaussianPosterior,
    batch: FeedbackBatch,
) -> tuple[np.ndarray, float, np.ndarray]:
    slope = float(gradient @ step)
    grad_norm = float(np.max(np.abs(gradient)))
    t = 1.0
    for _ in range(MAX_HALVINGS):
        candidate = theta + t * step
        new_value, new_gradient = penalized_objective(candidate, prior, batch)
        if new_value <= value + ARMIJO_C * t * slope:
            return candidate, new_value, new_gradient
        # near the optimum the decrease is below float resolution of the objective
        flat = new_value <= value + 1e-9 * (1.0 + abs(value))
        if t == 1.0 and flat and float(np.max(np.abs(new_gradient))) < grad_norm:
            return candidate, new_value, new_gradient
        t *= 0.5
    return theta, value, gradient


def _check_dims(theta: np.ndarray, prior: GaussianPosterior, batch: FeedbackBatch) -> None:
    if theta.shape != (prior.d,):
        raise LengthMismatch(f"theta has length {theta.shape[0]} but prior has {prior.d}")
    if batch.dim != prior.d:
        raise LengthMismatch(f"batch contexts have length {batch.dim} but prior has {prior.d}")
