"""Exact top-K selection under at-least-one-per-dimension coverage constraints."""

import itertools
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from bandit_rex.domain import DIMENSION_NAMES, DIMENSIONS, NUM_DIMENSIONS, DimMask
from bandit_rex.errors import DuplicateKey, EmptyCandidates, TooManyCandidates

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 20
_COVERAGE_STATES = 1 << NUM_DIMENSIONS


@dataclass(frozen=True)
class ScoredCandidate:
    challenge_id: str
    score: float
    mask: DimMask

    def __post_init__(self):
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(
                f"candidate {self.challenge_id}: score must lie in [0, 1], got {self.score}"
            )
        object.__setattr__(self, "mask", DimMask(self.mask))


@dataclass(frozen=True)
class SelectionProblem:
    """Choose at most K candidates, covering every required dimension at least once."""

    candidates: tuple[ScoredCandidate, ...]
    K: int
    required: DimMask = DimMask.ALL

    def __post_init__(self):
        candidates = tuple(self.candidates)
        if not candidates:
            raise EmptyCandidates("selection problem has no candidates")
        if self.K < 1:
            raise ValueError(f"K must be positive, got {self.K}")
        required = DimMask(self.required)
        if self.K < required.bit_count():
            raise ValueError(f"K={self.K} cannot cover {required.bit_count()} required dimensions")
        ids = [c.challenge_id for c in candidates]
        if len(set(ids)) != len(ids):
            raise DuplicateKey("selection problem lists a candidate twice")
        ordered = tuple(sorted(candidates, key=lambda c: c.challenge_id))
        object.__setattr__(self, "candidates", ordered)
        object.__setattr__(self, "required", required)

    def retained_required(self) -> DimMask:
        """Required dimensions that at least one candidate covers.

        Dimensions with no covering candidate are dropped with a warning.
        """
        covered = DimMask.NONE
        for candidate in self.candidates:
            covered |= candidate.mask
        retained = self.required & covered
        for flag, name in zip(DIMENSIONS, DIMENSION_NAMES, strict=True):
            if self.required & flag and not retained & flag:
                logger.warning("No available candidate covers %s; relaxing its constraint", name)
        return DimMask(retained)


def objective(problem: SelectionProblem, selected: Iterable[str]) -> float:
    """Total score of a selected set (exactly rounded sum)."""
    scores = {c.challenge_id: c.score for c in problem.candidates}
    return math.fsum(scores[challenge_id] for challenge_id in selected)


def solve_constrained_topk(problem: SelectionProblem) -> frozenset[str]:
    """Exact maximizer by dynamic programming over (candidate, coverage mask, slots left).

    Candidates are visited in ascending id order and a tie between taking and skipping a
    candidate is resolved by taking it, so ties favour smaller ids.

    Args:
        problem: The selection problem

    Returns:
        The chosen challenge ids; exactly K of them when there are at least K candidates
        and every score is positive
    """
    required = int(problem.retained_required())
    candidates = problem.candidates
    n, K = len(candidates), problem.K
    states = np.arange(_COVERAGE_STATES)

    # best[i, c, r]: best score from candidates i.. with coverage c and r slots left
    best = np.full((n + 1, _COVERAGE_STATES, K + 1), -np.inf)
    best[n, (states & required) == required, :] = 0.0
    for i in range(n - 1, -1, -1):
        take = np.full((_COVERAGE_STATES, K + 1), -np.inf)
        take[:, 1:] = candidates[i].score + best[i + 1][states | int(candidates[i].mask), :-1]
        best[i] = np.maximum(best[i + 1], take)

    chosen: list[str] = []
    coverage, slots = 0, K
    for i, candidate in enumerate(candidates):
        if slots == 0:
            break
        skip_value = best[i + 1, coverage, slots]
        next_coverage = coverage | int(candidate.mask)
        take_value = candidate.score + best[i + 1, next_coverage, slots - 1]
        if take_value > -np.inf and take_value >= skip_value:
            chosen.append(candidate.challenge_id)
            coverage, slots = next_coverage, slots - 1
    return frozenset(chosen)


def brute_force_topk(problem: SelectionProblem) -> frozenset[str]:
    """Exhaustive maximizer over every subset of size at most K.

    Raises:
        TooManyCandidates: If there are more than 20 candidates
    """
    if len(problem.candidates) > BRUTE_FORCE_LIMIT:
        raise TooManyCandidates(
            f"{len(problem.candidates)} candidates exceeds the enumeration limit "
            f"of {BRUTE_FORCE_LIMIT}"
        )
    required = problem.retained_required()
    best_set: tuple[ScoredCandidate, ...] = ()
    best_value = -math.inf
    for size in range(min(problem.K, len(problem.candidates)) + 1):
        for subset in itertools.combinations(problem.candidates, size):
            coverage = DimMask.NONE
            for candidate in subset:
                coverage |= candidate.mask
            if coverage & required != required:
                continue
            value = math.fsum(c.score for c in subset)
            if value > best_value:
                best_set, best_value = subset, value
    return frozenset(c.challenge_id for c in best_set)


def top_k(
    challenge_ids: Sequence[str], scores: Sequence[float] | np.ndarray, K: int
) -> tuple[str, ...]:
    """Unconstrained top-K by descending score, ties by ascending id."""
    order = sorted(range(len(challenge_ids)), key=lambda j: (-float(scores[j]), challenge_ids[j]))
    return tuple(challenge_ids[j] for j in order[:K])
