"""Tests for selector module."""

import logging
import time
from dataclasses import replace

import numpy as np
import pytest

from bandit_rex.domain import DIMENSIONS, DimMask
from bandit_rex.errors import DuplicateKey, EmptyCandidates, TooManyCandidates
from bandit_rex.selector import (
    ScoredCandidate,
    SelectionProblem,
    brute_force_topk,
    objective,
    solve_constrained_topk,
    top_k,
)


def coverage(problem: SelectionProblem, selected) -> DimMask:
    masks = {c.challenge_id: c.mask for c in problem.candidates}
    covered = DimMask.NONE
    for challenge_id in selected:
        covered |= masks[challenge_id]
    return covered


def random_problem(rng: np.random.Generator) -> SelectionProblem:
    n = int(rng.integers(1, 13))
    K = int(rng.integers(1, 5))
    candidates = tuple(
        ScoredCandidate(f"c{j:02d}", float(rng.random()), DimMask(int(rng.integers(0, 8))))
        for j in range(n)
    )
    required = DimMask.NONE
    for flag in rng.permutation(len(DIMENSIONS))[: int(rng.integers(0, min(K, 3) + 1))]:
        required |= DIMENSIONS[flag]
    return SelectionProblem(candidates, K, required)


class TestSolveConstrainedTopK:
    """Test suite for solve_constrained_topk function."""

    def test_matches_brute_force_on_random_instances(self):
        """Test that the solver's objective equals exhaustive search on 500 instances."""
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        for _ in range(500):
            problem = random_problem(rng)
            fast = solve_constrained_topk(problem)
            slow = brute_force_topk(problem)
            assert objective(problem, fast) == objective(problem, slow)
            required = problem.retained_required()
            assert coverage(problem, fast) & required == required
            assert len(fast) <= problem.K
        assert time.perf_counter() - start < 5.0

    def test_diversity_beats_pure_top_k(self):
        """Test that coverage forces a lower-scored item of a missing dimension."""
        problem = SelectionProblem(
            (
                ScoredCandidate("a", 0.9, DimMask.DIET),
                ScoredCandidate("b", 0.8, DimMask.DIET),
                ScoredCandidate("c", 0.7, DimMask.DIET),
                ScoredCandidate("d", 0.2, DimMask.WEIGHT_LOSS),
                ScoredCandidate("e", 0.1, DimMask.EXERCISE),
            ),
            K=3,
        )
        assert solve_constrained_topk(problem) == frozenset({"a", "d", "e"})

    def test_multi_dimension_item_covers_two(self):
        """Test that one item carrying two dimensions frees a slot."""
        problem = SelectionProblem(
            (
                ScoredCandidate("a", 0.9, DimMask.DIET),
                ScoredCandidate("b", 0.8, DimMask.DIET),
                ScoredCandidate("c", 0.3, DimMask.WEIGHT_LOSS | DimMask.EXERCISE),
                ScoredCandidate("d", 0.2, DimMask.WEIGHT_LOSS),
                ScoredCandidate("e", 0.2, DimMask.EXERCISE),
            ),
            K=3,
        )
        assert solve_constrained_topk(problem) == frozenset({"a", "b", "c"})

    def test_returns_exactly_k_with_positive_scores(self):
        """Test that K items are returned when enough candidates exist."""
        rng = np.random.default_rng(1)
        candidates = tuple(
            ScoredCandidate(f"c{j}", 0.01 + 0.9 * float(rng.random()), DIMENSIONS[j % 3])
            for j in range(10)
        )
        assert len(solve_constrained_topk(SelectionProblem(candidates, 4))) == 4

    def test_large_pool_is_fast_and_covering(self):
        """Test that 200 candidates with K = 10 solve quickly and cover every dimension."""
        rng = np.random.default_rng(3)
        candidates = tuple(
            ScoredCandidate(f"c{j:03d}", float(rng.random()), DimMask(int(rng.integers(1, 8))))
            for j in range(200)
        )
        problem = SelectionProblem(candidates, 10)
        start = time.perf_counter()
        chosen = solve_constrained_topk(problem)
        assert time.perf_counter() - start < 1.0
        assert len(chosen) == 10
        assert coverage(problem, chosen) == DimMask.ALL

    def test_raising_a_score_never_lowers_the_optimum(self):
        """Test that increasing one candidate's score keeps or raises the optimal value."""
        rng = np.random.default_rng(77)
        for _ in range(300):
            problem = random_problem(rng)
            before = objective(problem, solve_constrained_topk(problem))
            j = int(rng.integers(len(problem.candidates)))
            candidates = list(problem.candidates)
            target = candidates[j]
            candidates[j] = replace(target, score=float(rng.uniform(target.score, 1.0)))
            raised = SelectionProblem(tuple(candidates), problem.K, problem.required)
            assert objective(raised, solve_constrained_topk(raised)) >= before - 1e-12

    def test_unconstrained_is_top_k_with_id_ties(self):
        """Test that no required dimension reduces to top-K with ties broken by id."""
        rng = np.random.default_rng(78)
        for _ in range(300):
            n = int(rng.integers(1, 13))
            K = int(rng.integers(1, 6))
            ids = [f"c{j:02d}" for j in range(n)]
            scores = [float(rng.integers(1, 5)) / 4 for _ in range(n)]
            masks = [DimMask(int(rng.integers(0, 8))) for _ in range(n)]
            problem = SelectionProblem(
                tuple(
                    ScoredCandidate(c, s, m) for c, s, m in zip(ids, scores, masks, strict=True)
                ),
                K,
                DimMask.NONE,
            )
            assert solve_constrained_topk(problem) == frozenset(top_k(ids, scores, K))

    def test_ties_favor_smaller_ids(self):
        """Test that equal scores resolve to the smaller challenge id."""
        problem = SelectionProblem(
            (
                ScoredCandidate("b", 0.5, DimMask.DIET),
                ScoredCandidate("a", 0.5, DimMask.DIET),
                ScoredCandidate("c", 0.5, DimMask.WEIGHT_LOSS),
                ScoredCandidate("d", 0.5, DimMask.EXERCISE),
            ),
            K=3,
        )
        assert solve_constrained_topk(problem) == frozenset({"a", "c", "d"})

    def test_uncoverable_dimension_is_relaxed(self, caplog):
        """Test that a dimension no candidate covers is dropped with a warning."""
        problem = SelectionProblem(
            (
                ScoredCandidate("a", 0.9, DimMask.DIET),
                ScoredCandidate("b", 0.1, DimMask.WEIGHT_LOSS),
                ScoredCandidate("c", 0.8, DimMask.DIET),
            ),
            K=3,
        )
        assert problem.required == DimMask.ALL
        with caplog.at_level(logging.WARNING, logger="bandit_rex.selector"):
            chosen = solve_constrained_topk(problem)
        assert chosen == frozenset({"a", "b", "c"})
        assert "exercise" in caplog.text


class TestSelectionProblem:
    """Test suite for SelectionProblem validation."""

    def test_empty_candidates(self):
        """Test that no candidates raise EmptyCandidates."""
        with pytest.raises(EmptyCandidates):
            SelectionProblem((), 3)

    def test_k_too_small_for_required(self):
        """Test that K below the number of required dimensions is rejected."""
        with pytest.raises(ValueError, match="cannot cover"):
            SelectionProblem((ScoredCandidate("a", 0.5, DimMask.DIET),), 2)

    def test_duplicate_candidate(self):
        """Test that a repeated id raises DuplicateKey."""
        candidate = ScoredCandidate("a", 0.5, DimMask.DIET)
        with pytest.raises(DuplicateKey):
            SelectionProblem((candidate, candidate), 3)

    def test_score_outside_unit_interval(self):
        """Test that scores must lie in [0, 1]."""
        with pytest.raises(ValueError, match="score"):
            ScoredCandidate("a", 1.5, DimMask.DIET)

    def test_brute_force_limit(self):
        """Test that exhaustive search refuses more than 20 candidates."""
        candidates = tuple(ScoredCandidate(f"c{j}", 0.5, DimMask.DIET) for j in range(21))
        with pytest.raises(TooManyCandidates):
            brute_force_topk(SelectionProblem(candidates, 3, DimMask.NONE))


class TestTopK:
    """Test suite for top_k function."""

    def test_descending_scores_then_ids(self):
        """Test that ties in score are ordered by ascending id."""
        assert top_k(["b", "a", "c"], [0.5, 0.5, 0.9], 2) == ("c", "a")

    def test_k_larger_than_pool(self):
        """Test that asking for more than available returns everything."""
        assert top_k(["a"], [0.1], 5) == ("a",)
