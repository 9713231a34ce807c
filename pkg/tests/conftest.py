"""Test configuration and shared fixtures."""

import logging

import numpy as np
import pytest

from bandit_rex.domain import (
    Catalog,
    ChallengeMeta,
    ChallengeRecord,
    DimMask,
    Intensity,
    UserProfile,
)
from bandit_rex.simdata import EnvConfig, generate_environment


def make_meta(
    weight_loss: int = 0, diet: int = 0, activity: int = 0, duration: int = 4
) -> ChallengeMeta:
    """Challenge meta with the given dimension flags at medium intensity."""
    return ChallengeMeta(
        specific=1,
        measurable=1,
        diet=diet,
        intensity_diet=Intensity.M if diet else Intensity.NA,
        activity=activity,
        intensity_activity=Intensity.M if activity else Intensity.NA,
        weight_loss=weight_loss,
        intensity_weight_loss=Intensity.M if weight_loss else Intensity.NA,
        motivational=0,
        self_monitoring=1,
        duration_weeks=duration,
    )


def make_challenge(
    challenge_id: str, mask: DimMask, start_week: int = 1, end_week: int = 16
) -> ChallengeRecord:
    return ChallengeRecord(
        challenge_id=challenge_id,
        title=f"Challenge {challenge_id}",
        description="A test challenge.",
        meta=make_meta(
            weight_loss=int(bool(mask & DimMask.WEIGHT_LOSS)),
            diet=int(bool(mask & DimMask.DIET)),
            activity=int(bool(mask & DimMask.EXERCISE)),
        ),
        start_week=start_week,
        end_week=end_week,
    )


@pytest.fixture
def catalog():
    """Five challenges: one per dimension, one diet+exercise, one late starter."""
    return Catalog.from_records(
        [
            make_challenge("c1", DimMask.WEIGHT_LOSS),
            make_challenge("c2", DimMask.DIET),
            make_challenge("c3", DimMask.EXERCISE),
            make_challenge("c4", DimMask.DIET | DimMask.EXERCISE),
            make_challenge("c5", DimMask.DIET, start_week=5, end_week=8),
        ]
    )


@pytest.fixture
def profile():
    return UserProfile(
        user_id="u1",
        gender=1,
        age=40.0,
        initial_weight=90.0,
        membership_weeks=52,
        friends=3,
        posts=10,
    )


@pytest.fixture
def small_config():
    """A small environment that still covers every dimension each week."""
    return EnvConfig(
        n_users=12,
        n_challenges=24,
        horizon_weeks=6,
        weekly_pool=16,
        K=4,
        seed=3,
    )


@pytest.fixture
def small_env(small_config):
    return generate_environment(small_config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def package_logger():
    """Undo configure_logging so caplog sees package records in every test."""
    yield
    logger = logging.getLogger("bandit_rex")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.setLevel(logging.NOTSET)
    logger.propagate = True
