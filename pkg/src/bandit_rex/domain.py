"""Core domain types: users, challenges, feedback and the health-management dimensions."""

from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import IntFlag, StrEnum

import numpy as np

from bandit_rex.errors import DuplicateKey

DURATION_HORIZON_WEEKS = 16
META_FEATURE_NAMES = (
    "specific",
    "measurable",
    "diet",
    "intensity_diet",
    "activity",
    "intensity_activity",
    "weight_loss",
    "intensity_weight_loss",
    "motivational",
    "self_monitoring",
    "duration",
)
_BINARY_META_FIELDS = (
    "specific",
    "measurable",
    "diet",
    "activity",
    "weight_loss",
    "motivational",
    "self_monitoring",
)


class Intensity(StrEnum):
    """Ordinal intensity level of a challenge dimension."""

    NA = "NA"
    L = "L"
    M = "M"
    H = "H"

    @property
    def encoded(self) -> float:
        return _INTENSITY_ENCODING[self]


_INTENSITY_ENCODING = {
    Intensity.NA: 0.0,
    Intensity.L: 1.0 / 3.0,
    Intensity.M: 2.0 / 3.0,
    Intensity.H: 1.0,
}


class DimMask(IntFlag):
    """Membership of a challenge in the dimensions (weight_loss, diet, exercise)."""

    NONE = 0
    WEIGHT_LOSS = 1
    DIET = 2
    EXERCISE = 4
    ALL = WEIGHT_LOSS | DIET | EXERCISE

    def is_empty(self) -> bool:
        return self.value == 0

    def bits(self) -> np.ndarray:
        """Indicator vector in (weight_loss, diet, exercise) order."""
        return np.array([1.0 if self.value & flag.value else 0.0 for flag in DIMENSIONS])


DIMENSIONS = (DimMask.WEIGHT_LOSS, DimMask.DIET, DimMask.EXERCISE)
DIMENSION_NAMES = ("weight_loss", "diet", "exercise")
NUM_DIMENSIONS = len(DIMENSIONS)


@dataclass(frozen=True)
class ChallengeMeta:
    """SMART meta attributes of a challenge."""

    specific: int
    measurable: int
    diet: int
    intensity_diet: Intensity
    activity: int
    intensity_activity: Intensity
    weight_loss: int
    intensity_weight_loss: Intensity
    motivational: int
    self_monitoring: int
    duration_weeks: int

    def __post_init__(self):
        for name in _BINARY_META_FIELDS:
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")
        for flag, intensity in (
            ("diet", "intensity_diet"),
            ("activity", "intensity_activity"),
            ("weight_loss", "intensity_weight_loss"),
        ):
            level = Intensity(getattr(self, intensity))
            object.__setattr__(self, intensity, level)
            if (level is Intensity.NA) != (getattr(self, flag) == 0):
                raise ValueError(f"{intensity} must be NA if and only if {flag} is 0")
        if self.duration_weeks < 1:
            raise ValueError(f"duration_weeks must be at least 1, got {self.duration_weeks}")


@dataclass(frozen=True)
class ChallengeRecord:
    """A challenge offered on the platform during [start_week, end_week]."""

    challenge_id: str
    title: str
    description: str
    meta: ChallengeMeta
    start_week: int
    end_week: int

    def __post_init__(self):
        if self.start_week > self.end_week:
            raise ValueError(
                f"challenge {self.challenge_id}: start_week {self.start_week} "
                f"is after end_week {self.end_week}"
            )

    def is_available(self, week: int) -> bool:
        return self.start_week <= week <= self.end_week


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    gender: int
    age: float
    initial_weight: float
    membership_weeks: int
    friends: int
    posts: int

    def __post_init__(self):
        if self.gender not in (0, 1):
            raise ValueError(f"user {self.user_id}: gender must be 0 or 1")
        if self.age <= 0:
            raise ValueError(f"user {self.user_id}: age must be positive")
        if self.initial_weight <= 0:
            raise ValueError(f"user {self.user_id}: initial_weight must be positive")
        for name in ("membership_weeks", "friends", "posts"):
            if getattr(self, name) < 0:
                raise ValueError(f"user {self.user_id}: {name} must be non-negative")


@dataclass(frozen=True)
class WeighIn:
    user_id: str
    week: int
    weight: float

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError(f"user {self.user_id}: weight must be positive")


@dataclass(frozen=True)
class SelectionEvent:
    """A user choosing a challenge in a given week."""

    user_id: str
    week: int
    challenge_id: str
    propensity: float | None = None

    def __post_init__(self):
        if self.propensity is not None and not 0.0 < self.propensity <= 1.0:
            raise ValueError(f"propensity must lie in (0, 1], got {self.propensity}")


@dataclass(frozen=True)
class Catalog(Mapping[str, ChallengeRecord]):
    """Challenges keyed by id, iterated in ascending id order."""

    records: tuple[ChallengeRecord, ...]
    _by_id: dict[str, ChallengeRecord] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id: dict[str, ChallengeRecord] = {}
        for record in self.records:
            if record.challenge_id in by_id:
                raise DuplicateKey(f"duplicate challenge_id {record.challenge_id!r}")
            by_id[record.challenge_id] = record
        ordered = tuple(sorted(self.records, key=lambda r: r.challenge_id))
        object.__setattr__(self, "records", ordered)
        object.__setattr__(self, "_by_id", by_id)

    @classmethod
    def from_records(cls, records: Iterable[ChallengeRecord]) -> "Catalog":
        return cls(tuple(records))

    def __getitem__(self, challenge_id: str) -> ChallengeRecord:
        return self._by_id[challenge_id]

    def __iter__(self) -> Iterator[str]:
        return (record.challenge_id for record in self.records)

    def __len__(self) -> int:
        return len(self.records)

    def available(self, week: int) -> tuple[str, ...]:
        """Ids of challenges available in the given week (the set C_t)."""
        return tuple(r.challenge_id for r in self.records if r.is_available(week))

    def mask(self, challenge_id: str) -> DimMask:
        record = self._by_id.get(challenge_id)
        return DimMask.NONE if record is None else dimension_mask(record.meta)


def encode_challenge_meta(meta: ChallengeMeta) -> np.ndarray:
    """Encode meta attributes as an 11-vector with every coordinate in [0, 1].

    Intensities map NA/L/M/H to 0, 1/3, 2/3, 1; duration is clipped at the 16-week
    horizon and normalized by it.

    Examples:
        >>> meta = ChallengeMeta(0, 0, 1, Intensity.H, 0, Intensity.NA, 0, Intensity.NA, 0, 1, 4)
        >>> encode_challenge_meta(meta).tolist()
        [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.25]
    """
    return np.array(
        [
            float(meta.specific),
            float(meta.measurable),
            float(meta.diet),
            meta.intensity_diet.encoded,
            float(meta.activity),
            meta.intensity_activity.encoded,
            float(meta.weight_loss),
            meta.intensity_weight_loss.encoded,
            float(meta.motivational),
            float(meta.self_monitoring),
            min(meta.duration_weeks, DURATION_HORIZON_WEEKS) / DURATION_HORIZON_WEEKS,
        ]
    )


def dimension_mask(meta: ChallengeMeta) -> DimMask:
    """Dimensions a challenge covers; an empty mask never satisfies a coverage constraint."""
    mask = DimMask.NONE
    if meta.weight_loss:
        mask |= DimMask.WEIGHT_LOSS
    if meta.diet:
        mask |= DimMask.DIET
    if meta.activity:
        mask |= DimMask.EXERCISE
    return mask
