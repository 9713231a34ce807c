"""Context construction: user contexts x_it, item features z_k and v_itk = [1, x_it, z_k]."""

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd

from bandit_rex.domain import (
    DIMENSIONS,
    Catalog,
    ChallengeRecord,
    SelectionEvent,
    UserProfile,
    WeighIn,
    encode_challenge_meta,
)
from bandit_rex.errors import (
    DimensionMismatch,
    DuplicateKey,
    MissingDataFile,
    MissingEmbedding,
    ParseError,
)

logger = logging.getLogger(__name__)

USER_CONTEXT_DIM = 12
ATTRIBUTE_CONTEXT_DIM = 6
ITEM_META_DIM = 11
TRAILING_WEEKS = 4
EWMA_LAMBDA = 0.5
AGE_SCALE = 100.0
WEIGHT_SCALE = 150.0
MEMBERSHIP_CAP_WEEKS = 520
RECENCY_HORIZON_WEEKS = 16
LOG_COUNT_SCALE = 10.0
# index of sel_rate_weightloss_4w in the user context; diet and exercise follow
SELECTION_RATE_START = 8

UserFeatureMode = Literal["behavioral", "attributes", "embedding"]
ItemFeatureMode = Literal["meta", "embedding"]


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Fixed-length vectors keyed by (entity id, week or None)."""

    dim: int
    rows: Mapping[tuple[str, int | None], np.ndarray]

    def __post_init__(self):
        for key, vector in self.rows.items():
            if len(vector) != self.dim:
                raise DimensionMismatch(
                    f"embedding for {key!r} has length {len(vector)}, expected {self.dim}"
                )

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, key: object) -> bool:
        return key in self.rows

    def get(self, entity_id: str, week: int | None = None) -> np.ndarray:
        """Row for (entity_id, week), falling back to the week-less row.

        Raises:
            MissingEmbedding: If neither key is present
        """
        for key in ((entity_id, week), (entity_id, None)):
            if key in self.rows:
                return self.rows[key]
        raise MissingEmbedding(f"no embedding for {entity_id!r} (week {week})")


@dataclass
class UserHistory:
    """Weigh-ins and selections observed for one user so far."""

    weighins: list[WeighIn] = field(default_factory=list)
    selections: list[SelectionEvent] = field(default_factory=list)


def build_user_context(
    profile: UserProfile,
    weighins: Sequence[WeighIn],
    selections: Sequence[SelectionEvent],
    catalog: Catalog,
    week: int,
) -> np.ndarray:
    """Build the 12-coordinate user context for a user at the start of a week.

    Only events strictly before `week` are used. Trailing-window statistics cover
    weeks [week - 4, week - 1].

    Args:
        profile: Static user attributes
        weighins: The user's weigh-ins (any order)
        selections: The user's challenge selections (any order)
        catalog: Challenge catalog for dimension lookups
        week: Current week (>= 1)

    Returns:
        [gender, age, initial_weight, membership, ewma_weight_delta, weighin_rate_4w,
        friends, posts, sel_rate_weightloss_4w, sel_rate_diet_4w, sel_rate_exercise_4w,
        recency]; every coordinate but ewma_weight_delta lies in [0, 1]
    """
    window_start = week - TRAILING_WEEKS
    past_weighins = sorted((w for w in weighins if w.week < week), key=lambda w: w.week)
    past_selections = [s for s in selections if s.week < week]

    weighin_weeks = {w.week for w in past_weighins if w.week >= window_start}
    type_counts = np.zeros(len(DIMENSIONS))
    for selection in past_selections:
        if selection.week >= window_start:
            type_counts += catalog.mask(selection.challenge_id).bits()

    if past_selections:
        weeks_since = week - max(s.week for s in past_selections)
        recency = min(weeks_since / RECENCY_HORIZON_WEEKS, 1.0)
    else:
        recency = 1.0

    return np.array(
        [
            float(profile.gender),
            _unit(profile.age / AGE_SCALE),
            _unit(profile.initial_weight / WEIGHT_SCALE),
            min(profile.membership_weeks, MEMBERSHIP_CAP_WEEKS) / MEMBERSHIP_CAP_WEEKS,
            ewma_weight_delta(past_weighins),
            len(weighin_weeks) / TRAILING_WEEKS,
            _unit(math.log1p(profile.friends) / LOG_COUNT_SCALE),
            _unit(math.log1p(profile.posts) / LOG_COUNT_SCALE),
            *np.minimum(type_counts / TRAILING_WEEKS, 1.0),
            recency,
        ]
    )


def user_attribute_context(profile: UserProfile) -> np.ndarray:
    """Static-profile part of the user context (no behavioral history)."""
    return np.array(
        [
            float(profile.gender),
            _unit(profile.age / AGE_SCALE),
            _unit(profile.initial_weight / WEIGHT_SCALE),
            min(profile.membership_weeks, MEMBERSHIP_CAP_WEEKS) / MEMBERSHIP_CAP_WEEKS,
            _unit(math.log1p(profile.friends) / LOG_COUNT_SCALE),
            _unit(math.log1p(profile.posts) / LOG_COUNT_SCALE),
        ]
    )


def ewma_weight_delta(weighins: Sequence[WeighIn]) -> float:
    """EWMA (lambda 0.5) of successive weight changes, seeded with the first change.

    Examples:
        Weights 80, 79, 79.5 give changes -1.0, +0.5 and 0.5 * 0.5 + 0.5 * -1.0 = -0.25.
    """
    if len(weighins) < 2:
        return 0.0
    weights = [w.weight for w in weighins]
    deltas = np.diff(weights)
    smoothed = float(deltas[0])
    for delta in deltas[1:]:
        smoothed = EWMA_LAMBDA * float(delta) + (1.0 - EWMA_LAMBDA) * smoothed
    return smoothed


def build_item_features(
    challenge: ChallengeRecord, table: EmbeddingTable | None = None
) -> np.ndarray:
    """Item features: an embedding row when a table is given, else the meta encoding.

    Raises:
        MissingEmbedding: If a table is given but has no row for the challenge
    """
    if table is None:
        return encode_challenge_meta(challenge.meta)
    if (challenge.challenge_id, None) not in table:
        raise MissingEmbedding(f"no embedding for challenge {challenge.challenge_id!r}")
    return table.get(challenge.challenge_id)


def concat_context(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Context vector [1, x..., z...] of length 1 + |x| + |z|."""
    return np.concatenate(([1.0], np.asarray(x, dtype=float), np.asarray(z, dtype=float)))


def context_matrix(x: np.ndarray, item_features: np.ndarray) -> np.ndarray:
    """Row-wise concat_context of one user context against every item row."""
    n = item_features.shape[0]
    return np.hstack(
        [np.ones((n, 1)), np.tile(np.asarray(x, dtype=float), (n, 1)), item_features]
    )


def load_embeddings(path: str | Path, expected_dim: int | None = None) -> EmbeddingTable:
    """Load an embeddings CSV.

    User files have columns user_id,week,e_0..e_{d-1}; challenge files have
    challenge_id,e_0..e_{d-1}. An empty week cell keys the row by id alone. Without
    expected_dim the dimension is the number of e_* columns.

    Raises:
        DimensionMismatch: If the file's vectors are not expected_dim long
        MissingDataFile: If the file does not exist
        DuplicateKey: If an (id, week) key repeats
        ParseError: If the file is not a well-formed embeddings CSV
    """
    if not Path(path).is_file():
        raise MissingDataFile(f"missing embeddings file: {path}")
    try:
        frame = pd.read_csv(path, dtype={"user_id": str, "challenge_id": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"cannot parse embeddings file {path}: {e}") from e

    id_column = next((c for c in ("user_id", "challenge_id") if c in frame.columns), None)
    if id_column is None:
        raise ParseError(f"{path}: expected a user_id or challenge_id column")
    value_columns = [c for c in frame.columns if c.startswith("e_")]
    if not value_columns:
        raise ParseError(f"{path}: no e_* embedding columns")
    if expected_dim is None:
        expected_dim = len(value_columns)
    if len(value_columns) != expected_dim:
        raise DimensionMismatch(
            f"{path}: found {len(value_columns)} embedding columns, expected {expected_dim}"
        )

    try:
        values = frame[value_columns].astype(float).to_numpy()
    except ValueError as e:
        raise ParseError(f"{path}: non-numeric embedding value: {e}") from e

    rows: dict[tuple[str, int | None], np.ndarray] = {}
    weeks = frame["week"] if "week" in frame.columns else pd.Series([None] * len(frame))
    for position, (entity_id, week) in enumerate(zip(frame[id_column], weeks, strict=True)):
        vector = values[position]
        if np.isnan(vector).any():
            raise DimensionMismatch(
                f"{path}: row {position + 1} has fewer than {expected_dim} values"
            )
        key = (str(entity_id), None if pd.isna(week) else int(week))
        if key in rows:
            raise DuplicateKey(f"{path}: duplicate key {key!r}")
        rows[key] = vector

    logger.debug("Loaded %d embeddings of dim %d from %s", len(rows), expected_dim, path)
    return EmbeddingTable(dim=expected_dim, rows=rows)


class FeatureBuilder:
    """A policy's view of users and items (hand-crafted features or embedding tables)."""

    def __init__(
        self,
        catalog: Catalog,
        user_mode: UserFeatureMode = "behavioral",
        item_mode: ItemFeatureMode = "meta",
        user_table: EmbeddingTable | None = None,
        item_table: EmbeddingTable | None = None,
    ):
        if user_mode == "embedding" and user_table is None:
            raise ValueError("user_mode 'embedding' requires a user embedding table")
        if item_mode == "embedding" and item_table is None:
            raise ValueError("item_mode 'embedding' requires an item embedding table")
        self.catalog = catalog
        self.user_mode = user_mode
        self.item_mode = item_mode
        self.user_table = user_table
        self.item_table = item_table
        table = item_table if item_mode == "embedding" else None
        self._item_rows = {
            challenge_id: build_item_features(catalog[challenge_id], table)
            for challenge_id in catalog
        }

    @property
    def user_dim(self) -> int:
        if self.user_mode == "behavioral":
            return USER_CONTEXT_DIM
        if self.user_mode == "attributes":
            return ATTRIBUTE_CONTEXT_DIM
        return self.user_table.dim

    @property
    def item_dim(self) -> int:
        return self.item_table.dim if self.item_mode == "embedding" else ITEM_META_DIM

    @property
    def context_dim(self) -> int:
        return 1 + self.user_dim + self.item_dim

    def user_context(self, profile: UserProfile, history: UserHistory, week: int) -> np.ndarray:
        if self.user_mode == "behavioral":
            return build_user_context(
                profile, history.weighins, history.selections, self.catalog, week
            )
        if self.user_mode == "attributes":
            return user_attribute_context(profile)
        return self.user_table.get(profile.user_id, week)

    def item_features(self, challenge_id: str) -> np.ndarray:
        return self._item_rows[challenge_id]

    def item_matrix(self, challenge_ids: Iterable[str]) -> np.ndarray:
        rows = [self._item_rows[c] for c in challenge_ids]
        if not rows:
            return np.empty((0, self.item_dim))
        return np.vstack(rows)


def _unit(value: float) -> float:
    return min(max(value, 0.0), 1.0)
