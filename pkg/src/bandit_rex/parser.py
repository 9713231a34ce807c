"""Functions for parsing environment data directories (CSV tables and ground_truth.json)."""

import json
import logging
from collections import defaultdict
from collections.abc import Callable
from pathlib import Path
from typing import Any, TypedDict

import numpy as np
import pandas as pd

from bandit_rex.domain import (
    DIMENSION_NAMES,
    DIMENSIONS,
    Catalog,
    ChallengeMeta,
    ChallengeRecord,
    SelectionEvent,
    UserProfile,
    WeighIn,
)
from bandit_rex.errors import DuplicateKey, MissingDataFile, ParseError
from bandit_rex.evaluation import InteractionLog, InteractionRecord
from bandit_rex.features import build_user_context
from bandit_rex.simdata import (
    CHALLENGE_COLUMNS,
    INTERACTION_COLUMNS,
    SELECTION_COLUMNS,
    USER_COLUMNS,
    WEIGHIN_COLUMNS,
    EnvConfig,
    SyntheticEnvironment,
    canonical_context,
)

logger = logging.getLogger(__name__)


class InteractionRow(TypedDict):
    """One logged offer as stored in interactions.csv."""

    user_id: str
    week: int
    challenge_id: str
    reward: int
    propensity: float


class GroundTruth(TypedDict):
    """Structure of ground_truth.json."""

    zeta: list[float]
    omega: list[float]
    seed: int
    config: dict[str, Any]
    preferred_dimensions: dict[str, str]


class EnvironmentData(TypedDict):
    """Everything read from a data directory."""

    users: list[UserProfile]
    catalog: Catalog
    weighins: list[WeighIn]
    selections: list[SelectionEvent]
    interactions: list[InteractionRow]
    ground_truth: GroundTruth | None


def read_table(path: str | Path, columns: tuple[str, ...]) -> pd.DataFrame:
    """Read a CSV as strings, checking that the required header columns exist.

    Cells are not NA-converted, so the literal intensity level "NA" survives and empty
    cells read as "".

    Raises:
        MissingDataFile: If the file does not exist
        ParseError: If the file cannot be parsed or lacks a required column
    """
    path = Path(path)
    if not path.is_file():
        raise MissingDataFile(f"missing data file: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"cannot parse {path}: {e}") from e
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing column(s) {', '.join(missing)}")
    return frame


def parse_users(path: str | Path) -> list[UserProfile]:
    """Parse users.csv into profiles.

    Raises:
        DuplicateKey: If a user_id repeats
    """
    frame = read_table(path, USER_COLUMNS)
    users = _rows(path, frame, _user_from_row)
    ids = [u.user_id for u in users]
    if len(set(ids)) != len(ids):
        raise DuplicateKey(f"{path}: duplicate user_id")
    return users


def parse_challenges(path: str | Path) -> Catalog:
    """Parse challenges.csv into a catalog; intensities are NA, L, M or H."""
    frame = read_table(path, CHALLENGE_COLUMNS)
    return Catalog.from_records(_rows(path, frame, _challenge_from_row))


def parse_weighins(path: str | Path) -> list[WeighIn]:
    frame = read_table(path, WEIGHIN_COLUMNS)
    return _rows(path, frame, _weighin_from_row)


def parse_selections(path: str | Path) -> list[SelectionEvent]:
    """Parse selections.csv; an empty propensity cell means the propensity is unknown."""
    frame = read_table(path, SELECTION_COLUMNS)
    return _rows(path, frame, _selection_from_row)


def parse_interactions(path: str | Path) -> list[InteractionRow]:
    frame = read_table(path, INTERACTION_COLUMNS)
    return _rows(path, frame, _interaction_from_row)


def parse_ground_truth(path: str | Path) -> GroundTruth:
    """Parse ground_truth.json.

    Raises:
        MissingDataFile: If the file does not exist
        ParseError: If it is not valid JSON or lacks zeta/omega
    """
    path = Path(path)
    if not path.is_file():
        raise MissingDataFile(f"missing data file: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    if "zeta" not in document or "omega" not in document:
        raise ParseError(f"{path}: ground truth needs 'zeta' and 'omega'")
    return GroundTruth(
        zeta=[float(x) for x in document["zeta"]],
        omega=[float(x) for x in document["omega"]],
        seed=int(document.get("seed", 0)),
        config=dict(document.get("config", {})),
        preferred_dimensions=dict(document.get("preferred_dimensions", {})),
    )


def load_data_dir(directory: str | Path) -> EnvironmentData:
    """Read every table of a data directory.

    interactions.csv and ground_truth.json are optional; the four domain tables are not.
    """
    directory = Path(directory)
    interactions_path = directory / "interactions.csv"
    truth_path = directory / "ground_truth.json"
    return EnvironmentData(
        users=parse_users(directory / "users.csv"),
        catalog=parse_challenges(directory / "challenges.csv"),
        weighins=parse_weighins(directory / "weighins.csv"),
        selections=parse_selections(directory / "selections.csv"),
        interactions=parse_interactions(interactions_path) if interactions_path.is_file() else [],
        ground_truth=parse_ground_truth(truth_path) if truth_path.is_file() else None,
    )


def load_environment(directory: str | Path) -> tuple[SyntheticEnvironment, InteractionLog]:
    """Rebuild a generated environment and its interaction log from a data directory.

    Record contexts are recomputed from the logged histories, so they match the ones the
    generator saw.

    Raises:
        MissingDataFile: If a required table or ground_truth.json is missing
    """
    directory = Path(directory)
    data = load_data_dir(directory)
    truth = data["ground_truth"]
    if truth is None:
        raise MissingDataFile(f"missing data file: {directory / 'ground_truth.json'}")

    if truth["config"]:
        config = EnvConfig.from_dict(truth["config"])
    else:
        config = EnvConfig(seed=truth["seed"])
    by_name = dict(zip(DIMENSION_NAMES, DIMENSIONS, strict=True))
    try:
        preferred = {u: by_name[name] for u, name in truth["preferred_dimensions"].items()}
    except KeyError as e:
        raise ParseError(f"unknown preferred dimension {e}") from e
    env = SyntheticEnvironment(
        config=config,
        users=tuple(data["users"]),
        catalog=data["catalog"],
        zeta=np.array(truth["zeta"]),
        omega=np.array(truth["omega"]),
        preferred=preferred,
    )
    records = rebuild_records(env, data["interactions"], data["weighins"])
    log = InteractionLog(records, tuple(data["weighins"]))
    logger.info(
        "Loaded %d users, %d challenges, %d interactions from %s",
        len(env.users),
        len(env.catalog),
        len(log),
        directory,
    )
    return env, log


def rebuild_records(
    env: SyntheticEnvironment, rows: list[InteractionRow], weighins: list[WeighIn]
) -> tuple[InteractionRecord, ...]:
    """Attach canonical contexts to interaction rows using only each user's earlier history."""
    profiles = {u.user_id: u for u in env.users}
    user_weighins: dict[str, list[WeighIn]] = defaultdict(list)
    for weighin in weighins:
        user_weighins[weighin.user_id].append(weighin)
    user_selections: dict[str, list[SelectionEvent]] = defaultdict(list)
    for row in rows:
        if row["reward"] == 1:
            user_selections[row["user_id"]].append(
                SelectionEvent(row["user_id"], row["week"], row["challenge_id"], row["propensity"])
            )

    contexts: dict[tuple[str, int], np.ndarray] = {}
    records = []
    for row in rows:
        key = (row["user_id"], row["week"])
        if key not in contexts:
            if row["user_id"] not in profiles:
                raise ParseError(f"interaction for unknown user {row['user_id']!r}")
            contexts[key] = build_user_context(
                profiles[row["user_id"]],
                user_weighins[row["user_id"]],
                user_selections[row["user_id"]],
                env.catalog,
                row["week"],
            )
        if row["challenge_id"] not in env.catalog:
            raise ParseError(f"interaction for unknown challenge {row['challenge_id']!r}")
        v = canonical_context(contexts[key], env.catalog[row["challenge_id"]])
        records.append(
            InteractionRecord(
                row["user_id"],
                row["week"],
                row["challenge_id"],
                v,
                row["reward"],
                row["propensity"],
            )
        )
    return tuple(records)


def _user_from_row(row: dict[str, str]) -> UserProfile:
    return UserProfile(
        user_id=row["user_id"],
        gender=int(row["gender"]),
        age=float(row["age"]),
        initial_weight=float(row["initial_weight"]),
        membership_weeks=int(row["membership_weeks"]),
        friends=int(row["friends"]),
        posts=int(row["posts"]),
    )


def _weighin_from_row(row: dict[str, str]) -> WeighIn:
    return WeighIn(row["user_id"], int(row["week"]), float(row["weight"]))


def _selection_from_row(row: dict[str, str]) -> SelectionEvent:
    propensity = row["propensity"].strip()
    return SelectionEvent(
        row["user_id"],
        int(row["week"]),
        row["challenge_id"],
        float(propensity) if propensity else None,
    )


def _interaction_from_row(row: dict[str, str]) -> InteractionRow:
    reward = int(row["reward"])
    if reward not in (0, 1):
        raise ValueError(f"reward must be 0 or 1, got {reward}")
    return InteractionRow(
        user_id=row["user_id"],
        week=int(row["week"]),
        challenge_id=row["challenge_id"],
        reward=reward,
        propensity=float(row["propensity"]),
    )


def _challenge_from_row(row: dict[str, str]) -> ChallengeRecord:
    meta = ChallengeMeta(
        specific=int(row["specific"]),
        measurable=int(row["measurable"]),
        diet=int(row["diet"]),
        intensity_diet=row["intensity_diet"],
        activity=int(row["activity"]),
        intensity_activity=row["intensity_activity"],
        weight_loss=int(row["weight_loss"]),
        intensity_weight_loss=row["intensity_weight_loss"],
        motivational=int(row["motivational"]),
        self_monitoring=int(row["self_monitoring"]),
        duration_weeks=int(row["duration_weeks"]),
    )
    return ChallengeRecord(
        challenge_id=row["challenge_id"],
        title=row["title"],
        description=row["description"],
        meta=meta,
        start_week=int(row["start_week"]),
        end_week=int(row["end_week"]),
    )


def _rows[T](
    path: str | Path, frame: pd.DataFrame, build: Callable[[dict[str, str]], T]
) -> list[T]:
    items = []
    for line, row in enumerate(frame.to_dict(orient="records"), start=2):
        try:
            items.append(build(row))
        except DuplicateKey:
            raise
        except ValueError as e:
            raise ParseError(f"{path}:{line}: {e}") from e
    return items
