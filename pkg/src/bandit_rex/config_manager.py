"""Configuration manager for bandit-rex experiments."""

import copy
import inspect
import json
from collections.abc import Collection, Mapping
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, get_args

from bandit_rex.errors import ConfigError, InvalidConfig
from bandit_rex.evaluation import DEFAULT_DYNAMIC_USERS, PROPENSITY_FLOOR
from bandit_rex.features import ItemFeatureMode, UserFeatureMode
from bandit_rex.policies import POLICY_CLASSES, POLICY_KINDS, PRETRAIN_WEEKS, Policy, RewardTarget
from bandit_rex.simdata import EnvConfig, LoggingPolicy

DEFAULT_CONFIG_PATH = Path(__file__).with_name("config.json")

EVALUATORS = ("doubly_robust", "offline_precision", "omniscient")
ANALYSES = (
    "diversity_jsd",
    "user_improvement",
    "dynamic_users",
    "weight_outcome",
    "learning_curve",
)
TOP_LEVEL_KEYS = {"version", "environment", "policies", "evaluation", "output_dir"}
SIMULATOR_SOURCES = ("ground_truth", "fitted")
MIN_DIVERSE_K = 3


@dataclass(frozen=True)
class PolicySpec:
    """One configured policy.

    Only name and kind are required. diversity None means the kind's default (on for
    Thompson sampling, off otherwise). Embedding paths are needed only for the matching
    feature mode.
    """

    name: str
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    diversity: bool | None = None
    reward_target: RewardTarget = "selection"
    user_features: UserFeatureMode = "behavioral"
    item_features: ItemFeatureMode = "meta"
    user_embeddings: str | None = None
    item_embeddings: str | None = None


@dataclass(frozen=True)
class EvaluationSettings:
    """Which evaluators and analyses run, and how."""

    evaluators: tuple[str, ...] = EVALUATORS
    analyses: tuple[str, ...] = ANALYSES
    replications: int = 10
    train_weeks: int = PRETRAIN_WEEKS
    propensity_floor: float = PROPENSITY_FLOOR
    sigma_scale: float = 0.1
    simulator_source: str = "ground_truth"
    logging_policy: str = LoggingPolicy.UNIFORM.value
    logging_slate_size: int = 1
    dynamic_users_n: int = DEFAULT_DYNAMIC_USERS


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete experiment configuration."""

    version: str
    environment: EnvConfig
    policies: tuple[PolicySpec, ...]
    settings: EvaluationSettings
    output_dir: str = "results"

    @property
    def focal(self) -> PolicySpec:
        """The first configured policy, which comparisons are made against."""
        return self.policies[0]

    def with_overrides(
        self,
        seed: int | None = None,
        policy_names: Collection[str] | None = None,
        output_dir: str | None = None,
    ) -> "ExperimentConfig":
        """Apply command-line overrides.

        Raises:
            ConfigError: If a requested policy name is not configured
        """
        config = self
        if seed is not None:
            config = replace(config, environment=replace(config.environment, seed=seed))
        if policy_names is not None:
            known = {p.name for p in config.policies}
            unknown = sorted(set(policy_names) - known)
            if unknown:
                raise ConfigError(f"--policies names unknown policy {unknown[0]!r}")
            wanted = set(policy_names)
            if not wanted:
                raise ConfigError("--policies selects no policy")
            config = replace(config, policies=tuple(p for p in config.policies if p.name in wanted))
        if output_dir is not None:
            config = replace(config, output_dir=output_dir)
        return config

    def to_dict(self) -> dict[str, Any]:
        """The configuration as a plain JSON-ready document."""
        return {
            "version": self.version,
            "environment": self.environment.to_dict(),
            "policies": [{**asdict(p), "params": dict(p.params)} for p in self.policies],
            "evaluation": {
                **asdict(self.settings),
                "evaluators": list(self.settings.evaluators),
                "analyses": list(self.settings.analyses),
            },
            "output_dir": self.output_dir,
        }


class ConfigManager:
    """Manages experiment configuration read from a JSON document."""

    def __init__(self, path: str | Path | None = None):
        """Initialize the config manager and load configuration.

        Args:
            path: Experiment document (default: the packaged config.json)
        """
        self._path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
        self._config: ExperimentConfig = self._load_config()

    @property
    def path(self) -> Path:
        return self._path

    def get_config(self) -> ExperimentConfig:
        """Get complete configuration.

        Returns:
            Complete configuration object.
        """
        return self._config

    def get_environment(self) -> EnvConfig:
        """Get the synthetic environment configuration."""
        return self._config.environment

    def get_policies(self) -> tuple[PolicySpec, ...]:
        """Get the configured policies, focal policy first."""
        return self._config.policies

    def get_settings(self) -> EvaluationSettings:
        """Get evaluation settings."""
        return self._config.settings

    def reload_config(self) -> None:
        """Reload configuration from the document on disk."""
        self._config = self._load_config()

    def _load_config(self) -> ExperimentConfig:
        """Load configuration from the JSON document.

        Returns:
            Configuration object constructed from the document.

        Raises:
            ConfigError: If the document is missing, unreadable or invalid
        """
        try:
            document = json.loads(self._path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"configuration file not found: {self._path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{self._path}: invalid JSON: {e}") from e

        if not document:
            raise ConfigError(f"Failed to load configuration from {self._path}.")

        return parse_experiment(document, base_dir=self._path.parent)


def parse_experiment(
    document: Mapping[str, Any], base_dir: str | Path | None = None
) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a parsed JSON document.

    Relative embedding paths are resolved against base_dir.

    Raises:
        InvalidConfig: Naming the first offending field, e.g. "policies[2].kind"
    """
    if not isinstance(document, Mapping):
        raise InvalidConfig("configuration must be a JSON object")
    _reject_unknown(document, TOP_LEVEL_KEYS, "")

    environment = document.get("environment", {})
    if not isinstance(environment, Mapping):
        raise InvalidConfig("environment must be an object")
    env = EnvConfig.from_dict(environment)

    raw_policies = document.get("policies")
    if not isinstance(raw_policies, list) or not raw_policies:
        raise InvalidConfig("policies must be a non-empty list")
    policies = tuple(
        _parse_policy(raw, f"policies[{i}]", env, base_dir) for i, raw in enumerate(raw_policies)
    )
    names = [p.name for p in policies]
    for i, name in enumerate(names):
        if name in names[:i]:
            raise InvalidConfig(f"policies[{i}].name {name!r} is used twice")

    settings = _parse_settings(document.get("evaluation", {}), env)
    output_dir = document.get("output_dir", "results")
    if not isinstance(output_dir, str) or not output_dir:
        raise InvalidConfig("output_dir must be a non-empty string")

    return ExperimentConfig(
        version=str(document.get("version", "v1")),
        environment=env,
        policies=policies,
        settings=settings,
        output_dir=output_dir,
    )


def _parse_policy(
    raw: Any, where: str, env: EnvConfig, base_dir: str | Path | None
) -> PolicySpec:
    if not isinstance(raw, Mapping):
        raise InvalidConfig(f"{where} must be an object")
    _reject_unknown(raw, {f.name for f in fields(PolicySpec)}, where)
    for key in ("name", "kind"):
        if not isinstance(raw.get(key), str) or not raw.get(key):
            raise InvalidConfig(f"{where}.{key} is required")
    kind = raw["kind"]
    if kind not in POLICY_CLASSES:
        raise InvalidConfig(f"{where}.kind {kind!r} is not one of {', '.join(POLICY_KINDS)}")
    policy_cls = POLICY_CLASSES[kind]

    params = raw.get("params", {})
    if not isinstance(params, Mapping):
        raise InvalidConfig(f"{where}.params must be an object")
    accepted = _hyperparameters(policy_cls)
    for key in params:
        if key not in accepted:
            raise InvalidConfig(f"{where}.params.{key} is not a hyperparameter of {kind}")

    diversity = raw.get("diversity")
    if diversity is not None and not isinstance(diversity, bool):
        raise InvalidConfig(f"{where}.diversity must be true, false or null")
    effective = policy_cls.default_diversity if diversity is None else diversity
    if effective and env.K < MIN_DIVERSE_K:
        raise InvalidConfig(
            f"{where}.diversity needs environment.K >= {MIN_DIVERSE_K}, got {env.K}"
        )

    spec = PolicySpec(
        name=raw["name"],
        kind=kind,
        params=copy.deepcopy(dict(params)),
        diversity=diversity,
        reward_target=raw.get("reward_target", "selection"),
        user_features=raw.get("user_features", "behavioral"),
        item_features=raw.get("item_features", "meta"),
        user_embeddings=_resolve(raw.get("user_embeddings"), base_dir),
        item_embeddings=_resolve(raw.get("item_embeddings"), base_dir),
    )
    _check_choice(spec.reward_target, get_args(RewardTarget), f"{where}.reward_target")
    _check_choice(spec.user_features, get_args(UserFeatureMode), f"{where}.user_features")
    _check_choice(spec.item_features, get_args(ItemFeatureMode), f"{where}.item_features")
    if spec.user_features == "embedding" and spec.user_embeddings is None:
        raise InvalidConfig(f"{where}.user_embeddings is required for user_features=embedding")
    if spec.item_features == "embedding" and spec.item_embeddings is None:
        raise InvalidConfig(f"{where}.item_embeddings is required for item_features=embedding")
    return spec


def _parse_settings(raw: Any, env: EnvConfig) -> EvaluationSettings:
    where = "evaluation"
    if not isinstance(raw, Mapping):
        raise InvalidConfig(f"{where} must be an object")
    _reject_unknown(raw, {f.name for f in fields(EvaluationSettings)}, where)
    values = dict(raw)
    for key in ("evaluators", "analyses"):
        if key in values:
            if not isinstance(values[key], list):
                raise InvalidConfig(f"{where}.{key} must be a list")
            values[key] = tuple(values[key])
    try:
        settings = EvaluationSettings(**values)
    except TypeError as e:
        raise InvalidConfig(f"{where}: {e}") from e

    allowed = {"evaluators": EVALUATORS, "analyses": ANALYSES}
    for key, options in allowed.items():
        for item in getattr(settings, key):
            _check_choice(item, options, f"{where}.{key}")
    if not settings.evaluators and not settings.analyses:
        raise InvalidConfig(f"{where} needs at least one evaluator or analysis")
    if settings.replications < 1:
        raise InvalidConfig(f"{where}.replications must be at least 1")
    if not 1 <= settings.train_weeks < env.horizon_weeks:
        raise InvalidConfig(
            f"{where}.train_weeks must lie in [1, {env.horizon_weeks - 1}], "
            f"got {settings.train_weeks}"
        )
    if not 0.0 < settings.propensity_floor <= 1.0:
        raise InvalidConfig(f"{where}.propensity_floor must lie in (0, 1]")
    if settings.sigma_scale < 0:
        raise InvalidConfig(f"{where}.sigma_scale must be non-negative")
    _check_choice(settings.simulator_source, SIMULATOR_SOURCES, f"{where}.simulator_source")
    _check_choice(
        settings.logging_policy, tuple(p.value for p in LoggingPolicy), f"{where}.logging_policy"
    )
    if settings.logging_slate_size < 1:
        raise InvalidConfig(f"{where}.logging_slate_size must be at least 1")
    if settings.logging_policy == LoggingPolicy.SKEWED and settings.logging_slate_size != 1:
        raise InvalidConfig(f"{where}.logging_slate_size must be 1 for the skewed logger")
    if settings.dynamic_users_n < 1:
        raise InvalidConfig(f"{where}.dynamic_users_n must be at least 1")
    return settings


def _hyperparameters(policy_cls: type[Policy]) -> set[str]:
    base = set(inspect.signature(Policy.__init__).parameters)
    own = set(inspect.signature(policy_cls.__init__).parameters)
    return own - base


def _reject_unknown(raw: Mapping[str, Any], known: set[str], where: str) -> None:
    unknown = sorted(set(raw) - known)
    if unknown:
        name = f"{where}.{unknown[0]}" if where else unknown[0]
        raise InvalidConfig(f"{name} is not a recognised setting")


def _check_choice(value: Any, options: Collection[str], where: str) -> None:
    if value not in options:
        raise InvalidConfig(f"{where} {value!r} is not one of {', '.join(options)}")


def _resolve(path: str | None, base_dir: str | Path | None) -> str | None:
    if path is None:
        return None
    resolved = Path(path)
    if base_dir is not None and not resolved.is_absolute():
        resolved = Path(base_dir) / resolved
    return str(resolved)
