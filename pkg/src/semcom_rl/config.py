"""Experiment configuration: one YAML file with environment/ppo/evaluation
sections plus a catalog path and an output directory.

Validation never stops at the first problem: every violation is collected
and reported with its config key path (e.g. "environment.gamma1"), so a
broken file can be fixed in one pass.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import yaml

from .catalog import CatalogError, ScmCatalog, load_catalog
from .channel import ChannelParams
from .environment import EnvConfig
from .ppo import PpoConfig


class ConfigError(ValueError):
    """Raised with the full list of violations joined into the message."""

    def __init__(self, violations: list[str]):
        super().__init__("invalid configuration:\n  "
                         + "\n  ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class EvaluationConfig:
    num_episodes: int = 400
    num_users: int = 12
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    average_fixed_scm: int = 1
    deterministic: bool = True

    def __post_init__(self) -> None:
        if self.num_episodes < 1:
            raise ValueError(f"num_episodes must be >= 1, got {self.num_episodes}")
        if self.num_users < 1:
            raise ValueError(f"num_users must be >= 1, got {self.num_users}")
        if len(self.seeds) == 0:
            raise ValueError("seeds must be non-empty")
        if self.average_fixed_scm < 0:
            raise ValueError("average_fixed_scm must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    catalog_path: Path
    output_dir: Path
    environment: EnvConfig
    ppo: PpoConfig
    evaluation: EvaluationConfig


class _Section:
    """Pulls typed values out of one mapping, recording violations by path."""

    def __init__(self, name: str, data: dict, violations: list[str]):
        self.name = name
        self.data = dict(data)
        self.violations = violations

    def error(self, key: str, message: str) -> None:
        self.violations.append(f"{self.name}.{key}: {message}"
                               if self.name else f"{key}: {message}")

    def leftover_keys(self) -> None:
        for key in self.data:
            self.error(key, "unknown key")

    def _take(self, key: str, default):
        return self.data.pop(key, default)

    def take_float(self, key: str, default: float, minimum: float | None = None,
                   maximum: float | None = None,
                   exclusive_min: bool = False) -> float:
        value = self._take(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.error(key, f"expected a number, got {value!r}")
            return default
        value = float(value)
        if minimum is not None:
            if exclusive_min and not value > minimum:
                self.error(key, f"must be > {minimum}, got {value}")
            elif not exclusive_min and value < minimum:
                self.error(key, f"must be >= {minimum}, got {value}")
        if maximum is not None and value > maximum:
            self.error(key, f"must be <= {maximum}, got {value}")
        return value

    def take_int(self, key: str, default: int, minimum: int | None = None) -> int:
        value = self._take(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            self.error(key, f"expected an integer, got {value!r}")
            return default
        if minimum is not None and value < minimum:
            self.error(key, f"must be >= {minimum}, got {value}")
        return value

    def take_bool(self, key: str, default: bool) -> bool:
        value = self._take(key, default)
        if not isinstance(value, bool):
            self.error(key, f"expected true/false, got {value!r}")
            return default
        return value

    def take_int_list(self, key: str, default: tuple[int, ...],
                      minimum_len: int = 1) -> tuple[int, ...]:
        value = self._take(key, list(default))
        if (not isinstance(value, (list, tuple))
                or any(isinstance(v, bool) or not isinstance(v, int)
                       for v in value)):
            self.error(key, f"expected a list of integers, got {value!r}")
            return default
        if len(value) < minimum_len:
            self.error(key, f"needs at least {minimum_len} entries")
            return default
        return tuple(value)

    def take_subsection(self, key: str) -> dict:
        value = self._take(key, {})
        if not isinstance(value, dict):
            self.error(key, f"expected a mapping, got {value!r}")
            return {}
        return value


def _parse(path: str | Path) -> tuple[list[str], ExperimentConfig | None]:
    path = Path(path)
    violations: list[str] = []
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        return [f"{path}: unreadable config file ({exc})"], None
    if not isinstance(raw, dict):
        return [f"{path}: top level must be a mapping"], None

    top = _Section("", raw, violations)
    catalog_value = top._take("catalog", None)
    output_value = top._take("output_dir", "results")
    env_data = top.take_subsection("environment")
    ppo_data = top.take_subsection("ppo")
    eval_data = top.take_subsection("evaluation")
    top.leftover_keys()

    catalog: ScmCatalog | None = None
    catalog_path = Path()
    if catalog_value is None:
        violations.append("catalog: required key missing")
    elif not isinstance(catalog_value, str):
        violations.append(f"catalog: expected a path string, got {catalog_value!r}")
    else:
        catalog_path = (path.parent / catalog_value).resolve()
        if not catalog_path.is_file():
            violations.append(f"catalog: file not found: {catalog_path}")
        else:
            try:
                catalog = load_catalog(catalog_path)
            except CatalogError as exc:
                violations.append(f"catalog: {exc}")

    if not isinstance(output_value, str):
        violations.append(f"output_dir: expected a path string, got {output_value!r}")
        output_value = "results"

    env = _Section("environment", env_data, violations)
    channel = _Section("environment.channel", env.take_subsection("channel"),
                       violations)
    channel_kwargs = dict(
        rayleigh_sigma=channel.take_float("rayleigh_sigma", 0.2, 0.0,
                                          exclusive_min=True),
        noise_power=channel.take_float("noise_power", 1e-8, 0.0,
                                       exclusive_min=True),
    )
    channel.leftover_keys()
    env_kwargs = dict(
        num_users=env.take_int("num_users", 6, 1),
        total_bandwidth=env.take_float("total_bandwidth", 30e6, 0.0,
                                       exclusive_min=True),
        total_power=env.take_float("total_power", 3.0, 0.0,
                                   exclusive_min=True),
        latency_cap=env.take_float("latency_cap", 12.0, 0.0,
                                   exclusive_min=True),
        rde_lambda=env.take_float("rde_lambda", 1e4, 0.0, exclusive_min=True),
        rde_epsilon=env.take_float("rde_epsilon", 1e-5, 0.0,
                                   exclusive_min=True),
        gamma1=env.take_float("gamma1", 0.3, 0.0, exclusive_min=True),
        gamma2=env.take_float("gamma2", 0.2, 0.0, exclusive_min=True),
        episode_length=env.take_int("episode_length", 32, 1),
        distortion_scale=env.take_float("distortion_scale", 30.0, 0.0,
                                        exclusive_min=True),
        latency_sentinel=env.take_float("latency_sentinel", 100.0, 0.0,
                                        exclusive_min=True),
    )
    env.leftover_keys()
    if env_kwargs["latency_sentinel"] <= env_kwargs["latency_cap"]:
        violations.append("environment.latency_sentinel: must exceed "
                          "environment.latency_cap")

    ppo = _Section("ppo", ppo_data, violations)
    hidden = ppo.take_int_list("hidden_sizes", (128, 128))
    if any(h < 1 for h in hidden):
        ppo.error("hidden_sizes", "layer widths must be >= 1")
        hidden = (128, 128)
    ppo_kwargs = dict(
        gamma=ppo.take_float("gamma", 0.995, 0.0, 1.0, exclusive_min=True),
        gae_lambda=ppo.take_float("gae_lambda", 0.95, 0.0, 1.0,
                                  exclusive_min=True),
        clip_epsilon=ppo.take_float("clip_epsilon", 0.2, 0.0,
                                    exclusive_min=True),
        value_coef=ppo.take_float("value_coef", 0.5, 0.0),
        entropy_coef=ppo.take_float("entropy_coef", 0.01, 0.0),
        update_epochs=ppo.take_int("update_epochs", 15, 1),
        minibatch_size=ppo.take_int("minibatch_size", 64, 1),
        rollout_steps=ppo.take_int("rollout_steps", 2048, 1),
        epochs=ppo.take_int("epochs", 150, 1),
        learning_rate=ppo.take_float("learning_rate", 3e-4, 0.0,
                                     exclusive_min=True),
        hidden_sizes=hidden,
        max_grad_norm=ppo.take_float("max_grad_norm", 0.5, 0.0,
                                     exclusive_min=True),
    )
    ppo.leftover_keys()

    ev = _Section("evaluation", eval_data, violations)
    eval_kwargs = dict(
        num_episodes=ev.take_int("num_episodes", 400, 1),
        num_users=ev.take_int("num_users", 12, 1),
        seeds=ev.take_int_list("seeds", (0, 1, 2, 3, 4)),
        average_fixed_scm=ev.take_int("average_fixed_scm", 1, 0),
        deterministic=ev.take_bool("deterministic", True),
    )
    ev.leftover_keys()
    if (catalog is not None
            and eval_kwargs["average_fixed_scm"] >= len(catalog)):
        violations.append(
            f"evaluation.average_fixed_scm: index "
            f"{eval_kwargs['average_fixed_scm']} outside catalog of "
            f"{len(catalog)} models")

    if violations or catalog is None:
        return violations, None
    try:
        config = ExperimentConfig(
            catalog_path=catalog_path,
            output_dir=(path.parent / output_value).resolve(),
            environment=EnvConfig(catalog=catalog, **env_kwargs),
            ppo=PpoConfig(**ppo_kwargs),
            evaluation=EvaluationConfig(**eval_kwargs),
        )
    except ValueError as exc:
        return [str(exc)], None
    return [], config


def validate_experiment_config(path: str | Path) -> list[str]:
    """All violations found in the file, each naming its key path."""
    violations, _ = _parse(path)
    return violations


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    violations, config = _parse(path)
    if violations or config is None:
        raise ConfigError(violations or ["unknown configuration failure"])
    return config


def config_fingerprint(config: ExperimentConfig) -> str:
    """Short stable hash of the fully-resolved configuration."""
    payload = {
        "environment": asdict(config.environment),
        "ppo": asdict(config.ppo),
        "evaluation": asdict(config.evaluation),
    }
    canon = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]
