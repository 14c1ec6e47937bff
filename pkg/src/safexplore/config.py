"""Scenario configuration: nested dataclasses loaded from versioned JSON."""
from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source file when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None, key=None):
        self.line = line
        self.source = source
        self.key = key
        self.message = message
        where = ""
        if source:
            where = f"{source}:{line}: " if line else f"{source}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)


@dataclass
class HumanConfig:
    kind: str = "analytical"
    gamma: float = 30.0
    k_p: float = 1.0
    k_d: float = 1.4
    k_repel: float = 0.2
    noise_pos_std: float = 0.01
    noise_vel_std: float = 0.02
    model_path: str | None = None

    def validate(self):
        if self.kind not in ("analytical", "neural"):
            raise ConfigError(f"human.kind must be 'analytical' or 'neural', got {self.kind!r}", key="human.kind")
        if self.gamma < 0:
            raise ConfigError("human.gamma must be nonnegative", key="human.gamma")
        if self.noise_pos_std < 0 or self.noise_vel_std < 0:
            raise ConfigError("human noise standard deviations must be nonnegative", key="human.noise_pos_std")
        if self.kind == "neural" and not self.model_path:
            raise ConfigError("human.model_path is required for a neural human model", key="human.kind")


@dataclass
class SafetyConfig:
    enabled: bool = True
    d_min: float = 1.0
    k_phi: float = 1.0
    eta_R: float = 0.5
    lambda_0: float = 0.01

    def validate(self):
        if not (self.d_min > 0 and self.k_phi > 0 and self.eta_R > 0 and self.lambda_0 >= 0):
            raise ConfigError("safety: need d_min > 0, k_phi > 0, eta_R > 0, lambda_0 >= 0", key="safety")


@dataclass
class AdaptationConfig:
    enabled: bool = True
    forgetting: float = 0.98
    F0: float = 0.01
    sigma0: float = 1e-8
    dtheta: float = 0.0
    init_perturbation: float = 0.3
    norm: str = "fro"

    def validate(self):
        if not 0 < self.forgetting <= 1:
            raise ConfigError("adaptation.forgetting must lie in (0, 1]", key="adaptation.forgetting")
        if self.F0 <= 0 or self.sigma0 < 0:
            raise ConfigError("adaptation: need F0 > 0 and sigma0 >= 0", key="adaptation")
        if self.norm not in ("fro", "spectral"):
            raise ConfigError("adaptation.norm must be 'fro' or 'spectral'", key="adaptation.norm")


@dataclass
class ExploreConfig:
    k_p: float = 2.0
    k_d: float = 2.5
    grid: int = 5
    goal_bias: float = 0.0

    def validate(self):
        if self.grid < 2:
            raise ConfigError("explore.grid must be at least 2", key="explore.grid")


@dataclass
class LayoutConfig:
    """Start/goal geometry; explicit values override the seeded sampler."""

    radius: float = 4.0
    goal_switch_step: int = 50
    human_start: list | None = None
    human_goals: list | None = None  # [[x, y, activation_step], ...]
    robot_start: list | None = None
    robot_goal: list | None = None

    def validate(self):
        if self.radius <= 0:
            raise ConfigError("layout.radius must be positive", key="layout.radius")


@dataclass
class MetricsConfig:
    held_out: bool = True
    suite_size: int = 10
    suite_seed: int = 20230
    reachable_set: bool = False
    n_u: int = 2000
    grid_res: float = 0.001

    def validate(self):
        if self.suite_size < 1:
            raise ConfigError("metrics.suite_size must be positive", key="metrics.suite_size")
        if self.reachable_set and self.n_u < 100:
            raise ConfigError("metrics.n_u must be at least 100", key="metrics.n_u")
        if not self.grid_res > 0:
            raise ConfigError("metrics.grid_res must be positive", key="metrics.grid_res")


@dataclass
class NeuralConfig:
    """Offline dataset and training settings for the network human model."""

    gamma_train: float = 50.0
    trajectories: int = 200
    trajectory_len: int = 100
    history: int = 3
    hidden: int = 32
    epochs: int = 50
    lr: float = 1e-3
    batch: int = 64
    seed: int = 0

    def validate(self):
        if self.gamma_train < 0:
            raise ConfigError("neural.gamma_train must be nonnegative", key="neural.gamma_train")
        if self.trajectories < 1 or self.history < 0 or self.trajectory_len <= self.history:
            raise ConfigError("neural: need trajectories >= 1 and trajectory_len > history >= 0", key="neural")
        if self.hidden < 1 or self.epochs < 0 or self.batch < 1 or not self.lr > 0:
            raise ConfigError("neural: need hidden >= 1, epochs >= 0, batch >= 1, lr > 0", key="neural")


@dataclass
class ScenarioConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    horizon: int = 100
    ts: float = 0.1
    control_bound: float = 5.0
    max_speed: float = 1.25
    risk_preference: str = "neutral"
    uncertainty_mode: str = "interactive"
    human: HumanConfig = field(default_factory=HumanConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    neural: NeuralConfig = field(default_factory=NeuralConfig)

    def validate(self) -> "ScenarioConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}", key="schema_version")
        if self.horizon < 0:
            raise ConfigError("horizon must be nonnegative", key="horizon")
        for name in ("ts", "control_bound", "max_speed"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", key=name)
        if self.risk_preference not in ("neutral", "seeking", "averse"):
            raise ConfigError(f"unknown risk_preference {self.risk_preference!r}", key="risk_preference")
        if self.uncertainty_mode not in ("intrinsic", "interactive", "full"):
            raise ConfigError(f"unknown uncertainty_mode {self.uncertainty_mode!r}", key="uncertainty_mode")
        for sub in (self.human, self.safety, self.adaptation, self.explore, self.layout, self.metrics, self.neural):
            sub.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **overrides) -> "ScenarioConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"safety.enabled": False})``."""
        data = self.to_dict()
        for path, value in overrides.items():
            set_path(data, path, value)
        return from_dict(data)


_SECTIONS = {
    "human": HumanConfig,
    "safety": SafetyConfig,
    "adaptation": AdaptationConfig,
    "explore": ExploreConfig,
    "layout": LayoutConfig,
    "metrics": MetricsConfig,
    "neural": NeuralConfig,
}


def set_path(data: dict, path: str, value: Any) -> None:
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"unknown config key {path!r}", key=path)
        node = node[key]
    if keys[-1] not in node and keys[0] in _SECTIONS:
        raise ConfigError(f"unknown config key {path!r}", key=path)
    node[keys[-1]] = copy.deepcopy(value)


def _build(cls, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'} must be an object", key=prefix.rstrip(".") or None)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {prefix + key!r}", key=prefix + key)
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS and cls is ScenarioConfig:
            value = _build(_SECTIONS[key], value, prefix=f"{key}.")
        kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict) -> ScenarioConfig:
    return _build(ScenarioConfig, data).validate()


def _key_line(text: str, key) -> int | None:
    """Line of a key (dotted string or tuple of parts), matching its parts in order through the file."""
    lines = text.splitlines()
    start, found = 0, None
    for part in key if isinstance(key, tuple) else key.split("."):
        needle = f'"{part}"'
        for i in range(start, len(lines)):
            if needle in lines[i]:
                found, start = i + 1, i + 1
                break
        else:
            return found
    return found


def load_json(path: str | Path) -> tuple[dict, str]:
    text = Path(path).read_text()
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno, source=str(path)) from None


def anchored(exc: ConfigError, text: str, source: str) -> ConfigError:
    """Re-raise a validation error with the line of the offending key, when findable."""
    line = exc.line
    if line is None and exc.key:
        line = _key_line(text, exc.key)
    return ConfigError(exc.message, line=line, source=source, key=exc.key)


def load_scenario(path: str | Path) -> ScenarioConfig:
    data, text = load_json(path)
    try:
        return from_dict(data)
    except ConfigError as exc:
        raise anchored(exc, text, str(path)) from None
