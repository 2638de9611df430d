"""
attractor_platform/config.py
============================
Run configuration: one dataclass per concern, defaults set to the reference
experiment values, loaded from YAML with layered overrides:

    defaults  ←  config file  ←  named profile (specs/profiles.yaml)  ←  CLI overrides

Unknown sections or keys are rejected.
"""
from __future__ import annotations
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import yaml

from .errors import ConfigError
from .types import DIRECTIONS, DuffingParams, EpisodeConfig, IntegratorConfig

PROFILES_PATH = os.path.join(os.path.dirname(__file__), "specs", "profiles.yaml")


@dataclass
class RunSection:
    name: str = "default"
    seed: int = 0
    workers: int = 1
    output_dir: str = "runs"


@dataclass
class OracleConfig:
    settle_periods: int = 100
    measure_periods: int = 5
    catalog_samples: int = 1000
    ambiguity_band: float = 0.05
    min_cluster_fraction: float = 0.01


@dataclass
class BoaConfig:
    resolution: int = 20
    C: float = 10.0
    gamma_k: float = 1.0
    grid_search: bool = False
    feature_mode: Literal["trig", "raw"] = "trig"
    holdout_fraction: float = 0.2
    tol: float = 1e-3
    max_iter: int = 2_000_000
    chunk_size: int = 2000


@dataclass
class CemConfig:
    episodes: int = 100
    samples_per_episode: int = 30
    elite_fraction: float = 0.8
    action_bound: float = 4.0
    lr: float = 1e-3
    minibatch: int = 128
    noise_scale: float = 0.2      # σ as a fraction of the action bound
    noise_decay: float = 0.99     # per episode
    hidden: Tuple[int, ...] = (64, 64)
    direction: str = "sa2la"


@dataclass
class DdpgConfig:
    episodes: int = 200
    action_bound: float = 4.0
    gamma: float = 0.9
    tau: float = 0.1
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    minibatch: int = 64
    buffer_capacity: int = 1_000_000
    warmup: int = 1000
    noise: Literal["gaussian", "ou"] = "gaussian"
    noise_scale: float = 0.2
    noise_decay: float = 0.995
    ou_theta: float = 0.15
    hidden: Tuple[int, ...] = (128, 128)
    direction: str = "sa2la"


@dataclass
class EvaluationConfig:
    rollouts: int = 100
    audit_fraction: float = 0.1
    stride: int = 1


@dataclass
class SweepConfig:
    bounds: Tuple[float, ...] = (4.0, 2.0, 1.0)
    episodes_per_bound: int = 100
    direction: str = "sa2la"


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    duffing: DuffingParams = field(default_factory=DuffingParams)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    boa: BoaConfig = field(default_factory=BoaConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    cem: CemConfig = field(default_factory=CemConfig)
    ddpg: DdpgConfig = field(default_factory=DdpgConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @property
    def run_dir(self) -> str:
        return os.path.join(self.run.output_dir, self.run.name)


_SECTION_TYPES: Dict[str, type] = {
    "run": RunSection, "duffing": DuffingParams, "integrator": IntegratorConfig,
    "oracle": OracleConfig, "boa": BoaConfig, "episode": EpisodeConfig,
    "cem": CemConfig, "ddpg": DdpgConfig, "evaluation": EvaluationConfig, "sweep": SweepConfig,
}


# ─── Validation ───────────────────────────────────────────────────────────────

def validate(cfg: RunConfig) -> None:
    """Cross-field checks not covered by the section dataclasses themselves."""
    if cfg.run.workers < 1:
        raise ConfigError(f"run.workers must be >= 1, got {cfg.run.workers}")
    if cfg.run.seed < 0:
        raise ConfigError(f"run.seed must be >= 0, got {cfg.run.seed}")
    if cfg.oracle.settle_periods < 100:
        raise ConfigError("oracle.settle_periods must be >= 100")
    if cfg.oracle.catalog_samples < 100:
        raise ConfigError("oracle.catalog_samples must be >= 100")
    if cfg.boa.resolution < 2:
        raise ConfigError("boa.resolution must be >= 2")
    if cfg.boa.feature_mode not in ("trig", "raw"):
        raise ConfigError(f"boa.feature_mode must be 'trig' or 'raw', got {cfg.boa.feature_mode!r}")
    if not 0.0 <= cfg.boa.holdout_fraction < 1.0:
        raise ConfigError("boa.holdout_fraction must lie in [0, 1)")
    if cfg.boa.C <= 0 or cfg.boa.gamma_k <= 0:
        raise ConfigError("boa.C and boa.gamma_k must be > 0")
    if not 0.0 < cfg.cem.elite_fraction <= 1.0:
        raise ConfigError("cem.elite_fraction must lie in (0, 1]")
    if cfg.cem.samples_per_episode < 1:
        raise ConfigError("cem.samples_per_episode must be >= 1")
    for name, bound in (("cem", cfg.cem.action_bound), ("ddpg", cfg.ddpg.action_bound)):
        if bound <= 0:
            raise ConfigError(f"{name}.action_bound must be > 0")
    if not 0.0 <= cfg.ddpg.gamma < 1.0:
        raise ConfigError("ddpg.gamma must lie in [0, 1)")
    if not 0.0 < cfg.ddpg.tau <= 1.0:
        raise ConfigError("ddpg.tau must lie in (0, 1]")
    if cfg.ddpg.noise not in ("gaussian", "ou"):
        raise ConfigError(f"ddpg.noise must be 'gaussian' or 'ou', got {cfg.ddpg.noise!r}")
    for name, direction in (("cem", cfg.cem.direction), ("ddpg", cfg.ddpg.direction),
                            ("sweep", cfg.sweep.direction)):
        if direction not in DIRECTIONS:
            raise ConfigError(f"{name}.direction must be one of {DIRECTIONS}, got {direction!r}")
    bounds = list(cfg.sweep.bounds)
    if not bounds or any(b <= 0 for b in bounds) or any(a <= b for a, b in zip(bounds, bounds[1:])):
        raise ConfigError(f"sweep.bounds must be positive and strictly decreasing, got {bounds}")
    if not 0.0 <= cfg.evaluation.audit_fraction <= 1.0:
        raise ConfigError("evaluation.audit_fraction must lie in [0, 1]")
    if cfg.evaluation.rollouts < 1 or cfg.evaluation.stride < 1:
        raise ConfigError("evaluation.rollouts and evaluation.stride must be >= 1")


# ─── Merging ──────────────────────────────────────────────────────────────────

def _as_plain(cfg: RunConfig) -> Dict[str, Dict[str, Any]]:
    return {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTION_TYPES}


def _merge(base: Dict[str, Dict[str, Any]], layer: Optional[Mapping[str, Any]], origin: str) -> None:
    if not layer:
        return
    if not isinstance(layer, Mapping):
        raise ConfigError(f"{origin}: expected a mapping of sections, got {type(layer).__name__}")
    for section, values in layer.items():
        if section not in base:
            raise ConfigError(f"{origin}: unknown section {section!r}; expected one of {sorted(base)}")
        if values is None:
            continue
        if not isinstance(values, Mapping):
            raise ConfigError(f"{origin}: section {section!r} must be a mapping")
        for key, value in values.items():
            if key not in base[section]:
                raise ConfigError(f"{origin}: unknown key {section}.{key}")
            base[section][key] = value


def _coerce(section: str, cls: type, values: Dict[str, Any]) -> Any:
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    kwargs: Dict[str, Any] = {}
    for key, value in values.items():
        default = defaults.get(key)
        try:
            if isinstance(default, tuple):
                value = tuple(type(default[0])(v) if default else v for v in value)
            elif isinstance(default, bool):
                if not isinstance(value, bool):
                    raise TypeError(f"expected true/false, got {value!r}")
            elif isinstance(default, int):
                if isinstance(value, float) and not value.is_integer():
                    raise TypeError(f"expected an integer, got {value!r}")
                value = int(value)
            elif isinstance(default, float):
                value = float(value)
            elif isinstance(default, str):
                value = str(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid {section} section: {exc}") from exc


def parse_override(text: str) -> Dict[str, Dict[str, Any]]:
    """``"cem.episodes=5"`` → ``{"cem": {"episodes": 5}}``; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    path, raw = text.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key must be section.key, got {path!r}")
    return {parts[0]: {parts[1]: yaml.safe_load(raw)}}


def load_profiles(path: str = PROFILES_PATH) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def load_config(
    path: Optional[str] = None,
    profile: Optional[str] = None,
    overrides: Optional[Sequence[Mapping[str, Any]]] = None,
) -> RunConfig:
    merged = _as_plain(RunConfig())
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        _merge(merged, data, path)
    if profile:
        profiles = load_profiles()
        if profile not in profiles:
            raise ConfigError(f"unknown profile {profile!r}; available: {sorted(profiles)}")
        _merge(merged, profiles[profile], f"profile {profile}")
    for layer in overrides or []:
        _merge(merged, layer, "override")

    cfg = RunConfig(**{name: _coerce(name, cls, merged[name]) for name, cls in _SECTION_TYPES.items()})
    validate(cfg)
    return cfg


def config_to_dict(cfg: RunConfig) -> Dict[str, Dict[str, Any]]:
    plain = _as_plain(cfg)
    for values in plain.values():
        for key, value in values.items():
            if isinstance(value, tuple):
                values[key] = list(value)
    return plain


def dump_config(cfg: RunConfig, path: str) -> None:
    """Write the effective config; ``load_config(path)`` rebuilds an equal RunConfig."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=False, default_flow_style=False)
