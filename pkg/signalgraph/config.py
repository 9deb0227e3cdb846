"""Training and experiment configuration.

Configs are plain YAML mappings whose keys mirror the dataclass fields
below; defaults come from `parameters`. Unknown keys and out-of-range
values raise ConfigError naming the key.
"""

import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import yaml

from . import parameters as prm
from .data_models import GraphMode, Regime, TrainingSet
from .errors import ConfigError
from .scenario import GenerationParams

logger = logging.getLogger(__name__)

MODELS = ("igrl", "marl")
EXPLORATION = ("noisy", "epsilon")
BASELINES = ("fixed_time", "greedy")


def _generation_defaults() -> Dict[str, Any]:
    return {
        "min_intersections": prm.MIN_INTERSECTIONS,
        "max_intersections": prm.MAX_INTERSECTIONS,
        "min_lanes": prm.MIN_LANES_PER_EDGE,
        "max_lanes": prm.DEFAULT_MAX_GENERATED_LANES,
    }


@dataclass
class TrainingConfig:
    """Settings of one Q-learning run."""
    model: str = "igrl"
    mode: str = GraphMode.LANE.value
    training_set: str = TrainingSet.SPECIALIST.value
    seed: int = 0
    gamma: float = prm.GAMMA
    learning_rate: float = prm.LEARNING_RATE
    batch_size: int = prm.BATCH_SIZE
    replay_capacity: int = prm.REPLAY_CAPACITY
    warmup: int = prm.WARMUP_TRANSITIONS
    episode_length: int = prm.EPISODE_LENGTH
    n_simulations: int = prm.N_SIMULATIONS
    total_steps: int = 100_000
    target_update_every: int = prm.TARGET_UPDATE_EVERY
    action_correction: bool = True
    exploration: str = "noisy"
    epsilon_start: float = prm.EPSILON_START
    epsilon_end: float = prm.EPSILON_END
    epsilon_decay_steps: int = prm.EPSILON_DECAY_STEPS
    demand_rate: float = prm.REGIME_RATES["default"]
    target_network: Optional[str] = None
    target_network_seed: int = 7
    target_intersections: Optional[int] = 2
    n_generalist_networks: int = prm.N_SIMULATIONS
    generation: Dict[str, int] = field(default_factory=_generation_defaults)
    checkpoint_every: int = 5_000
    heldout_every: int = 100
    heldout_size: int = 256
    log_every: int = 50
    normalize_messages: bool = False
    hidden_width: int = prm.HIDDEN_WIDTH

    def validate(self) -> "TrainingConfig":
        _choice("model", self.model, MODELS)
        _choice("mode", self.mode, [m.value for m in GraphMode])
        _choice("training_set", self.training_set, [t.value for t in TrainingSet])
        _choice("exploration", self.exploration, EXPLORATION)
        for name in (
            "batch_size", "replay_capacity", "episode_length", "n_simulations", "total_steps",
            "target_update_every", "n_generalist_networks", "checkpoint_every", "heldout_every",
            "heldout_size", "log_every", "hidden_width", "epsilon_decay_steps",
        ):
            _positive(name, getattr(self, name))
        if self.warmup < self.batch_size:
            raise ConfigError("warmup", f"must be at least batch_size ({self.batch_size})")
        for name in ("gamma", "epsilon_start", "epsilon_end"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(name, f"{value} is outside [0, 1]")
        if self.learning_rate <= 0 or self.demand_rate <= 0:
            raise ConfigError("learning_rate" if self.learning_rate <= 0 else "demand_rate", "must be positive")
        if self.model == "marl" and self.training_set != TrainingSet.SPECIALIST.value:
            raise ConfigError("training_set", "per-intersection models can only train as specialists")
        if self.model == "marl" and self.mode != GraphMode.LANE.value:
            raise ConfigError("mode", "per-intersection models use lane-mode features")
        unknown = set(self.generation) - set(_generation_defaults())
        if unknown:
            raise ConfigError(f"generation.{sorted(unknown)[0]}", "unknown key")
        try:
            self.generation_params().validate()
        except ValueError as exc:
            raise ConfigError("generation", str(exc)) from exc
        return self

    def generation_params(self) -> GenerationParams:
        values = {**_generation_defaults(), **self.generation}
        return GenerationParams(**values)

    @property
    def graph_mode(self) -> GraphMode:
        return GraphMode(self.mode)


@dataclass
class ExperimentConfig:
    """Train-then-evaluate comparison of several methods."""
    name: str = "experiment"
    out_dir: str = "results/experiment"
    target_network: Optional[str] = None
    target_network_seed: int = 7
    target_intersections: Optional[int] = 2
    heldout_network_seed: int = 11
    heldout_intersections: Optional[int] = 3
    evaluation_seeds: int = prm.EVALUATION_SEEDS
    robustness_repeats: int = prm.ROBUSTNESS_REPEATS
    regimes: List[str] = field(default_factory=lambda: [Regime.DEFAULT.value, Regime.HEAVY.value])
    horizon: int = prm.EVALUATION_HORIZON
    reference: str = "fixed_time"
    baselines: List[str] = field(default_factory=lambda: list(BASELINES))
    include_marl: bool = False
    marl_config: Optional[str] = None
    training: Dict[str, str] = field(default_factory=dict)  # label -> training config path
    jobs: int = 1

    def validate(self) -> "ExperimentConfig":
        for regime in self.regimes:
            _choice("regimes", regime, [r.value for r in Regime])
        for baseline in self.baselines:
            _choice("baselines", baseline, BASELINES)
        for name in ("evaluation_seeds", "robustness_repeats", "horizon", "jobs"):
            _positive(name, getattr(self, name))
        if self.include_marl and not self.marl_config:
            raise ConfigError("marl_config", "required when include_marl is true")
        labels = set(self.training) | set(self.baselines) | ({"MARL-IQL"} if self.include_marl else set())
        if self.reference not in labels:
            raise ConfigError("reference", f"{self.reference!r} is not one of the compared methods {sorted(labels)}")
        return self


def _choice(key: str, value: Any, allowed) -> None:
    if value not in allowed:
        raise ConfigError(key, f"{value!r} is not one of {list(allowed)}")


def _positive(key: str, value: Any) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
        raise ConfigError(key, f"must be a positive integer, got {value!r}")


def _from_dict(cls, data: Optional[Dict[str, Any]], source: str):
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", f"{source} must contain a mapping")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(key, f"unknown key in {source}")
    return cls(**data).validate()


def training_config_from_dict(data: Optional[Dict[str, Any]], source: str = "config") -> TrainingConfig:
    return _from_dict(TrainingConfig, data, source)


def experiment_config_from_dict(data: Optional[Dict[str, Any]], source: str = "config") -> ExperimentConfig:
    return _from_dict(ExperimentConfig, data, source)


def _read_yaml(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        try:
            return yaml.safe_load(handle)
        except yaml.YAMLError as exc:
            raise ConfigError("<root>", f"{path} is not valid YAML: {exc}") from exc


def load_training_config(path: str) -> TrainingConfig:
    """Load and validate a training config; relative network paths resolve against the file."""
    config = training_config_from_dict(_read_yaml(path), source=path)
    if config.target_network and not os.path.isabs(config.target_network):
        candidate = os.path.join(os.path.dirname(path), config.target_network)
        if os.path.exists(candidate):
            config.target_network = candidate
    return config


def load_experiment_config(path: str) -> ExperimentConfig:
    config = experiment_config_from_dict(_read_yaml(path), source=path)
    base = os.path.dirname(path)
    for label, sub_path in list(config.training.items()):
        if not os.path.isabs(sub_path) and os.path.exists(os.path.join(base, sub_path)):
            config.training[label] = os.path.join(base, sub_path)
    if config.marl_config and not os.path.isabs(config.marl_config):
        candidate = os.path.join(base, config.marl_config)
        if os.path.exists(candidate):
            config.marl_config = candidate
    return config


def save_config(config, path: str) -> None:
    """Write a config dataclass as YAML."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(asdict(config), handle, sort_keys=False)
