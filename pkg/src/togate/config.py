"""One structured config file per experiment.

Every field has a documented default (the desk-scale game), unknown keys
are rejected with their dotted path, and the fully resolved config is
echoed into the run manifest so a run is reproducible from its artifacts
alone. Flags on the CLI override only paths, method, and seed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .core import AttributeSpace
from .environment import Environment, RoleplayerConfig, ScorerConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .losses import LossConfig
from .trajectory import ExplorationConfig
from .training import DEFAULT_DPO, DEFAULT_SFT, PhaseSettings, TrainConfig


@dataclass(frozen=True)
class DatasetConfig:
    num_personas: int = 20
    num_tasks: int = 10
    relevant_per_task: int = 2
    train_fraction: float = 0.9
    seed: int = 42


@dataclass(frozen=True)
class ExperimentConfig:
    space: AttributeSpace = field(default_factory=lambda: AttributeSpace(6, 4))
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    roleplayer: RoleplayerConfig = field(default_factory=RoleplayerConfig)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sft: PhaseSettings = DEFAULT_SFT
    dpo: PhaseSettings = DEFAULT_DPO
    eval: EvalConfig = field(default_factory=EvalConfig)
    method: str = "togate"
    iterations: int = 3
    seed: int = 7
    margin_min: float = 1e-9
    refresh_reference: bool = True
    sft_every_iteration: bool = False

    def environment(self) -> Environment:
        return Environment(self.space, self.scorer, self.roleplayer)

    def train_config(self, method: str | None = None, seed: int | None = None, workers: int = 1) -> TrainConfig:
        return TrainConfig(
            method=method or self.method,
            iterations=self.iterations,
            sft=self.sft,
            dpo=self.dpo,
            loss=self.loss,
            exploration=self.exploration,
            eval=self.eval,
            seed=self.seed if seed is None else seed,
            margin_min=self.margin_min,
            refresh_reference=self.refresh_reference,
            sft_every_iteration=self.sft_every_iteration,
            workers=workers,
        )


# section -> {json key -> field name}
_SECTIONS = {
    "space": {"num_attributes": "num_attributes", "num_values": "num_values"},
    "dataset": {
        "num_personas": "num_personas",
        "num_tasks": "num_tasks",
        "relevant_per_task": "relevant_per_task",
        "train_fraction": "train_fraction",
        "seed": "seed",
    },
    "scorer": {"p_correct_revealed": "p_correct_revealed", "p_wrong_revealed": "p_wrong_revealed"},
    "roleplayer": {"noise": "noise"},
    "exploration": {
        "samples_per_pair": "samples_per_pair",
        "turns": "turns",
        "temperature": "temperature",
        "seed": "seed",
    },
    "loss": {"beta": "beta", "lambda": "lam"},
    "sft": {"learning_rate": "learning_rate", "epochs": "epochs", "batch_size": "batch_size"},
    "dpo": {"learning_rate": "learning_rate", "epochs": "epochs", "batch_size": "batch_size"},
    "eval": {"seed": "seed", "turns": "turns", "wrong_penalty": "wrong_penalty"},
}

_TRAIN_KEYS = {
    "method": "method",
    "iterations": "iterations",
    "seed": "seed",
    "margin_min": "margin_min",
    "refresh_reference": "refresh_reference",
    "sft_every_iteration": "sft_every_iteration",
}


def _coerce_lambda(value):
    if value in ("inf", "Infinity"):
        return math.inf
    return value


def _build_section(name: str, key_map: dict, raw: dict, default):
    """Start from the section's default instance and replace the overridden
    fields, so partial sections keep documented defaults."""
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be an object, got {type(raw).__name__}")
    kwargs = {}
    for key, value in raw.items():
        if key not in key_map:
            raise ConfigError(f"unknown key '{name}.{key}'")
        if name == "loss" and key == "lambda":
            value = _coerce_lambda(value)
        kwargs[key_map[key]] = value
    try:
        return dataclasses.replace(default, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section '{name}': {exc}") from exc


def experiment_config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    defaults = ExperimentConfig()
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value, getattr(defaults, key))
        elif key == "train":
            if not isinstance(value, dict):
                raise ConfigError("section 'train' must be an object")
            for train_key, train_value in value.items():
                if train_key not in _TRAIN_KEYS:
                    raise ConfigError(f"unknown key 'train.{train_key}'")
                kwargs[_TRAIN_KEYS[train_key]] = train_value
        else:
            raise ConfigError(f"unknown key '{key}'")
    config = ExperimentConfig(**kwargs)
    # Cross-section checks that individual sections cannot see.
    config.environment()
    config.train_config()
    return config


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: invalid JSON: {exc.msg}") from exc
    return experiment_config_from_dict(raw)


def resolved_dict(config: ExperimentConfig) -> dict:
    """Fully resolved config with defaults applied, safe to embed in JSON
    manifests (an infinite lambda is spelled 'inf')."""
    out: dict = {}
    for name, key_map in _SECTIONS.items():
        section = getattr(config, name)
        out[name] = {}
        for key, field_name in key_map.items():
            value = getattr(section, field_name)
            if isinstance(value, float) and math.isinf(value):
                value = "inf"
            out[name][key] = value
    out["train"] = {key: getattr(config, field_name) for key, field_name in _TRAIN_KEYS.items()}
    return out


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(resolved_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def default_experiment_config() -> ExperimentConfig:
    return ExperimentConfig()


def write_default_config(path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(resolved_dict(default_experiment_config()), fh, sort_keys=True, indent=2)
        fh.write("\n")
