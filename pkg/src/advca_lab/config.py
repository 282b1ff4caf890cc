"""Flat `section.key = value` experiment configuration files.

Unknown keys are hard errors so a typo in a hyper-parameter name cannot
silently fall back to a default. `#` starts a comment; blank lines are
ignored; values are parsed by the declared type of the target field.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .engine import ModelSizes, TrainConfig
from .errors import ConfigError
from .gcs import GcsConfig

METHODS = ("advca", "erm", "dropedge", "rdca")


@dataclass
class DatasetBlock:
    shift_kind: str = "base"
    feature_dim: int = 4
    seed: int = 7
    train_per_env_class: int = 100
    val_per_env_class: int = 50
    test_per_env_class: int = 50
    min_total_nodes: int = 12
    max_total_nodes: int = 18
    small_min: int = 10
    small_max: int = 20
    middle_min: int = 30
    middle_max: int = 40
    large_min: int = 60
    large_max: int = 90


@dataclass
class ExperimentConfig:
    dataset: DatasetBlock = field(default_factory=DatasetBlock)
    model: ModelSizes = field(default_factory=ModelSizes)
    train: TrainConfig = field(default_factory=TrainConfig)
    gcs: GcsConfig = field(default_factory=GcsConfig)
    method: str = "advca"
    num_seeds: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose one of {METHODS}")
        if self.num_seeds < 1:
            raise ConfigError("num_seeds must be at least 1")


_SECTIONS = {
    "dataset": DatasetBlock,
    "model": ModelSizes,
    "train": TrainConfig,
    "gcs": GcsConfig,
}

_EXPERIMENT_KEYS = {"method": str, "num_seeds": int}


def _field_types(cls) -> dict[str, type]:
    out = {}
    for f in fields(cls):
        t = f.type
        if isinstance(t, str):  # postponed annotations
            t = {"int": int, "float": float, "str": str, "bool": bool,
                 "float | None": float, "int | None": int}.get(t, str)
        out[f.name] = t
    return out


def _parse_value(raw: str, target: type, where: str):
    raw = raw.strip()
    try:
        if target is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target is int:
            return int(raw)
        if target is float:
            value = float(raw)
            return value
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    blocks = {name: {} for name in _SECTIONS}
    experiment: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}: line {lineno}: expected 'section.key = value'")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        where = f"{source}: line {lineno}: {key}"
        if "." not in key:
            raise ConfigError(f"{where}: keys are section-qualified, e.g. 'train.lr'")
        section, name = key.split(".", 1)
        if section == "experiment":
            if name not in _EXPERIMENT_KEYS:
                raise ConfigError(f"{where}: unknown key")
            experiment[name] = _parse_value(raw, _EXPERIMENT_KEYS[name], where)
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"{where}: unknown section {section!r}")
        types = _field_types(_SECTIONS[section])
        if name not in types:
            raise ConfigError(f"{where}: unknown key")
        target = types[name]
        value = _parse_value(raw, target, where)
        if section == "gcs" and name == "epsilon" and value == 0:
            value = None  # 0 selects the relative default threshold
        blocks[section][name] = value
    try:
        return ExperimentConfig(
            dataset=DatasetBlock(**blocks["dataset"]),
            model=ModelSizes(**blocks["model"]),
            train=TrainConfig(**blocks["train"]),
            gcs=GcsConfig(**blocks["gcs"]),
            **experiment,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=path)
