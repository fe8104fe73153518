"""Declarative experiment configuration: strict parsing, defaulting, and
round-trippable serialization (JSON).

Unknown keys are rejected so hyperparameter typos cannot pass silently.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .training import TrainConfig

__all__ = ["SyntheticSpec", "SplitSpec", "ExperimentConfig",
           "parse_config", "serialize_config", "config_to_dict"]


@dataclass
class SyntheticSpec:
    n_pairs: int = 80
    size: int = 64
    change_fraction: float = 0.15
    patches_per_site: int = 4


@dataclass
class SplitSpec:
    ratios: tuple = (0.6, 0.1, 0.3)


@dataclass
class ExperimentConfig:
    model_id: str = "minenetcd-resnet-tiny"
    dataset_id: str = "synthetic"
    dataset_root: str = ""
    output_dir: str = "runs/exp"
    use_changefft: bool = True
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    split: SplitSpec = field(default_factory=SplitSpec)

    @property
    def seed(self) -> int:
        return self.train.seed


_BOOL, _INT, _FLOAT, _STR = "bool", "int", "float", "str"
_INT_TUPLE, _FLOAT_TUPLE = "int_tuple", "float_tuple"

_SECTIONS = {
    "encoder": (EncoderConfig, {
        "backbone_kind": _STR, "base_channels": _INT,
        "blocks": _INT_TUPLE, "in_channels": _INT}),
    "decoder": (DecoderConfig, {
        "fpn_channels": _INT, "ppm_scales": _INT_TUPLE, "out_channels": _INT}),
    "train": (TrainConfig, {
        "lr_max": _FLOAT, "lr_min": _FLOAT, "beta1": _FLOAT, "beta2": _FLOAT,
        "eps": _FLOAT, "batch_size": _INT, "total_steps": _INT, "seed": _INT}),
    "synthetic": (SyntheticSpec, {
        "n_pairs": _INT, "size": _INT, "change_fraction": _FLOAT,
        "patches_per_site": _INT}),
    "split": (SplitSpec, {"ratios": _FLOAT_TUPLE}),
}

_TOP_FIELDS = {
    "model_id": _STR, "dataset_id": _STR, "dataset_root": _STR,
    "output_dir": _STR, "use_changefft": _BOOL,
}


def _coerce(value, kind: str, path: str):
    if kind == _BOOL:
        if isinstance(value, bool):
            return value
    elif kind == _INT:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind == _FLOAT:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind == _STR:
        if isinstance(value, str):
            return value
    elif kind in (_INT_TUPLE, _FLOAT_TUPLE):
        elem = _INT if kind == _INT_TUPLE else _FLOAT
        if isinstance(value, (list, tuple)):
            return tuple(_coerce(v, elem, f"{path}[{i}]")
                         for i, v in enumerate(value))
    raise ConfigError(
        f"field {path!r} expects {kind}, got {type(value).__name__}: {value!r}")


def _parse_section(name: str, raw, cls, schema: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object, got "
                          f"{type(raw).__name__}")
    kwargs = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section {name!r}")
        kwargs[key] = _coerce(value, schema[key], f"{name}.{key}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {name!r}: {exc}") from exc


def parse_config(source) -> ExperimentConfig:
    """Build an ExperimentConfig from a JSON file path, JSON text, or dict.

    Missing fields take documented defaults; unknown keys raise
    ``ConfigError`` naming the key.
    """
    if isinstance(source, dict):
        raw = source
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            path = Path(text)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            text = path.read_text(encoding="utf-8")
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got "
                          f"{type(raw).__name__}")

    raw = dict(raw)
    if "dataset_id" not in raw:
        raw["dataset_id"] = "folder" if raw.get("dataset_root") else "synthetic"

    kwargs = {}
    for key, value in raw.items():
        if key in _TOP_FIELDS:
            kwargs[key] = _coerce(value, _TOP_FIELDS[key], key)
        elif key in _SECTIONS:
            cls, schema = _SECTIONS[key]
            kwargs[key] = _parse_section(key, value, cls, schema)
        else:
            raise ConfigError(f"unknown key {key!r} in config")
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {
        "model_id": cfg.model_id,
        "dataset_id": cfg.dataset_id,
        "dataset_root": cfg.dataset_root,
        "output_dir": cfg.output_dir,
        "use_changefft": cfg.use_changefft,
    }
    for section, (cls, schema) in _SECTIONS.items():
        values = dataclasses.asdict(getattr(cfg, section))
        out[section] = {k: (list(v) if isinstance(v, tuple) else v)
                        for k, v in values.items()}
    return out


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``a.b=value`` strings onto a raw config dict (values parse as
    JSON literals, falling back to bare strings)."""
    out = json.loads(json.dumps(raw))  # deep copy
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        dotted, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} crosses a non-object")
        node[parts[-1]] = value
    return out
