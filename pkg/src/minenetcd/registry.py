"""Name -> builder registries for models and datasets."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import generate_synthetic_dataset, read_dataset_index
from .errors import ConfigError, DataError
from .model import build_model

__all__ = ["Registry", "MODELS", "DATASETS", "registry_resolve"]


class Registry:
    def __init__(self, kind: str):
        self.kind = kind
        self._builders: dict = {}

    def register(self, name: str):
        if name in self._builders:
            raise ValueError(f"{self.kind} id {name!r} already registered")

        def decorator(fn):
            self._builders[name] = fn
            return fn

        return decorator

    def resolve(self, name: str):
        try:
            return self._builders[name]
        except KeyError:
            known = ", ".join(sorted(self._builders))
            raise ConfigError(
                f"unknown {self.kind} id {name!r}; available: {known}") from None

    def names(self):
        return sorted(self._builders)


MODELS = Registry("model")
DATASETS = Registry("dataset")


def registry_resolve(kind: str, name: str):
    if kind == "model":
        return MODELS.resolve(name)
    if kind == "dataset":
        return DATASETS.resolve(name)
    raise ConfigError(f"unknown registry kind {kind!r}; expected model|dataset")


@MODELS.register("minenetcd-resnet-tiny")
def _tiny_model(cfg: ExperimentConfig, dtype=np.float32):
    enc = dataclasses.replace(cfg.encoder, backbone_kind="resnet-tiny")
    return build_model(enc, cfg.decoder, cfg.use_changefft,
                       cfg.train.seed, dtype=dtype)


@MODELS.register("minenetcd-resnet-small")
def _small_model(cfg: ExperimentConfig, dtype=np.float32):
    enc = dataclasses.replace(cfg.encoder, backbone_kind="resnet-tiny",
                              blocks=(2, 2, 2, 2))
    return build_model(enc, cfg.decoder, cfg.use_changefft,
                       cfg.train.seed, dtype=dtype)


@DATASETS.register("synthetic")
def _synthetic_dataset(cfg: ExperimentConfig):
    """Generate (once) and index the deterministic synthetic corpus."""
    root = Path(cfg.dataset_root) if cfg.dataset_root else \
        Path(cfg.output_dir) / "synthetic-data"
    if not (root / "manifest.json").is_file():
        generate_synthetic_dataset(
            root, n_pairs=cfg.synthetic.n_pairs, size=cfg.synthetic.size,
            change_fraction=cfg.synthetic.change_fraction,
            seed=cfg.train.seed,
            patches_per_site=cfg.synthetic.patches_per_site)
    return root, read_dataset_index(root)


@DATASETS.register("folder")
def _folder_dataset(cfg: ExperimentConfig):
    if not cfg.dataset_root:
        raise DataError("dataset_id 'folder' requires dataset_root")
    root = Path(cfg.dataset_root)
    return root, read_dataset_index(root)
