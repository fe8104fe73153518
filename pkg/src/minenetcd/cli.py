"""Config-driven command line: train / eval / predict / render / gradcheck.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
5 gradient-check failure. Re-running a command with identical config and
seed reproduces identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (ExperimentConfig, apply_overrides, config_to_dict,
                     parse_config, serialize_config)
from .data import PatchDataset, make_split_manifest
from .errors import ConfigError, DataError, NumericError
from .evaluation import (binarize, compute_metrics, confusion_counts,
                         render_change_map, save_png)
from .gradcheck import run_suite
from .registry import DATASETS, MODELS
from .tensor import Tensor, no_grad, _set_silu_adjoint_corruption
from .training import (Adam, apply_checkpoint, checkpoint_load,
                       checkpoint_save, fit)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minenetcd",
        description="Bi-temporal change detection experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_ckpt in (("train", False), ("eval", True),
                             ("predict", True), ("render", True),
                             ("gradcheck", False)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="path to a JSON experiment config")
        p.add_argument("--checkpoint", default=None,
                       help="checkpoint path (default: <output>/checkpoint.bin)")
        p.add_argument("--output", default=None,
                       help="output directory override")
        p.add_argument("--seed", type=int, default=None,
                       help="seed override (sets train.seed)")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="dotted config override, e.g. train.lr_max=1e-3")
        if name == "gradcheck":
            p.add_argument("--corrupt-adjoint", action="store_true",
                           help="deliberately corrupt one adjoint (checker "
                                "self-test; must exit nonzero)")
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        raw = {}
    else:
        cfg = parse_config(args.config)
        raw = config_to_dict(cfg)
    raw = apply_overrides(raw, args.override)
    if args.output is not None:
        raw["output_dir"] = args.output
    if args.seed is not None:
        raw.setdefault("train", {})
        raw["train"]["seed"] = args.seed
    return parse_config(raw)


def _prepare_splits(cfg: ExperimentConfig):
    root, index = DATASETS.resolve(cfg.dataset_id)(cfg)
    sites = index["sites"]
    manifest = make_split_manifest(sorted(sites), ratios=cfg.split.ratios,
                                   seed=cfg.train.seed,
                                   patches_by_site=sites)
    return root, manifest


def _dataset_for(root, manifest, split: str) -> PatchDataset:
    entries = manifest.split_patches(split)
    if not entries:
        raise DataError(f"split {split!r} contains no patches")
    return PatchDataset(root, entries)


def _checkpoint_path(cfg: ExperimentConfig, args) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    return Path(cfg.output_dir) / "checkpoint.bin"


def _load_model(cfg: ExperimentConfig, args):
    path = _checkpoint_path(cfg, args)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    model = MODELS.resolve(cfg.model_id)(cfg)
    apply_checkpoint(model, checkpoint_load(path))
    model.eval()
    return model


def _predict_mask(model, sample) -> np.ndarray:
    with no_grad():
        prob = model(Tensor(sample.image_a), Tensor(sample.image_b))
    return binarize(prob.data.reshape(sample.mask.shape))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root, manifest = _prepare_splits(cfg)
    train_data = _dataset_for(root, manifest, "train")
    model = MODELS.resolve(cfg.model_id)(cfg)
    optimizer = Adam.for_model(model, cfg.train)
    log_rows = fit(model, train_data, cfg.train, optimizer=optimizer)
    checkpoint_save(model, out_dir / "checkpoint.bin",
                    config=config_to_dict(cfg), step=len(log_rows),
                    optimizer=optimizer)
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for row in log_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    (out_dir / "config.json").write_text(serialize_config(cfg),
                                         encoding="utf-8")
    print(f"trained {len(log_rows)} steps; final loss "
          f"{log_rows[-1]['loss']:.6f}; checkpoint at "
          f"{out_dir / 'checkpoint.bin'}")
    return EXIT_OK


def _accumulate_split(model, data: PatchDataset):
    counts = None
    for i in range(len(data)):
        sample = data[i]
        c = confusion_counts(_predict_mask(model, sample), sample.mask)
        counts = c if counts is None else counts + c
    return counts


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    root, manifest = _prepare_splits(cfg)
    model = _load_model(cfg, args)
    counts = _accumulate_split(model, _dataset_for(root, manifest, "test"))
    report = compute_metrics(counts)
    print(report.to_json())
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(report.to_json() + "\n",
                                          encoding="utf-8")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    root, manifest = _prepare_splits(cfg)
    model = _load_model(cfg, args)
    data = _dataset_for(root, manifest, "test")
    out_dir = Path(cfg.output_dir) / "predictions"
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(len(data)):
        sample = data[i]
        mask = _predict_mask(model, sample)
        save_png(mask * 255, out_dir / f"{sample.site_id}_{sample.patch_id}.png")
    print(f"wrote {len(data)} prediction maps to {out_dir}")
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = _load_config(args)
    root, manifest = _prepare_splits(cfg)
    model = _load_model(cfg, args)
    data = _dataset_for(root, manifest, "test")
    out_dir = Path(cfg.output_dir) / "rendered"
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(len(data)):
        sample = data[i]
        rgb = render_change_map(_predict_mask(model, sample), sample.mask)
        save_png(rgb, out_dir / f"{sample.site_id}_{sample.patch_id}.png")
    print(f"wrote {len(data)} rendered maps to {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.corrupt_adjoint:
        _set_silu_adjoint_corruption(1.05)
    try:
        ok = run_suite()
    finally:
        _set_silu_adjoint_corruption(1.0)
    print("gradcheck: " + ("all checks passed" if ok else "FAILURES detected"))
    return EXIT_OK if ok else EXIT_GRADCHECK


_COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
             "render": cmd_render, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
