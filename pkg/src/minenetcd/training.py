"""Loss, optimizer, schedule, training loop, and checkpoint container."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (CheckpointFormatError, CheckpointShapeError,
                     CheckpointTruncatedError, CheckpointVersionError,
                     ConfigError, NumericError, ShapeError, StateError)
from .nn import Module
from .tensor import Tensor, clip, log, tensor_mean

__all__ = ["TrainConfig", "bce_loss", "Adam", "cosine_lr", "fit",
           "Checkpoint", "checkpoint_save", "checkpoint_load",
           "apply_checkpoint"]


@dataclass
class TrainConfig:
    lr_max: float = 1e-4
    lr_min: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    batch_size: int = 32
    total_steps: int = 200
    seed: int = 8888

    def __post_init__(self):
        if not (0.0 < self.lr_min <= self.lr_max):
            raise ConfigError(
                f"need 0 < lr_min <= lr_max, got {self.lr_min} / {self.lr_max}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(
                f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ConfigError("batch_size and total_steps must be positive")


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps].

    ``pred`` holds probabilities (any layout whose element count matches
    the target's); ``target`` is a strictly binary array or tensor.
    """
    y = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.size != y.size:
        raise ShapeError(
            f"prediction/target size mismatch: {pred.shape} vs {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("target must be strictly binary (0/1)")
    y = y.reshape(pred.shape).astype(pred.data.dtype)
    eps = 1e-7
    p = clip(pred, eps, 1.0 - eps)
    ll = Tensor(y, dtype=pred.data.dtype) * log(p) + \
        Tensor(1.0 - y, dtype=pred.data.dtype) * log(1.0 - p)
    return -tensor_mean(ll)


def cosine_lr(step: int, total_steps: int, lr_max: float,
              lr_min: float) -> float:
    """Half-cosine decay from lr_max at step 0 to lr_min at total_steps."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step >= total_steps:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (
        1.0 + math.cos(math.pi * step / total_steps))


class Adam:
    """Bias-corrected adaptive-moment optimizer over named parameters."""

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.99,
                 eps: float = 1e-8):
        self.named_params = list(named_params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    @classmethod
    def for_model(cls, model: Module, config: TrainConfig) -> "Adam":
        return cls(model.named_parameters(), beta1=config.beta1,
                   beta2=config.beta2, eps=config.eps)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        for name, p in self.named_params:
            if p.grad is None:
                raise StateError(f"parameter {name!r} has no gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.named_params:
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self):
        """(name, m, v) triples in parameter order, for checkpointing."""
        return [(name, self.m[name], self.v[name])
                for name, _ in self.named_params]


def _batch_arrays(samples, dtype):
    a = np.stack([s.image_a for s in samples]).astype(dtype, copy=False)
    b = np.stack([s.image_b for s in samples]).astype(dtype, copy=False)
    y = np.stack([s.mask for s in samples]).astype(dtype, copy=False)
    return a, b, y


def fit(model: Module, dataset, config: TrainConfig, callbacks=None,
        optimizer: Adam | None = None):
    """Run total_steps of batch -> forward -> loss -> backward -> update.

    ``dataset`` is an indexable sequence of sample pairs. Batch order is a
    seed-deterministic permutation per epoch with the final short batch
    retained. Returns the per-step log as a list of dicts.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    opt = optimizer if optimizer is not None else Adam.for_model(model, config)
    dtype = next(model.parameters()).data.dtype
    model.train()
    log_rows = []
    step = 0
    epoch = 0
    while step < config.total_steps:
        order = np.random.default_rng([config.seed, epoch]).permutation(
            len(dataset))
        for lo in range(0, len(order), config.batch_size):
            if step >= config.total_steps:
                break
            idx = order[lo:lo + config.batch_size]
            samples = [dataset[int(i)] for i in idx]
            a, b, y = _batch_arrays(samples, dtype)
            pred = model(Tensor(a, dtype=dtype), Tensor(b, dtype=dtype))
            loss = bce_loss(pred, y)
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss {loss_val} at step {step}")
            opt.zero_grad()
            loss.backward()
            lr = cosine_lr(step, config.total_steps, config.lr_max,
                           config.lr_min)
            opt.step(lr)
            row = {"step": step, "lr": lr, "loss": loss_val}
            log_rows.append(row)
            if callbacks:
                for cb in callbacks:
                    cb(row)
            step += 1
        epoch += 1
    return log_rows


# ----------------------------------------------------------------------
# checkpoint container: magic, version, JSON metadata block, then raw
# little-endian float32 payload in manifest order.

_MAGIC = b"CDFCKPT1"
_VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config: dict | None
    step: int
    params: dict  # name -> float32 ndarray
    buffers: dict  # name -> float32 ndarray
    adam: dict | None  # {"t": int, "m": {name: arr}, "v": {name: arr}}


def _entries_for(model: Module):
    entries = [("param", name, p.data) for name, p in model.named_parameters()]
    entries += [("buffer", name, b) for name, b in model.named_buffers()]
    return entries


def checkpoint_save(model: Module, path, config: dict | None = None,
                    step: int = 0, optimizer: Adam | None = None) -> None:
    manifest = []
    blobs = []
    offset = 0

    def add(kind, name, arr):
        nonlocal offset
        if arr.dtype != np.float32:
            raise ValueError(
                f"checkpoints store 32-bit floats; {name!r} is {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"kind": kind, "name": name,
                         "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)

    for kind, name, arr in _entries_for(model):
        add(kind, name, arr)
    adam_meta = None
    if optimizer is not None:
        for name, m, v in optimizer.state_arrays():
            add("adam_m", name, m)
            add("adam_v", name, v)
        adam_meta = {"t": optimizer.t}

    meta = {"config": config, "step": step, "entries": manifest,
            "adam": adam_meta}
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(meta_raw)))
        fh.write(meta_raw)
        for raw in blobs:
            fh.write(raw)


def checkpoint_load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 12:
        raise CheckpointTruncatedError(f"file too short to be a checkpoint: {path}")
    if blob[:len(_MAGIC)] != _MAGIC:
        raise CheckpointFormatError(f"bad magic bytes; not a checkpoint: {path}")
    pos = len(_MAGIC)
    (version,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if version != _VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version} (expected {_VERSION})")
    (meta_len,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    if len(blob) < pos + meta_len:
        raise CheckpointTruncatedError(f"metadata block truncated: {path}")
    meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
    payload = blob[pos + meta_len:]

    params, buffers = {}, {}
    adam_m, adam_v = {}, {}
    for entry in meta["entries"]:
        shape = tuple(entry["shape"])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 4
        lo = entry["offset"]
        if lo + n_bytes > len(payload):
            raise CheckpointTruncatedError(
                f"payload truncated at entry {entry['name']!r}: {path}")
        arr = np.frombuffer(payload[lo:lo + n_bytes],
                            dtype="<f4").reshape(shape).copy()
        {"param": params, "buffer": buffers,
         "adam_m": adam_m, "adam_v": adam_v}[entry["kind"]][entry["name"]] = arr
    adam = None
    if meta.get("adam") is not None:
        adam = {"t": meta["adam"]["t"], "m": adam_m, "v": adam_v}
    return Checkpoint(version=version, config=meta.get("config"),
                      step=meta.get("step", 0), params=params,
                      buffers=buffers, adam=adam)


def apply_checkpoint(model: Module, ckpt: Checkpoint,
                     optimizer: Adam | None = None) -> None:
    """Copy stored values into the model (and optimizer), shape-checked."""
    named = dict(model.named_parameters())
    if set(named) != set(ckpt.params):
        missing = set(named) ^ set(ckpt.params)
        raise CheckpointShapeError(
            f"parameter set mismatch; differing names: {sorted(missing)}")
    for name, p in named.items():
        stored = ckpt.params[name]
        if stored.shape != p.data.shape:
            raise CheckpointShapeError(
                f"parameter {name!r}: stored shape {stored.shape} != model "
                f"shape {p.data.shape}")
        p.data[...] = stored.astype(p.data.dtype, copy=False)
    for name, buf in model.named_buffers():
        if name not in ckpt.buffers:
            raise CheckpointShapeError(f"buffer {name!r} missing from checkpoint")
        stored = ckpt.buffers[name]
        if stored.shape != buf.shape:
            raise CheckpointShapeError(
                f"buffer {name!r}: stored shape {stored.shape} != model "
                f"shape {buf.shape}")
        buf[...] = stored.astype(buf.dtype, copy=False)
    if optimizer is not None and ckpt.adam is not None:
        optimizer.t = ckpt.adam["t"]
        for name, _ in optimizer.named_params:
            optimizer.m[name][...] = ckpt.adam["m"][name]
            optimizer.v[name][...] = ckpt.adam["v"][name]
