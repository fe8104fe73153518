"""Confusion accumulation, the five derived metrics, and map rendering.

Changed pixels (value 1) are the positive class; metrics compute from
globally accumulated counts (micro-averaging over the whole split).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image

__all__ = ["ConfusionCounts", "MetricReport", "binarize",
           "confusion_counts", "compute_metrics", "render_change_map",
           "save_png"]

# Rendering convention: TP green, TN white, FP red, FN blue.
_TP_COLOR = (0, 255, 0)
_TN_COLOR = (255, 255, 255)
_FP_COLOR = (255, 0, 0)
_FN_COLOR = (0, 0, 255)


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricReport:
    oa: float
    pre: float
    rec: float
    f1: float
    ciou: float

    def to_dict(self) -> dict:
        return {"oa": self.oa, "pre": self.pre, "rec": self.rec,
                "f1": self.f1, "ciou": self.ciou}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Probability map to binary change map at the standard 0.5 threshold."""
    return (np.asarray(prob) > threshold).astype(np.uint8)


def _as_binary(arr, what: str) -> np.ndarray:
    a = np.asarray(arr)
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{what} must be strictly binary (0/1)")
    return a.astype(bool)


def confusion_counts(pred, gt) -> ConfusionCounts:
    """Per-pixel tally of a binary prediction against binary ground truth."""
    p = _as_binary(pred, "prediction")
    g = _as_binary(gt, "ground truth")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
    )


def compute_metrics(c: ConfusionCounts) -> MetricReport:
    """Overall accuracy, precision, recall, F1, and changed-class IoU.

    Zero-denominator policy: a metric whose denominator vanishes is 1.0
    when tp+fp+fn == 0 (nothing positive anywhere, perfect agreement)
    and 0.0 otherwise.
    """
    if c.total == 0:
        raise ValueError("cannot compute metrics from zero evaluated pixels")
    degenerate = 1.0 if (c.tp + c.fp + c.fn) == 0 else 0.0

    def ratio(num: int, den: int) -> float:
        return num / den if den else degenerate

    return MetricReport(
        oa=(c.tp + c.tn) / c.total,
        pre=ratio(c.tp, c.tp + c.fp),
        rec=ratio(c.tp, c.tp + c.fn),
        f1=ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        ciou=ratio(c.tp, c.tp + c.fp + c.fn),
    )


def render_change_map(pred, gt) -> np.ndarray:
    """RGB visualization of the four agreement cases, (H, W, 3) uint8."""
    p = _as_binary(pred, "prediction")
    g = _as_binary(gt, "ground truth")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    out = np.empty(p.shape + (3,), dtype=np.uint8)
    out[p & g] = _TP_COLOR
    out[~p & ~g] = _TN_COLOR
    out[p & ~g] = _FP_COLOR
    out[~p & g] = _FN_COLOR
    return out


def save_png(array: np.ndarray, path) -> None:
    """Write an (H,W) gray or (H,W,3) RGB uint8 array as PNG."""
    mode = "L" if array.ndim == 2 else "RGB"
    Image.fromarray(array.astype(np.uint8), mode=mode).save(path, format="PNG")
