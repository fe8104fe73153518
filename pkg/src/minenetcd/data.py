"""Bi-temporal patch ingestion, site-level splitting, batching, and a
synthetic pair generator for desk-scale runs.

On-disk layout: ``<root>/<site_id>/<patch_id>/{A.png,B.png,mask.png}``
plus a top-level ``manifest.json`` listing sites and their patches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .ops import _interp_matrix

__all__ = ["SamplePair", "SplitManifest", "load_sample",
           "make_split_manifest", "generate_synthetic_dataset",
           "read_dataset_index", "batch_iterator", "PatchDataset"]

SPLITS = ("train", "val", "test")


@dataclass
class SamplePair:
    image_a: np.ndarray  # (3, H, W) float32 in [0, 1]
    image_b: np.ndarray
    mask: np.ndarray     # (H, W) uint8 in {0, 1}
    site_id: str
    patch_id: str


@dataclass
class SplitManifest:
    assignments: dict  # site_id -> split name
    seed: int
    ratios: tuple
    patches: dict = field(default_factory=lambda: {s: [] for s in SPLITS})

    def sites(self, split: str):
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
        return sorted(s for s, sp in self.assignments.items() if sp == split)

    def split_patches(self, split: str):
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
        return list(self.patches[split])


def _read_image(path: Path, mode: str) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert(mode))
    except UnidentifiedImageError as exc:
        raise DataError(f"not an image: {path}") from exc


def load_sample(root, site_id: str, patch_id: str) -> SamplePair:
    """Load one triplet; images normalized by /255, mask thresholded at 128."""
    base = Path(root) / site_id / patch_id
    a = _read_image(base / "A.png", "RGB")
    b = _read_image(base / "B.png", "RGB")
    m = _read_image(base / "mask.png", "L")
    if a.shape != b.shape or a.shape[:2] != m.shape:
        raise DataError(
            f"dimension mismatch under {base}: A {a.shape}, B {b.shape}, "
            f"mask {m.shape}")
    to_chw = lambda x: (x.astype(np.float32) / 255.0).transpose(2, 0, 1)
    return SamplePair(image_a=to_chw(a), image_b=to_chw(b),
                      mask=(m >= 128).astype(np.uint8),
                      site_id=site_id, patch_id=patch_id)


def make_split_manifest(site_ids, ratios=(0.6, 0.1, 0.3), seed: int = 8888,
                        patches_by_site: dict | None = None) -> SplitManifest:
    """Random site-level partition; a function of (sorted site ids, seed).

    Rounded val/test counts; train takes the remainder.
    """
    sites = sorted(set(site_ids))
    if len(sites) < 3:
        raise ValueError(f"need at least 3 sites to split, got {len(sites)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n = len(sites)
    n_val = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError(f"ratios {ratios} leave no training sites for n={n}")
    order = np.random.default_rng(seed).permutation(n)
    assignments = {}
    for pos, site_idx in enumerate(order):
        if pos < n_train:
            split = "train"
        elif pos < n_train + n_val:
            split = "val"
        else:
            split = "test"
        assignments[sites[site_idx]] = split
    manifest = SplitManifest(assignments=assignments, seed=seed,
                             ratios=tuple(ratios))
    if patches_by_site is not None:
        for site in sites:
            for patch in patches_by_site.get(site, []):
                manifest.patches[assignments[site]].append((site, patch))
    return manifest


def batch_iterator(manifest: SplitManifest, split: str, batch_size: int,
                   shuffle: bool = True, seed: int = 0):
    """Yield id batches covering the split exactly once per epoch.

    Order is a seed-deterministic permutation when shuffling; the final
    short batch is retained.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    ids = manifest.split_patches(split)
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(ids))
        ids = [ids[int(i)] for i in order]
    for lo in range(0, len(ids), batch_size):
        yield ids[lo:lo + batch_size]


# ----------------------------------------------------------------------
# synthetic pair generation

def _smooth_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth random background in [40, 200], (H, W, 3) float."""
    coarse_n = max(size // 16, 2) + 1
    coarse = rng.uniform(40.0, 200.0, (coarse_n, coarse_n, 3))
    ry = _interp_matrix(coarse_n, size, "float64")
    out = np.einsum("ij,jkc->ikc", ry, np.einsum("jlc,kl->jkc", coarse, ry))
    return out


def _polygon_mask(rng: np.random.Generator, size: int,
                  radius: float) -> np.ndarray:
    """Rasterize one random blob-like polygon (crossing-number test).

    Radii stay within [0.82, 1.0] of the nominal radius so regions come
    out compact rather than star-spiky, like real excavation footprints.
    """
    cx = rng.uniform(radius * 0.5, size - radius * 0.5)
    cy = rng.uniform(radius * 0.5, size - radius * 0.5)
    n_vert = int(rng.integers(8, 13))
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, n_vert))
    radii = rng.uniform(0.82, 1.0, n_vert) * radius
    vx = cx + radii * np.cos(angles)
    vy = cy + radii * np.sin(angles)
    yy, xx = np.mgrid[0:size, 0:size]
    inside = np.zeros((size, size), dtype=bool)
    for i in range(n_vert):
        x1, y1 = vx[i], vy[i]
        x2, y2 = vx[(i + 1) % n_vert], vy[(i + 1) % n_vert]
        crosses = (y1 <= yy) != (y2 <= yy)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (yy - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (xx < x_at)
    return inside


def _make_pair(rng: np.random.Generator, size: int, change_fraction: float):
    base = _smooth_field(rng, size)
    target = change_fraction * size * size
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(64):
        covered = mask.sum()
        remaining = target - covered
        if remaining <= 0:
            break
        # 1.07 compensates the expected shrinkage from vertex jitter so the
        # first polygon already lands near the target coverage
        radius = 1.07 * math.sqrt(max(remaining, 16.0) / math.pi)
        radius = min(max(radius, 4.0), size / 2.5)
        cand = mask | _polygon_mask(rng, size, radius)
        if abs(cand.sum() - target) < abs(covered - target):
            mask = cand
        else:
            break
    # brightness shift plus texture noise inside changed regions only;
    # base range [40,200] guarantees every masked pixel really differs
    delta = float(rng.uniform(35.0, 80.0)) * float(rng.choice([-1.0, 1.0]))
    noise = rng.uniform(-8.0, 8.0, base.shape)
    img_a = np.clip(np.rint(base), 0, 255).astype(np.uint8)
    changed = np.clip(np.rint(base + delta + noise), 0, 255).astype(np.uint8)
    img_b = img_a.copy()
    img_b[mask] = changed[mask]
    return img_a, img_b, mask.astype(np.uint8)


def generate_synthetic_dataset(root, n_pairs: int, size: int = 256,
                               change_fraction: float = 0.15,
                               seed: int = 8888,
                               patches_per_site: int = 4) -> dict:
    """Write a deterministic synthetic dataset; returns the site index.

    Each pair is a smooth field plus polygonal inserted regions in the
    second image; the mask marks exactly the pixels where the two PNGs
    differ.
    """
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    if not (0.0 < change_fraction < 1.0):
        raise ValueError(
            f"change_fraction must lie in (0, 1), got {change_fraction}")
    root = Path(root)
    sites: dict[str, list[str]] = {}
    for pair_idx in range(n_pairs):
        site_id = f"site_{pair_idx // patches_per_site:03d}"
        patch_id = f"patch_{pair_idx % patches_per_site:03d}"
        rng = np.random.default_rng([seed, pair_idx])
        img_a, img_b, mask = _make_pair(rng, size, change_fraction)
        base = root / site_id / patch_id
        base.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img_a, "RGB").save(base / "A.png", format="PNG")
        Image.fromarray(img_b, "RGB").save(base / "B.png", format="PNG")
        Image.fromarray(mask * 255, "L").save(base / "mask.png", format="PNG")
        sites.setdefault(site_id, []).append(patch_id)
    index = {"sites": sites, "seed": seed, "n_pairs": n_pairs, "size": size,
             "change_fraction": change_fraction,
             "patches_per_site": patches_per_site}
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    return index


def read_dataset_index(root) -> dict:
    """Read ``manifest.json``; raises DataError when absent or malformed."""
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise DataError(f"dataset manifest not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            index = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed dataset manifest: {path}") from exc
    if "sites" not in index:
        raise DataError(f"dataset manifest missing 'sites': {path}")
    return index


class PatchDataset:
    """Indexable view over (site, patch) entries with lazy cached loading."""

    def __init__(self, root, entries):
        self.root = Path(root)
        self.entries = list(entries)
        self._cache: dict[int, SamplePair] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> SamplePair:
        if i not in self._cache:
            site, patch = self.entries[i]
            self._cache[i] = load_sample(self.root, site, patch)
        return self._cache[i]
