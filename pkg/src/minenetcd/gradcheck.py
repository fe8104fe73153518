"""Central finite-difference verification of recorded adjoints.

Checks run whole graphs at 64-bit with step 1e-5; a coordinate passes
when |analytic - numeric| / max(|analytic|, |numeric|, 1e-4) < 1e-4.
The same suite backs both the unit tests and the ``gradcheck`` CLI
command.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops, spectral, tensor
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .model import build_model
from .tensor import Tensor, no_grad
from .training import bce_loss

__all__ = ["CheckResult", "check_gradients", "primitive_checks",
           "pipeline_check", "run_suite"]

EPS = 1e-5
RTOL = 1e-4
FLOOR = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < RTOL

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: max rel err {self.max_rel_err:.3e} "
                f"over {self.n_coords} coords")


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


def check_gradients(build_loss: Callable[[], Tensor],
                    leaves: dict[str, Tensor],
                    rng: np.random.Generator,
                    coords_per_leaf: int = 6,
                    label: str = "") -> list[CheckResult]:
    """Compare recorded adjoints against central differences.

    ``build_loss`` must rebuild the forward graph from the current leaf
    values on every call; a random subset of coordinates per leaf is
    perturbed by +-EPS.
    """
    for leaf in leaves.values():
        leaf.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = {name: (np.zeros_like(leaf.data) if leaf.grad is None
                       else leaf.grad.copy())
                for name, leaf in leaves.items()}

    results = []
    for name, leaf in leaves.items():
        n = leaf.data.size
        coords = (np.arange(n) if n <= coords_per_leaf
                  else rng.choice(n, size=coords_per_leaf, replace=False))
        worst = 0.0
        flat = leaf.data.reshape(-1)
        for c in coords:
            saved = flat[c]
            flat[c] = saved + EPS
            with no_grad():
                up = float(build_loss().data)
            flat[c] = saved - EPS
            with no_grad():
                down = float(build_loss().data)
            flat[c] = saved
            numeric = (up - down) / (2.0 * EPS)
            worst = max(worst, _relative_error(
                float(analytic[name].reshape(-1)[c]), numeric))
        results.append(CheckResult(f"{label}{name}", worst, len(coords)))
    return results


def _rand(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True,
                  dtype=np.float64)


def primitive_checks(rng: np.random.Generator) -> list[CheckResult]:
    """Finite-difference checks for every differentiable primitive."""
    results = []

    x = _rand(rng, (2, 3, 6, 6))
    w = _rand(rng, (4, 3, 3, 3))
    b = _rand(rng, (4,))
    results += check_gradients(
        lambda: ops.conv2d(x, w, b, stride=1, padding=1).sum(),
        {"x": x, "w": w, "b": b}, rng, label="conv2d/")
    results += check_gradients(
        lambda: ops.conv2d(x, w, b, stride=2, padding=0).sum(),
        {"x": x, "w": w, "b": b}, rng, label="conv2d-s2/")

    xb = _rand(rng, (2, 3, 4, 4))
    gamma = _rand(rng, (3,))
    beta = _rand(rng, (3,))

    def bn_loss():
        rm = np.zeros(3)
        rv = np.ones(3)
        out = ops.batch_norm(xb, gamma, beta, rm, rv, training=True)
        return (out * out).sum()

    results += check_gradients(bn_loss, {"x": xb, "gamma": gamma,
                                         "beta": beta}, rng, label="batchnorm/")

    xp = _rand(rng, (1, 2, 6, 6))
    results += check_gradients(lambda: ops.max_pool2d(xp, 2).sum(),
                               {"x": xp}, rng, label="maxpool/")
    results += check_gradients(lambda: (ops.avg_pool2d(xp, 2) ** 2.0).sum(),
                               {"x": xp}, rng, label="avgpool/")
    results += check_gradients(
        lambda: (ops.adaptive_avg_pool2d(xp, 4) ** 2.0).sum(),
        {"x": xp}, rng, label="adaptive-pool/")
    results += check_gradients(
        lambda: (ops.bilinear_upsample(xp, 9, 11) ** 2.0).sum(),
        {"x": xp}, rng, label="upsample/")

    xa = _rand(rng, (5, 4, 3))
    for kind in ("relu", "silu", "sigmoid"):
        results += check_gradients(
            lambda k=kind: (tensor.activation(xa, k) * xa).sum(),
            {"x": xa}, rng, label=f"activation-{kind}/")

    xs = _rand(rng, (8, 3, 3))
    results += check_gradients(
        lambda: (spectral.dft_channels(xs).re ** 2.0).sum()
        + (spectral.dft_channels(xs).im ** 2.0).sum(),
        {"x": xs}, rng, label="dft/")

    re = _rand(rng, (8, 3, 3))
    im = _rand(rng, (8, 3, 3))
    results += check_gradients(
        lambda: (spectral.idft_channels(
            spectral.ComplexTensor(re, im)).re ** 2.0).sum(),
        {"re": re, "im": im}, rng, label="idft/")

    stage = spectral.FreqDomainConv(6, rng=np.random.default_rng(7),
                                    dtype=np.float64)
    sx = _rand(rng, (6, 2, 2))

    def fd_loss():
        out = stage(spectral.dft_channels(sx))
        return (out.re ** 2.0).sum() + (out.im ** 2.0).sum()

    leaves = {"x": sx}
    leaves.update({f"stage.{n}": p for n, p in stage.named_parameters()})
    results += check_gradients(fd_loss, leaves, rng, label="fdconv/")

    pred_logits = _rand(rng, (1, 1, 4, 4))
    target = (rng.random((4, 4)) > 0.5).astype(np.float64)
    results += check_gradients(
        lambda: bce_loss(tensor.sigmoid(pred_logits), target),
        {"logits": pred_logits}, rng, label="bce/")

    c1 = _rand(rng, (2, 3, 3))
    c2 = _rand(rng, (3, 3, 3))
    results += check_gradients(
        lambda: (tensor.concat([c1, c2], axis=-3) ** 2.0).sum(),
        {"a": c1, "b": c2}, rng, label="concat/")

    return results


def micro_model(dtype=np.float64, use_changefft: bool = True, seed: int = 8888):
    """The small configuration used for end-to-end gradient checking."""
    # 64x64 inputs leave a 2x2 deepest level, so only scales (1, 2) fit
    enc = EncoderConfig(base_channels=8, blocks=(1, 1, 1, 1))
    dec = DecoderConfig(fpn_channels=16, ppm_scales=(1, 2))
    return build_model(enc, dec, use_changefft, seed, dtype=dtype)


def pipeline_check(rng: np.random.Generator, n_params: int = 220,
                   side: int = 64) -> list[CheckResult]:
    """Sampled finite-difference check across the whole micro pipeline."""
    model = micro_model()
    img_a = rng.random((3, side, side))
    img_b = rng.random((3, side, side))
    target = (rng.random((side, side)) > 0.7).astype(np.float64)

    def loss_fn():
        pred = model(Tensor(img_a, dtype=np.float64),
                     Tensor(img_b, dtype=np.float64))
        return bce_loss(pred, target)

    named = list(model.named_parameters())
    per_leaf = max(1, -(-n_params // len(named)))
    return check_gradients(loss_fn, dict(named), rng,
                           coords_per_leaf=per_leaf, label="pipeline/")


def run_suite(rng: np.random.Generator | None = None,
              printer=print) -> bool:
    """Run primitive + pipeline checks; prints one line each, True if green."""
    rng = rng if rng is not None else np.random.default_rng(8888)
    ok = True
    for res in primitive_checks(rng) + pipeline_check(rng):
        printer(res.line())
        ok = ok and res.passed
    return ok
