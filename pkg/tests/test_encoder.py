"""Encoder tests: pyramid shape law, structural weight sharing, feature
differencing, and gradient flow through both temporal streams."""

import numpy as np
import pytest

from minenetcd.encoder import (EncoderConfig, FeaturePyramid, SiameseEncoder,
                               feature_difference)
from minenetcd.errors import ConfigError, ShapeError
from minenetcd.tensor import Tensor


def make_encoder(c=16, blocks=(1, 1, 1, 1), seed=0, dtype=np.float32):
    cfg = EncoderConfig(base_channels=c, blocks=blocks)
    return SiameseEncoder(cfg, rng=np.random.default_rng(seed), dtype=dtype)


def rand_image(rng, h, w, dtype=np.float32):
    return Tensor(rng.random((3, h, w)), dtype=dtype)


class TestConfig:
    def test_rejects_small_channels(self):
        with pytest.raises(ConfigError):
            EncoderConfig(base_channels=4)

    def test_rejects_bad_blocks(self):
        with pytest.raises(ConfigError):
            EncoderConfig(blocks=(1, 1, 0, 1))
        with pytest.raises(ConfigError):
            EncoderConfig(blocks=(1, 1, 1))

    def test_unknown_backbone_rejected(self):
        cfg = EncoderConfig(backbone_kind="swin-t")
        with pytest.raises(ConfigError):
            SiameseEncoder(cfg, rng=np.random.default_rng(0))


class TestPyramidShapes:
    def test_reference_shape_arithmetic(self):
        enc = make_encoder(c=64)
        img = rand_image(np.random.default_rng(0), 256, 256)
        pyr = enc.backbone(img)
        assert pyr.shapes == [(64, 64, 64), (128, 32, 32),
                              (256, 16, 16), (512, 8, 8)]

    @pytest.mark.parametrize("h,w,c", [(64, 64, 16), (128, 128, 32),
                                       (256, 256, 64)])
    def test_shape_law_grid(self, h, w, c):
        enc = make_encoder(c=c)
        pyr = enc.backbone(rand_image(np.random.default_rng(1), h, w))
        want = [(c * 2 ** l, h // 2 ** (l + 2), w // 2 ** (l + 2))
                for l in range(4)]
        assert pyr.shapes == want

    def test_indivisible_size_rejected(self):
        enc = make_encoder()
        with pytest.raises(ShapeError):
            enc.backbone(rand_image(np.random.default_rng(2), 100, 96))

    def test_pyramid_law_enforced(self):
        good = [Tensor(np.zeros((8 * 2 ** l, 16 // 2 ** l, 16 // 2 ** l)))
                for l in range(4)]
        FeaturePyramid(good)
        bad = list(good)
        bad[2] = Tensor(np.zeros((99, 4, 4)))
        with pytest.raises(ShapeError):
            FeaturePyramid(bad)
        with pytest.raises(ShapeError):
            FeaturePyramid(good[:3])


class TestDeterminismAndSharing:
    def test_same_input_bit_identical(self):
        enc = make_encoder()
        img = rand_image(np.random.default_rng(3), 64, 64)
        p1 = enc.backbone(Tensor(img.data.copy()))
        p2 = enc.backbone(Tensor(img.data.copy()))
        for a, b in zip(p1, p2):
            assert np.array_equal(a.data, b.data)

    def test_single_parameter_set(self):
        enc = make_encoder()
        enc_names = [n for n, _ in enc.named_parameters()]
        bb_names = ["backbone." + n for n, _ in enc.backbone.named_parameters()]
        assert enc_names == bb_names
        assert len(enc_names) == len(set(enc_names))

    def test_mutating_shared_weight_changes_both_streams(self):
        enc = make_encoder()
        rng = np.random.default_rng(4)
        a, b = rand_image(rng, 64, 64), rand_image(rng, 64, 64)
        pa0, pb0 = enc(a, b)
        first = next(iter(enc.parameters()))
        first.data += 0.5
        pa1, pb1 = enc(a, b)
        assert not np.array_equal(pa0[0].data, pa1[0].data)
        assert not np.array_equal(pb0[0].data, pb1[0].data)

    def test_gradients_reach_every_parameter_through_both_streams(self):
        enc = make_encoder(c=8)
        rng = np.random.default_rng(5)
        a, b = rand_image(rng, 64, 64), rand_image(rng, 64, 64)
        pa, pb = enc(a, b)
        loss = sum((d * d).sum() for d in feature_difference(pa, pb))
        loss.backward()
        missing = [n for n, p in enc.named_parameters() if p.grad is None]
        assert missing == []


class TestFeatureDifference:
    def _pyr(self, rng, c=8, side=16):
        return FeaturePyramid(
            [Tensor(rng.standard_normal((c * 2 ** l, side >> l, side >> l)))
             for l in range(4)])

    def test_equal_inputs_give_zero(self):
        rng = np.random.default_rng(6)
        a = self._pyr(rng)
        diff = feature_difference(a, a)
        for d in diff:
            assert np.max(np.abs(d.data)) == 0.0

    def test_zero_second_input_is_identity(self):
        rng = np.random.default_rng(7)
        a = self._pyr(rng)
        zeros = FeaturePyramid([Tensor(np.zeros_like(t.data)) for t in a])
        diff = feature_difference(a, zeros)
        for d, t in zip(diff, a):
            assert np.array_equal(d.data, t.data)

    def test_antisymmetry(self):
        rng = np.random.default_rng(8)
        a, b = self._pyr(rng), self._pyr(rng)
        ab = feature_difference(a, b)
        ba = feature_difference(b, a)
        for x, y in zip(ab, ba):
            assert np.array_equal(x.data, -y.data)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(9)
        a = self._pyr(rng, c=8)
        b = self._pyr(rng, c=16)
        with pytest.raises(ShapeError):
            feature_difference(a, b)

    def test_multi_block_stages(self):
        enc = make_encoder(c=8, blocks=(2, 2, 2, 2))
        pyr = enc.backbone(rand_image(np.random.default_rng(10), 64, 64))
        assert pyr.shapes == [(8, 16, 16), (16, 8, 8), (32, 4, 4), (64, 2, 2)]
