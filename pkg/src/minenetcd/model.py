"""Full change-detection model: shared encoder, differencing, optional
frequency-domain enhancement, and the decoding head."""

from __future__ import annotations

import numpy as np

from .decoder import ChangeDecoder, DecoderConfig
from .encoder import (EncoderConfig, FeaturePyramid, SiameseEncoder,
                      feature_difference)
from .nn import Module
from .spectral import ChangeFftModule
from .tensor import Tensor

__all__ = ["ChangeDetectionModel", "build_model"]


class ChangeDetectionModel(Module):
    def __init__(self, encoder_config: EncoderConfig,
                 decoder_config: DecoderConfig, use_changefft: bool = True, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.encoder_config = encoder_config
        self.decoder_config = decoder_config
        self.use_changefft = use_changefft
        channels = encoder_config.level_channels
        self.encoder = SiameseEncoder(encoder_config, rng=rng, dtype=dtype)
        if use_changefft:
            self.change_fft = ChangeFftModule(channels, rng=rng, dtype=dtype)
        else:
            self.change_fft = None
        self.decoder = ChangeDecoder(channels, decoder_config,
                                     rng=rng, dtype=dtype)

    def change_representations(self, image_a: Tensor,
                               image_b: Tensor) -> FeaturePyramid:
        pyr_a, pyr_b = self.encoder(image_a, image_b)
        diffs = feature_difference(pyr_a, pyr_b)
        if self.change_fft is not None:
            diffs = FeaturePyramid(self.change_fft(diffs))
        return diffs

    def forward(self, image_a: Tensor, image_b: Tensor) -> Tensor:
        """Probability map in (0,1) with the input's spatial size."""
        return self.decoder(self.change_representations(image_a, image_b))


def build_model(encoder_config: EncoderConfig, decoder_config: DecoderConfig,
                use_changefft: bool, seed: int,
                dtype=np.float32) -> ChangeDetectionModel:
    """Deterministically initialize a model from a seed."""
    rng = np.random.default_rng(seed)
    return ChangeDetectionModel(encoder_config, decoder_config, use_changefft,
                                rng=rng, dtype=dtype)
