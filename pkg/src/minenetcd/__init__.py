"""Bi-temporal change detection with frequency-domain change learning.

A weight-shared residual encoder extracts two feature pyramids, their
difference passes through a channel-spectrum enhancement module, and a
pyramid-pooling decoder produces a per-pixel change probability map.
Everything runs on a self-contained numpy autodiff engine.
"""

from .config import ExperimentConfig, parse_config, serialize_config
from .decoder import ChangeDecoder, DecoderConfig
from .encoder import (EncoderConfig, FeaturePyramid, SiameseEncoder,
                      feature_difference)
from .evaluation import (ConfusionCounts, MetricReport, binarize,
                         compute_metrics, confusion_counts, render_change_map)
from .model import ChangeDetectionModel, build_model
from .nn import BatchNorm2d, Conv2d, Module, ModuleList, Parameter
from .spectral import (ChangeFftModule, ComplexTensor, FreqDomainConv,
                       dft_channels, idft_channels)
from .tensor import Tensor, no_grad
from .training import (Adam, TrainConfig, bce_loss, checkpoint_load,
                       checkpoint_save, cosine_lr, fit)

__version__ = "0.1.0"

__all__ = [
    "Adam", "BatchNorm2d", "ChangeDecoder", "ChangeDetectionModel",
    "ChangeFftModule", "ComplexTensor", "ConfusionCounts", "Conv2d",
    "DecoderConfig", "EncoderConfig", "ExperimentConfig", "FeaturePyramid",
    "FreqDomainConv", "MetricReport", "Module", "ModuleList", "Parameter",
    "SiameseEncoder", "Tensor", "TrainConfig", "bce_loss", "binarize",
    "build_model", "checkpoint_load", "checkpoint_save", "compute_metrics",
    "confusion_counts", "cosine_lr", "dft_channels", "feature_difference",
    "fit", "idft_channels", "no_grad", "parse_config", "render_change_map",
    "serialize_config",
]
