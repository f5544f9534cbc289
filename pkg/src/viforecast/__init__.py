"""Probabilistic time series forecasting with a masked-autoencoder vision backbone."""

from .backbone import ModelConfig, QuantileMAE, init_from_pretrained, init_random
from .core import (ForecastSet, ImageGeometry, QuantileSet, TimeSeriesSample, infer_periodicity,
                   split_window)
from .estimator import VisionTSForecaster, predict_sample
from .filtering import InstanceNormalizer

__all__ = [
    "ForecastSet",
    "ImageGeometry",
    "InstanceNormalizer",
    "ModelConfig",
    "QuantileMAE",
    "QuantileSet",
    "TimeSeriesSample",
    "VisionTSForecaster",
    "infer_periodicity",
    "init_from_pretrained",
    "init_random",
    "predict_sample",
    "split_window",
]

__version__ = "0.1.0"
