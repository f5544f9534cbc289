"""Instance normalization and the pixel-range acceptance filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
DEFAULT_R = 0.4
DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    r: float = DEFAULT_R
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not 0.0 < self.r <= 1.0:
            raise ValueError(f"scale r must lie in (0, 1], got {self.r}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        for name in ("mean", "std"):
            a = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same length")

    @property
    def M(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class PixelBounds:
    channel_mean: tuple
    channel_std: tuple
    lo: float
    hi: float


def compute_stats(context, r: float = DEFAULT_R, eps: float = DEFAULT_EPS) -> NormalizationStats:
    """Per-variate mean and population std of the context, std floored at ``eps``."""
    x = np.asarray(context, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 1:
        raise ValueError("context must contain at least one time step")
    return NormalizationStats(x.mean(axis=0), np.maximum(x.std(axis=0), eps), r, eps)


def _check_columns(x, stats):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[-1] != stats.M:
        raise ValueError(f"expected {stats.M} variates, got {x.shape[-1]}")
    return x


def normalize(values, stats: NormalizationStats) -> np.ndarray:
    x = _check_columns(values, stats)
    return stats.r * (x - stats.mean) / stats.std


def denormalize(values, stats: NormalizationStats) -> np.ndarray:
    v = _check_columns(values, stats)
    return v / stats.r * stats.std + stats.mean


def make_pixel_bounds(channel_mean=IMAGENET_MEAN, channel_std=IMAGENET_STD) -> PixelBounds:
    """Range of valid normalized pixels shared by all three channels.

    Pixels live on a [0, 1] scale. The per-channel ranges are intersected so the
    filter decision does not depend on which channel a variate is drawn in.
    """
    mean = np.asarray(channel_mean, dtype=np.float64)
    std = np.asarray(channel_std, dtype=np.float64)
    if mean.shape != (3,) or std.shape != (3,):
        raise ValueError("pixel mean and std need exactly three channel values")
    if np.any(std <= 0):
        raise ValueError(f"pixel std must be positive, got {tuple(std)}")
    lo = float(np.max((0.0 - mean) / std))
    hi = float(np.min((1.0 - mean) / std))
    return PixelBounds(tuple(mean.tolist()), tuple(std.tolist()), lo, hi)


def filter_sample(norm_context, norm_target, bounds: PixelBounds) -> bool:
    """Accept iff every normalized context and target value lies in ``[lo, hi]``."""
    for a in (norm_context, norm_target):
        a = np.asarray(a, dtype=np.float64)
        if a.size and (a.min() < bounds.lo or a.max() > bounds.hi or np.isnan(a).any()):
            return False
    return True


class InstanceNormalizer(TransformerMixin, BaseEstimator):
    """Scale columns by ``r * (x - mean) / std`` using statistics of the fitted window.

    Parameters
    ----------
    r : float, default=0.4
        Extra shrink factor applied after standardization.
    eps : float, default=1e-6
        Floor for the per-variate standard deviation.
    """

    def __init__(self, r=DEFAULT_R, eps=DEFAULT_EPS):
        self.r = r
        self.eps = eps

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=True)
        self.stats_ = compute_stats(X, self.r, self.eps)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return normalize(check_array(X), self.stats_)

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        return denormalize(check_array(X), self.stats_)
