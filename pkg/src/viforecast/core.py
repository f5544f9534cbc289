"""Shared domain types, window extraction and periodicity inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class ViForecastError(Exception):
    """Base class for all package errors."""


class WindowError(ViForecastError, ValueError):
    pass


class PeriodError(ViForecastError, ValueError):
    pass


class ConfigError(ViForecastError, ValueError):
    pass


class DataQualityError(ViForecastError, RuntimeError):
    pass


class NumericalError(ViForecastError, FloatingPointError):
    pass


class CheckpointError(ViForecastError, ValueError):
    pass


PERIOD_TABLE = {
    "H": 24,
    "30min": 48,
    "15min": 96,
    "D": 7,
    "W": 52,
    "M": 12,
    "Q": 4,
    "Y": 1,
}

ACF_THRESHOLD = 0.1


def _frozen(a, ndim=2):
    a = np.array(a, dtype=np.float64)
    if a.ndim == 1 and ndim == 2:
        a = a[:, None]
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeriesSample:
    context: np.ndarray
    target: np.ndarray
    frequency: str = ""
    period: int = 1
    dataset_id: str = ""

    def __post_init__(self):
        context = _frozen(self.context)
        target = _frozen(self.target)
        object.__setattr__(self, "context", context)
        object.__setattr__(self, "target", target)
        if context.shape[1] != target.shape[1]:
            raise WindowError(
                f"context has {context.shape[1]} variates, target has {target.shape[1]}"
            )
        if context.shape[0] < 1 or target.shape[0] < 1 or context.shape[1] < 1:
            raise WindowError(f"empty window: context {context.shape}, target {target.shape}")
        if self.period < 1 or context.shape[0] < self.period:
            raise WindowError(f"context length {context.shape[0]} shorter than period {self.period}")

    @property
    def L(self) -> int:
        return self.context.shape[0]

    @property
    def T(self) -> int:
        return self.target.shape[0]

    @property
    def M(self) -> int:
        return self.context.shape[1]


@dataclass(frozen=True)
class ImageGeometry:
    """Pixel geometry of the square model input: width ``W``, patch side ``S``."""

    W: int = 224
    S: int = 16
    legacy_n: Optional[int] = None

    def __post_init__(self):
        if self.W <= 0 or self.S <= 0 or self.W % self.S:
            raise ConfigError(f"image width {self.W} not divisible by patch size {self.S}")
        if (self.W // self.S) % 2:
            raise ConfigError(f"odd patch grid {self.W // self.S} cannot be split in half")

    @property
    def N(self) -> int:
        return self.W // self.S

    @property
    def visible_cols(self) -> int:
        return self.N // 2

    @staticmethod
    def legacy_alignment(N: int, L: int, T: int) -> int:
        """Visible patch columns under the original single-image alignment rule.

        Kept for reference only; rendering always uses the fixed half split.
        """
        return (N * L) // (L + T)


@dataclass(frozen=True)
class QuantileSet:
    h: int = 9
    levels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.h < 1:
            raise ConfigError(f"need at least one quantile head, got {self.h}")
        levels = np.arange(1, self.h + 1, dtype=np.float64) / (self.h + 1)
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    @property
    def median_index(self) -> Optional[int]:
        return self.h // 2 if self.h % 2 else None

    def __len__(self):
        return self.h


@dataclass(frozen=True)
class ForecastSet:
    per_head: np.ndarray  # (h, T, M)
    quantiles: QuantileSet

    def __post_init__(self):
        per_head = np.array(self.per_head, dtype=np.float64)
        if per_head.ndim != 3 or per_head.shape[0] != self.quantiles.h:
            raise ValueError(
                f"expected ({self.quantiles.h}, T, M) forecasts, got {per_head.shape}"
            )
        per_head.setflags(write=False)
        object.__setattr__(self, "per_head", per_head)

    @property
    def point(self) -> np.ndarray:
        idx = self.quantiles.median_index
        if idx is None:
            # even h: average the two central heads
            k = self.quantiles.h // 2
            return 0.5 * (self.per_head[k - 1] + self.per_head[k])
        return self.per_head[idx]

    @property
    def levels(self) -> np.ndarray:
        return self.quantiles.levels


def _lag_correlation(x: np.ndarray, lag: int) -> float:
    a, b = x[:-lag], x[lag:]
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0.0:
        return 0.0
    return float((a * b).sum() / denom)


def infer_periodicity(frequency: Optional[str], series=None) -> int:
    """Return the seasonal period for a frequency token.

    Unknown tokens fall back to the autocorrelation peak of the variate-mean
    series over lags ``2 .. len/2``; the smallest lag within 1e-9 of the best
    correlation wins, and 1 is returned when no lag exceeds 0.1.
    """
    if frequency in PERIOD_TABLE:
        return PERIOD_TABLE[frequency]
    if series is None:
        raise PeriodError(f"cannot infer period for frequency {frequency!r} without a series")
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    max_lag = len(x) // 2
    if max_lag < 2:
        return 1
    acf = np.array([_lag_correlation(x, lag) for lag in range(2, max_lag + 1)])
    best = acf.max()
    if best <= ACF_THRESHOLD:
        return 1
    return int(np.flatnonzero(acf >= best - 1e-9)[0] + 2)


def split_window(series, L: int, T: int, end: int, *, frequency: str = "",
                 period: Optional[int] = None, dataset_id: str = "") -> TimeSeriesSample:
    """Cut ``series[end-T-L:end-T]`` as context and ``series[end-T:end]`` as target."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 1:
        series = series[:, None]
    if L < 1 or T < 1:
        raise WindowError(f"L and T must be positive, got L={L}, T={T}")
    if end < L + T or end > series.shape[0]:
        raise WindowError(
            f"window L={L}, T={T}, end={end} does not fit a series of length {series.shape[0]}"
        )
    return TimeSeriesSample(
        context=series[end - T - L:end - T],
        target=series[end - T:end],
        frequency=frequency,
        period=1 if period is None else period,
        dataset_id=dataset_id,
    )
