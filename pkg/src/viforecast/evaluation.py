"""Point and probabilistic forecast metrics, naive baselines and rolling-window evaluation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ForecastSet, QuantileSet, TimeSeriesSample, split_window


def _pair(forecast, target):
    forecast = np.asarray(forecast, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if forecast.shape != target.shape:
        raise ValueError(f"forecast shape {forecast.shape} != target shape {target.shape}")
    return forecast, target


def mse_mae(forecast, target) -> tuple[float, float]:
    f, y = _pair(forecast, target)
    err = f - y
    return float(np.mean(err ** 2)), float(np.mean(np.abs(err)))


def seasonal_naive(context, T: int, m: int = 1) -> np.ndarray:
    """Repeat the last ``m`` observations of the context over ``T`` steps."""
    x = np.asarray(context, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    L = x.shape[0]
    if m < 1 or L < m:
        raise ValueError(f"seasonal naive needs context length {L} >= m = {m} >= 1")
    idx = L - m + np.arange(T) % m
    return x[idx]


def mase(forecast, target, insample, m: int = 1) -> float:
    f, y = _pair(forecast, target)
    x = np.asarray(insample, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] <= m:
        raise ValueError(f"MASE needs more than m = {m} in-sample steps, got {x.shape[0]}")
    scale = np.mean(np.abs(x[m:] - x[:-m]))
    if scale == 0:
        raise ValueError("MASE undefined: constant seasonal in-sample")
    return float(np.mean(np.abs(f - y)) / scale)


def _as_heads(forecasts, levels=None):
    if isinstance(forecasts, ForecastSet):
        return forecasts.per_head, forecasts.levels
    heads = np.asarray(forecasts, dtype=np.float64)
    if levels is None:
        levels = QuantileSet(heads.shape[0]).levels
    return heads, np.asarray(levels, dtype=np.float64)


def weighted_pinball_sum(forecasts, target, levels=None) -> float:
    """``(1/h) * sum_i 2 * sum_elements pinball_i``, the unnormalized CRPS numerator."""
    heads, levels = _as_heads(forecasts, levels)
    y = np.asarray(target, dtype=np.float64)
    if heads.shape[1:] != y.shape:
        raise ValueError(f"forecast heads {heads.shape} do not match target {y.shape}")
    err = y[None] - heads
    q = levels.reshape(-1, *([1] * y.ndim))
    return float(np.mean([2.0 * np.maximum(qi * e, (qi - 1) * e).sum() for qi, e in zip(q, err)]))


def crps_from_quantiles(forecasts, target, levels=None) -> float:
    """CRPS estimate as the mean weighted quantile loss over the forecast levels.

    Normalized by ``sum(|target|)`` unless that is zero.
    """
    total = weighted_pinball_sum(forecasts, target, levels)
    denom = float(np.abs(np.asarray(target, dtype=np.float64)).sum())
    return total / denom if denom > 0 else total


def coverage(forecasts, target, levels=None) -> np.ndarray:
    """Fraction of target elements at or below each quantile head."""
    heads, _ = _as_heads(forecasts, levels)
    y = np.asarray(target, dtype=np.float64)
    if heads.shape[1:] != y.shape:
        raise ValueError(f"forecast heads {heads.shape} do not match target {y.shape}")
    return (y[None] <= heads).reshape(heads.shape[0], -1).mean(axis=1)


def normalized_mae_aggregate(per_dataset_mae: dict, per_dataset_naive_mae: dict) -> float:
    """Geometric mean over datasets of model MAE relative to the naive MAE."""
    if set(per_dataset_mae) != set(per_dataset_naive_mae):
        missing = sorted(set(per_dataset_mae) ^ set(per_dataset_naive_mae))
        raise KeyError(f"dataset {missing[0]!r} missing from one of the MAE maps")
    if not per_dataset_mae:
        raise ValueError("no datasets to aggregate")
    logs = []
    for name in sorted(per_dataset_mae):
        naive = per_dataset_naive_mae[name]
        if not naive > 0:
            raise ValueError(f"naive MAE for {name!r} must be positive, got {naive}")
        ratio = per_dataset_mae[name] / naive
        if ratio == 0:
            return 0.0
        logs.append(math.log(ratio))
    return math.exp(sum(logs) / len(logs))


@dataclass
class MetricReport:
    mse: float
    mae: float
    mase: float
    crps: float
    coverage: Optional[list]

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_forecast(forecasts: ForecastSet, target, insample, m: int) -> MetricReport:
    """All metrics for one window; point metrics use the median head.

    Coverage is reported only when there are at least two heads.
    """
    point = forecasts.point
    mse_, mae_ = mse_mae(point, target)
    cov = coverage(forecasts, target).tolist() if forecasts.quantiles.h > 1 else None
    return MetricReport(mse_, mae_, mase(point, target, insample, m),
                        crps_from_quantiles(forecasts, target), cov)


# rolling-window harness -----------------------------------------------------

def rolling_ends(ds, L: int, T: int, stride: int) -> list:
    """Window end indices whose targets start at or after ``ds.train_end``."""
    first = max(ds.train_end + T, L + T)
    return list(range(first, ds.values.shape[0] + 1, max(1, stride)))


class _Pool:
    def __init__(self, h):
        self.h = h
        self.sq = self.ab = self.n = 0.0
        self.mase = []
        self.pinball = self.abs_target = 0.0
        self.covered = np.zeros(h)

    def add(self, fs: ForecastSet, target, insample, m):
        point = fs.point
        err = point - target
        self.sq += float((err ** 2).sum())
        self.ab += float(np.abs(err).sum())
        self.n += target.size
        self.mase.append(mase(point, target, insample, m))
        self.pinball += weighted_pinball_sum(fs, target)
        self.abs_target += float(np.abs(target).sum())
        self.covered += coverage(fs, target) * target.size

    def report(self) -> MetricReport:
        crps = self.pinball / self.abs_target if self.abs_target > 0 else self.pinball
        cov = (self.covered / self.n).tolist() if self.h > 1 else None
        return MetricReport(self.sq / self.n, self.ab / self.n, float(np.mean(self.mase)), crps, cov)


def evaluate_dataset(predict: Callable[[TimeSeriesSample], ForecastSet], ds, L: int, T: int,
                     stride: int) -> dict:
    """Roll windows over the held-out part of ``ds``; returns model and naive reports."""
    ends = rolling_ends(ds, L, T, stride)
    model_pool = naive_pool = None
    for end in ends:
        sample = split_window(ds.values, L, T, end, frequency=ds.frequency, period=ds.period,
                              dataset_id=ds.name)
        fs = predict(sample)
        naive = ForecastSet(seasonal_naive(sample.context, T, ds.period)[None], QuantileSet(1))
        if model_pool is None:
            model_pool, naive_pool = _Pool(fs.quantiles.h), _Pool(1)
        model_pool.add(fs, sample.target, sample.context, ds.period)
        naive_pool.add(naive, sample.target, sample.context, ds.period)
    if model_pool is None:
        return {"n_windows": 0}
    return {"n_windows": len(ends), **model_pool.report().to_dict(),
            "naive": naive_pool.report().to_dict()}


def evaluate_protocol(predict, archive: Sequence, protocol: Sequence[dict]) -> dict:
    """Evaluate every ``{dataset, L, T, stride}`` entry; output ordered by dataset name."""
    by_name = {ds.name: ds for ds in archive}
    datasets = {}
    for entry in protocol:
        name = entry["dataset"]
        if name not in by_name:
            raise KeyError(f"protocol references unknown dataset {name!r}")
        key = name if name not in datasets else f"{name}@L{entry['L']}T{entry['T']}"
        datasets[key] = evaluate_dataset(predict, by_name[name], int(entry["L"]), int(entry["T"]),
                                         int(entry.get("stride", entry["T"])))
    datasets = dict(sorted(datasets.items()))
    scored = {k: v for k, v in datasets.items() if v.get("n_windows")}
    aggregate = {}
    if scored:
        for key in ("mse", "mae", "mase", "crps"):
            aggregate[key] = float(np.mean([v[key] for v in scored.values()]))
            aggregate[f"naive_{key}"] = float(np.mean([v["naive"][key] for v in scored.values()]))
        naive_maes = {k: v["naive"]["mae"] for k, v in scored.items()}
        if all(x > 0 for x in naive_maes.values()):
            aggregate["normalized_mae"] = normalized_mae_aggregate(
                {k: v["mae"] for k, v in scored.items()}, naive_maes)
    return {"datasets": datasets, "aggregate": aggregate}
