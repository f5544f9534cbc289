"""scikit-learn style forecaster wrapping the image pipeline and the backbone."""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .archive import SeriesDataset
from .backbone import PRESETS, ModelConfig, QuantileMAE, init_from_pretrained, init_random
from .converter import (assign_colors, build_model_input, extract_forecasts, make_plan,
                        render_context)
from .core import ForecastSet, TimeSeriesSample, infer_periodicity
from .filtering import DEFAULT_EPS, DEFAULT_R, compute_stats, normalize
from .training import DataConfig, OptimizerConfig, TrainResult, train


def predict_sample(model: QuantileMAE, sample: TimeSeriesSample, *, r: float = DEFAULT_R,
                   eps: float = DEFAULT_EPS, grayscale: bool = False) -> ForecastSet:
    """Zero-shot forecast of ``sample.T`` steps with cyclic colors (deterministic)."""
    geometry = model.config.geometry
    stats = compute_stats(sample.context, r, eps)
    plan = make_plan(geometry, sample.L, sample.T, sample.M, sample.period, stats=stats,
                     colors=assign_colors(sample.M, "cyclic"), grayscale=grayscale)
    image, mask = build_model_input(render_context(normalize(sample.context, stats), plan), geometry)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        rec = model(torch.as_tensor(image, dtype=dtype)[None], mask)[0]
    return extract_forecasts(rec.to(torch.float64).numpy(), plan, sample.T, model.config.quantiles)


class VisionTSForecaster(BaseEstimator):
    """Probabilistic forecaster that renders series as images and inpaints the future half.

    Parameters
    ----------
    preset : str, default="desk"
        Backbone size, one of ``"tiny"``, ``"desk"`` or ``"base"``.
    n_quantiles : int, default=9
        Number of quantile heads; levels are ``i / (n_quantiles + 1)``.
    r : float, default=0.4
        Scale applied after instance normalization.
    use_filter : bool, default=True
        Drop training windows that leave the valid pixel range.
    grayscale : bool, default=False
        Replicate every variate on all three channels instead of colouring.
    steps, batch_size, learning_rate, warmup_steps, weight_decay
        Optimizer schedule for :meth:`fit`.
    init : str, default="random"
        ``"random"`` or a path to pretrained weights.
    period : int, optional
        Seasonal period for raw arrays passed to :meth:`fit` and :meth:`predict`.
    frequency : str, optional
        Frequency token used to look up the period when ``period`` is unset.
    random_state : int, default=0
    """

    def __init__(self, preset="desk", n_quantiles=9, r=DEFAULT_R, use_filter=True,
                 grayscale=False, steps=2000, batch_size=32, learning_rate=1e-3,
                 warmup_steps=100, weight_decay=1e-2, init="random", period=None,
                 frequency=None, random_state=0):
        self.preset = preset
        self.n_quantiles = n_quantiles
        self.r = r
        self.use_filter = use_filter
        self.grayscale = grayscale
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.weight_decay = weight_decay
        self.init = init
        self.period = period
        self.frequency = frequency
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return PRESETS[self.preset].replace(h=self.n_quantiles, seed=self.random_state)

    def _period_for(self, values) -> int:
        if self.period is not None:
            return int(self.period)
        return infer_periodicity(self.frequency, values)

    def _as_datasets(self, X):
        if isinstance(X, SeriesDataset):
            X = [X]
        out = []
        for i, item in enumerate(X):
            if isinstance(item, SeriesDataset):
                out.append(item)
                continue
            values = check_array(np.asarray(item, dtype=np.float64).reshape(len(item), -1))
            out.append(SeriesDataset(f"series_{i}", values, self.frequency or "",
                                     self._period_for(values), values.shape[0]))
        return out

    def _init_model(self, cfg):
        if self.init == "random":
            return init_random(cfg)
        path = self.init.split(":", 1)[1] if self.init.startswith("pretrained:") else self.init
        return init_from_pretrained(path, cfg)

    def fit(self, X, y=None):
        """Continually pretrain on a collection of series (arrays or ``SeriesDataset``)."""
        cfg = self._model_config()
        opt = OptimizerConfig(base_lr=self.learning_rate, weight_decay=self.weight_decay,
                              warmup_steps=min(self.warmup_steps, self.steps) or 1,
                              total_steps=max(self.steps, 1), batch_size=self.batch_size)
        model = self._init_model(cfg)
        if self.steps > 0:
            result = train(self._as_datasets(X), cfg, opt, model,
                           data_cfg=DataConfig(use_filter=self.use_filter,
                                               grayscale=self.grayscale, r=self.r),
                           seed=self.random_state, log_every=0)
        else:
            result = TrainResult(model, [])
        self.model_ = result.model
        self.loss_trace_ = result.trace
        return self

    def predict_quantiles(self, context, horizon: int, period: Optional[int] = None) -> ForecastSet:
        check_is_fitted(self, "model_")
        x = check_array(np.asarray(context, dtype=np.float64).reshape(len(context), -1))
        P = period if period is not None else self._period_for(x)
        sample = TimeSeriesSample(x, np.zeros((horizon, x.shape[1])), self.frequency or "", P)
        return predict_sample(self.model_, sample, r=self.r, grayscale=self.grayscale)

    def predict(self, context, horizon: int, period: Optional[int] = None) -> np.ndarray:
        """Median-head point forecast of shape ``(horizon, M)``."""
        return self.predict_quantiles(context, horizon, period).point
