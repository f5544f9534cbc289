"""Quantile objective, AdamW with warmup-cosine schedule, filtered batch sampling and the training loop."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .backbone import ModelConfig, QuantileMAE, init_random, no_decay
from .converter import (ColorImagePlan, assign_colors, build_model_input, extract_normalized,
                        make_plan, render_context)
from .core import (ConfigError, DataQualityError, NumericalError, TimeSeriesSample,
                   split_window)
from .filtering import (DEFAULT_EPS, DEFAULT_R, IMAGENET_MEAN, IMAGENET_STD, compute_stats,
                        filter_sample, make_pixel_bounds, normalize)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.98
    warmup_steps: int = 10_000
    total_steps: int = 100_000
    batch_size: int = 512
    grad_clip: Optional[float] = None
    eps: float = 1e-8

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 < self.warmup_steps <= self.total_steps:
            raise ConfigError(
                f"need 0 < warmup_steps <= total_steps, got {self.warmup_steps}, {self.total_steps}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")


DESK_OPTIM = OptimizerConfig(base_lr=1e-3, warmup_steps=100, total_steps=2000, batch_size=32)


@dataclass(frozen=True)
class DataConfig:
    horizon_multiples: tuple = (1, 2, 4)
    lookback_multiples: tuple = (1, 2, 3, 4)
    use_filter: bool = True
    grayscale: bool = False
    r: float = DEFAULT_R
    eps: float = DEFAULT_EPS
    pixel_mean: tuple = IMAGENET_MEAN
    pixel_std: tuple = IMAGENET_STD
    max_reject_factor: int = 10


@dataclass(frozen=True)
class QuantileLossReport:
    total: float
    per_level: np.ndarray
    n_elements: int


def pinball(errors, q):
    """Elementwise ``max(q * e, (q - 1) * e)`` for numpy arrays or torch tensors."""
    if isinstance(errors, torch.Tensor):
        return torch.maximum(q * errors, (q - 1) * errors)
    return np.maximum(q * errors, (q - 1) * errors)


def quantile_terms(preds, target, levels):
    """Per-level mean pinball losses, shape ``(h,)``; differentiable for torch inputs."""
    if tuple(preds.shape[1:]) != tuple(target.shape) or preds.shape[0] != len(levels):
        raise ValueError(
            f"preds {tuple(preds.shape)} incompatible with target {tuple(target.shape)} "
            f"and {len(levels)} levels"
        )
    if isinstance(preds, torch.Tensor):
        q = torch.tensor(np.asarray(levels).tolist(), dtype=preds.dtype).reshape(-1, *([1] * target.ndim))
        return pinball(target[None] - preds, q).reshape(preds.shape[0], -1).mean(dim=1)
    q = np.asarray(levels, dtype=np.float64).reshape(-1, *([1] * np.ndim(target)))
    return pinball(np.asarray(target)[None] - preds, q).reshape(preds.shape[0], -1).mean(axis=1)


def quantile_loss(preds, target, levels) -> QuantileLossReport:
    """Average over levels of the mean pinball loss of each head against the target."""
    preds = np.asarray(preds, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 0:
        target = target.reshape(1)
        preds = preds.reshape(-1, 1)
    per_level = quantile_terms(preds, target, levels)
    return QuantileLossReport(float(per_level.mean()), per_level, int(target.size))


def lr_at_step(step: int, cfg: OptimizerConfig) -> float:
    """Linear warmup to ``base_lr`` then cosine decay to zero at ``total_steps``."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    if cfg.total_steps == cfg.warmup_steps:
        return cfg.base_lr
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@torch.no_grad()
def optimizer_step(params: dict, grads: dict, state: AdamWState, lr: float,
                   cfg: OptimizerConfig) -> tuple[dict, AdamWState]:
    """One AdamW update with bias correction and decoupled weight decay (in place).

    Names for which :func:`no_decay` is true skip weight decay.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {tuple(g.shape)}, expected {tuple(p.shape)}")
        if name not in state.m:
            state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
        v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
        update = (m / bc1) / ((v / bc2).sqrt() + cfg.eps)
        if cfg.weight_decay and not no_decay(name):
            update = update + cfg.weight_decay * p
        p.sub_(lr * update)
    return params, state


@dataclass(frozen=True)
class TrainingExample:
    sample: TimeSeriesSample
    norm_context: np.ndarray
    norm_target: np.ndarray
    plan: ColorImagePlan
    end: int


@dataclass
class Batch:
    examples: list
    candidates: int
    rejected: int

    @property
    def reject_rate(self) -> float:
        return self.rejected / self.candidates if self.candidates else 0.0

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        for ex in self.examples:
            h.update(f"{ex.sample.dataset_id}:{ex.end}:{ex.sample.L}:{ex.sample.T};".encode())
        return h.hexdigest()[:12]


def _draw_candidate(ds, data_cfg: DataConfig, rng: np.random.Generator):
    P = ds.period
    n = ds.train_end
    horizons = [k * P for k in data_cfg.horizon_multiples if k * P + P <= n]
    if not horizons:
        raise DataQualityError(f"dataset {ds.name!r} too short for period {P}")
    T = int(horizons[rng.integers(len(horizons))])
    lam = int(data_cfg.lookback_multiples[rng.integers(len(data_cfg.lookback_multiples))])
    L = min(lam * T, n - T)
    end = int(rng.integers(L + T, n + 1))
    return split_window(ds.values[:n], L, T, end, frequency=ds.frequency, period=P,
                        dataset_id=ds.name), end


def sample_batch(archive: Sequence, geometry, batch_size: int, rng: np.random.Generator,
                 data_cfg: DataConfig = DataConfig()) -> Batch:
    """Draw filtered, normalized training windows until ``batch_size`` are accepted.

    ``archive`` is a sequence of datasets exposing ``name``, ``values``,
    ``frequency``, ``period`` and ``train_end``.
    """
    if not archive:
        raise DataQualityError("archive is empty")
    bounds = make_pixel_bounds(data_cfg.pixel_mean, data_cfg.pixel_std)
    examples, candidates, rejected, streak = [], 0, 0, 0
    limit = data_cfg.max_reject_factor * batch_size
    while len(examples) < batch_size:
        ds = archive[int(rng.integers(len(archive)))]
        sample, end = _draw_candidate(ds, data_cfg, rng)
        candidates += 1
        stats = compute_stats(sample.context, data_cfg.r, data_cfg.eps)
        nc = normalize(sample.context, stats)
        nt = normalize(sample.target, stats)
        if data_cfg.use_filter and not filter_sample(nc, nt, bounds):
            rejected += 1
            streak += 1
            if streak >= limit:
                raise DataQualityError(
                    f"{streak} consecutive windows rejected by the pixel-range filter "
                    f"(rejection rate {rejected / candidates:.1%})"
                )
            continue
        streak = 0
        colors = assign_colors(sample.M, "random", rng)
        plan = make_plan(geometry, sample.L, sample.T, sample.M, sample.period,
                         stats=stats, colors=colors, grayscale=data_cfg.grayscale)
        examples.append(TrainingExample(sample, nc, nt, plan, end))
    return Batch(examples, candidates, rejected)


def batch_loss(model: QuantileMAE, examples: Sequence[TrainingExample]):
    """Mean over examples of the quantile loss between extracted heads and normalized targets.

    Returns ``(loss, per_level)`` as tensors; only the masked half is ever read,
    and padded rows never reach the loss.
    """
    geometry = model.config.geometry
    dtype = next(model.parameters()).dtype
    images, mask = [], None
    for ex in examples:
        full, mask = build_model_input(render_context(ex.norm_context, ex.plan), geometry)
        images.append(full)
    images = torch.as_tensor(np.stack(images), dtype=dtype)
    rec = model(images, mask)
    levels = model.config.quantiles.levels
    terms = []
    for b, ex in enumerate(examples):
        preds = extract_normalized(rec[b], ex.plan)
        target = torch.as_tensor(ex.norm_target, dtype=dtype)
        terms.append(quantile_terms(preds, target, levels))
    per_level = torch.stack(terms).mean(dim=0)
    return per_level.mean(), per_level


@dataclass
class TrainResult:
    model: QuantileMAE
    trace: list

    def losses(self) -> np.ndarray:
        return np.array([row["loss"] for row in self.trace])


def train(archive: Sequence, model_cfg: ModelConfig, opt_cfg: OptimizerConfig,
          init: Optional[QuantileMAE] = None, *, data_cfg: DataConfig = DataConfig(),
          seed: int = 0, log_every: int = 100, max_steps: Optional[int] = None,
          callback: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Continual-pretraining loop; one trace row per step.

    ``max_steps`` stops early while keeping the learning-rate schedule of
    ``opt_cfg``; ``max_steps=0`` returns the initial parameters untouched.
    """
    model = init if init is not None else init_random(model_cfg)
    if model.config != model_cfg:
        raise ConfigError("initial parameters were built for a different model config")
    rng = np.random.default_rng(seed)
    params = dict(model.named_parameters())
    state = AdamWState()
    levels = model_cfg.quantiles.levels
    trace = []
    model.train()
    n_steps = opt_cfg.total_steps if max_steps is None else min(max_steps, opt_cfg.total_steps)
    for step in range(1, n_steps + 1):
        batch = sample_batch(archive, model_cfg.geometry, opt_cfg.batch_size, rng, data_cfg)
        model.zero_grad(set_to_none=True)
        loss, per_level = batch_loss(model, batch.examples)
        if not torch.isfinite(loss):
            raise NumericalError(
                f"non-finite loss at step {step} (batch {batch.fingerprint()})"
            )
        loss.backward()
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        if opt_cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(list(grads.values()), opt_cfg.grad_clip)
        optimizer_step(params, grads, state, lr_at_step(step, opt_cfg), opt_cfg)
        row = {"step": step, "loss": loss.item(),
               **{f"l_{q:g}": float(v) for q, v in zip(levels, per_level.detach())},
               "reject_rate": batch.reject_rate}
        trace.append(row)
        if callback is not None:
            callback(row)
        if log_every and step % log_every == 0:
            recent = np.mean([r["loss"] for r in trace[-log_every:]])
            logger.info("step %d  loss %.5f  reject %.3f", step, recent, batch.reject_rate)
    model.eval()
    return TrainResult(model, trace)
