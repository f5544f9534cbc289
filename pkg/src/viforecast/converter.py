"""Conversion between normalized series and image space.

Every variate is folded by its period into a (P, L // P) matrix, resized to a
horizontal strip of the left image half and drawn on one RGB channel. The
inverse path reads the strip back from the right half of a reconstruction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import torch

from .core import ForecastSet, ImageGeometry, QuantileSet, WindowError
from .filtering import NormalizationStats, denormalize


@dataclass(frozen=True)
class ColorAssignment:
    channels: tuple
    mode: str = "cyclic"

    def __post_init__(self):
        channels = tuple(int(c) for c in self.channels)
        object.__setattr__(self, "channels", channels)
        if any(c not in (0, 1, 2) for c in channels):
            raise ValueError(f"channel indices must be 0, 1 or 2, got {channels}")
        for v in range(1, len(channels)):
            if channels[v] == channels[v - 1]:
                raise ValueError(f"variates {v - 1} and {v} share channel {channels[v]}")

    def __len__(self):
        return len(self.channels)


def assign_colors(M: int, mode: str = "cyclic", seed=None) -> ColorAssignment:
    """Pick an RGB channel per variate so that neighbours never share one.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if M < 1:
        raise ValueError(f"M must be positive, got {M}")
    if mode == "cyclic":
        return ColorAssignment(tuple(v % 3 for v in range(M)), mode)
    if mode != "random":
        raise ValueError(f"unknown color mode {mode!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    channels = [int(rng.integers(3))]
    for _ in range(1, M):
        # uniform over the two channels that differ from the previous one
        step = int(rng.integers(1, 3))
        channels.append((channels[-1] + step) % 3)
    return ColorAssignment(tuple(channels), mode)


@dataclass(frozen=True)
class ColorImagePlan:
    geometry: ImageGeometry
    M: int
    P: int
    L: int
    T: int
    colors: ColorAssignment
    stats: Optional[NormalizationStats] = None
    grayscale: bool = False

    def __post_init__(self):
        W = self.geometry.W
        if self.M < 1 or self.M > W:
            raise ValueError(f"cannot stack {self.M} variates into a {W}-pixel image")
        if self.P < 1 or self.L < self.P:
            raise WindowError(f"context length {self.L} shorter than period {self.P}")
        if self.T < 1:
            raise WindowError(f"horizon must be positive, got {self.T}")
        if len(self.colors) != self.M:
            raise ValueError(f"{len(self.colors)} colors for {self.M} variates")
        if self.stats is not None and self.stats.M != self.M:
            raise ValueError(f"stats cover {self.stats.M} variates, plan has {self.M}")
        if self.sub_h < self.geometry.S:
            warnings.warn(
                f"subfigure height {self.sub_h} is below the patch size {self.geometry.S}; "
                "neighbouring variates will share patches",
                stacklevel=2,
            )

    @property
    def context_cols(self) -> int:
        return self.L // self.P

    @property
    def target_cols(self) -> int:
        return math.ceil(self.T / self.P)

    @property
    def sub_h(self) -> int:
        return self.geometry.W // self.M

    @property
    def pad_rows(self) -> int:
        return self.geometry.W - self.sub_h * self.M

    @property
    def half(self) -> int:
        return self.geometry.W // 2

    def rows(self, v: int) -> slice:
        return slice(v * self.sub_h, (v + 1) * self.sub_h)


def make_plan(geometry: ImageGeometry, L: int, T: int, M: int, P: int, *, stats=None,
              colors: Optional[ColorAssignment] = None, grayscale: bool = False) -> ColorImagePlan:
    if colors is None:
        colors = assign_colors(M, "cyclic")
    return ColorImagePlan(geometry, M, P, L, T, colors, stats, grayscale)


def fold_by_period(series, P: int) -> np.ndarray:
    """Stack consecutive length-``P`` subsequences as columns, oldest first.

    The oldest ``len % P`` points are dropped.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if P < 1 or x.shape[0] < P:
        raise WindowError(f"series of length {x.shape[0]} is shorter than period {P}")
    cols = x.shape[0] // P
    return x[x.shape[0] - cols * P:].reshape(cols, P).T.copy()


def unfold_by_period(matrix, T: int) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape[0] * m.shape[1] < T:
        raise WindowError(f"{m.shape} matrix holds fewer than {T} values")
    return m.T.reshape(-1)[:T].copy()


@lru_cache(maxsize=None)
def resize_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Linear map (n_dst, n_src) for 1-D interpolation with half-pixel centres."""
    if n_src < 1 or n_dst < 1:
        raise ValueError(f"sizes must be positive, got {n_src} -> {n_dst}")
    A = np.zeros((n_dst, n_src))
    scale = n_src / n_dst
    for d in range(n_dst):
        s = min(max((d + 0.5) * scale - 0.5, 0.0), n_src - 1.0)
        i0 = int(math.floor(s))
        i1 = min(i0 + 1, n_src - 1)
        w = s - i0
        A[d, i0] += 1.0 - w
        A[d, i1] += w
    A.setflags(write=False)
    return A


_torch_matrices: dict = {}


def _resize_matrix_torch(n_src, n_dst, dtype):
    key = (n_src, n_dst, dtype)
    if key not in _torch_matrices:
        _torch_matrices[key] = torch.from_numpy(resize_matrix(n_src, n_dst).copy()).to(dtype)
    return _torch_matrices[key]


def bilinear_resize(matrix, out_h: int, out_w: int):
    """Bilinearly resample the last two axes to ``(out_h, out_w)``.

    Accepts numpy arrays or torch tensors; torch inputs stay differentiable.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got ({out_h}, {out_w})")
    h, w = matrix.shape[-2], matrix.shape[-1]
    if isinstance(matrix, torch.Tensor):
        Ah = _resize_matrix_torch(h, out_h, matrix.dtype)
        Aw = _resize_matrix_torch(w, out_w, matrix.dtype)
        return Ah @ matrix @ Aw.T
    m = np.asarray(matrix, dtype=np.float64)
    return resize_matrix(h, out_h) @ m @ resize_matrix(w, out_w).T


def render_context(norm_context, plan: ColorImagePlan) -> np.ndarray:
    """Draw the normalized context as the left ``(W, W/2, 3)`` image half."""
    x = np.asarray(norm_context, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape != (plan.L, plan.M):
        raise ValueError(f"context shape {x.shape} does not match plan ({plan.L}, {plan.M})")
    W, half = plan.geometry.W, plan.half
    image = np.zeros((W, half, 3))
    for v in range(plan.M):
        strip = bilinear_resize(fold_by_period(x[:, v], plan.P), plan.sub_h, half)
        if plan.grayscale:
            image[plan.rows(v), :, :] = strip[:, :, None]
        else:
            image[plan.rows(v), :, plan.colors.channels[v]] = strip
    return image


def render_target(norm_target, plan: ColorImagePlan) -> np.ndarray:
    """Draw a normalized target as a right image half (used for debugging and checks)."""
    x = np.asarray(norm_target, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape != (plan.T, plan.M):
        raise ValueError(f"target shape {x.shape} does not match plan ({plan.T}, {plan.M})")
    W, half = plan.geometry.W, plan.half
    padded = np.zeros((plan.target_cols * plan.P, plan.M))
    padded[:plan.T] = x
    # fold without dropping anything: padding sits at the newest end
    image = np.zeros((W, half, 3))
    for v in range(plan.M):
        folded = padded[:, v].reshape(plan.target_cols, plan.P).T
        strip = bilinear_resize(folded, plan.sub_h, half)
        if plan.grayscale:
            image[plan.rows(v), :, :] = strip[:, :, None]
        else:
            image[plan.rows(v), :, plan.colors.channels[v]] = strip
    return image


def build_model_input(left_image, geometry: ImageGeometry):
    """Pad the left half with a zero right half and mask the right patch columns."""
    left = np.asarray(left_image, dtype=np.float64)
    W = geometry.W
    if left.shape != (W, W // 2, 3):
        raise ValueError(f"left image must be ({W}, {W // 2}, 3), got {left.shape}")
    full = np.zeros((W, W, 3))
    full[:, :W // 2] = left
    N = geometry.N
    mask = np.zeros((N, N), dtype=bool)
    mask[:, N // 2:] = True
    return full, mask


def extract_normalized(reconstructed, plan: ColorImagePlan, T: Optional[int] = None):
    """Read forecasts of shape ``(h, T, M)`` from ``(h, W, W, 3)`` reconstructions.

    Stays in normalized space and works on torch tensors (differentiably) as well
    as numpy arrays.
    """
    T = plan.T if T is None else T
    if T > plan.target_cols * plan.P:
        raise WindowError(f"horizon {T} exceeds {plan.target_cols} periods of {plan.P}")
    is_numpy = not isinstance(reconstructed, torch.Tensor)
    rec = torch.from_numpy(np.asarray(reconstructed, dtype=np.float64)) if is_numpy else reconstructed
    if rec.ndim == 3:
        rec = rec[None]
    W, half = plan.geometry.W, plan.half
    if tuple(rec.shape[1:]) != (W, W, 3):
        raise ValueError(f"reconstruction must be (h, {W}, {W}, 3), got {tuple(rec.shape)}")
    right = rec[:, :, half:, :]
    series = []
    for v in range(plan.M):
        rows = right[:, plan.rows(v)]
        strip = rows.mean(dim=-1) if plan.grayscale else rows[..., plan.colors.channels[v]]
        folded = bilinear_resize(strip, plan.P, plan.target_cols)
        series.append(folded.transpose(-1, -2).reshape(rec.shape[0], -1)[:, :T])
    out = torch.stack(series, dim=-1)
    return out.numpy() if is_numpy else out


def extract_forecasts(reconstructed, plan: ColorImagePlan, T: Optional[int] = None,
                      quantiles: Optional[QuantileSet] = None) -> ForecastSet:
    """Invert reconstructions into a raw-unit ``ForecastSet``."""
    if plan.stats is None:
        raise ValueError("plan carries no normalization stats")
    norm = np.asarray(extract_normalized(reconstructed, plan, T))
    raw = np.stack([denormalize(head, plan.stats) for head in norm])
    return ForecastSet(raw, quantiles or QuantileSet(raw.shape[0]))


def save_png(image, path, lo: float, hi: float) -> None:
    """Write an image in normalized pixel space as an 8-bit PNG, mapping [lo, hi] to [0, 255]."""
    from PIL import Image

    a = np.asarray(image, dtype=np.float64)
    a = np.clip((a - lo) / (hi - lo), 0.0, 1.0)
    Image.fromarray(np.round(a * 255).astype(np.uint8)).save(path)
