"""Masked-autoencoder vision transformer with parallel quantile heads."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import CheckpointError, ConfigError, ImageGeometry, QuantileSet


@dataclass(frozen=True)
class ModelConfig:
    W: int = 32
    S: int = 8
    enc_dim: int = 64
    enc_depth: int = 2
    enc_heads: int = 4
    dec_dim: int = 32
    dec_depth: int = 1
    dec_heads: int = 4
    mlp_ratio: float = 4.0
    h: int = 9
    seed: int = 0

    def __post_init__(self):
        ImageGeometry(self.W, self.S)
        if self.enc_dim % self.enc_heads:
            raise ConfigError(f"enc_dim {self.enc_dim} not divisible by enc_heads {self.enc_heads}")
        if self.dec_dim % self.dec_heads:
            raise ConfigError(f"dec_dim {self.dec_dim} not divisible by dec_heads {self.dec_heads}")
        if self.h < 1 or self.h % 2 == 0:
            raise ConfigError(f"h must be a positive odd number, got {self.h}")
        if self.enc_dim % 4 or self.dec_dim % 4:
            raise ConfigError("embedding dims must be multiples of 4 for 2-D sin-cos positions")

    @property
    def geometry(self) -> ImageGeometry:
        return ImageGeometry(self.W, self.S)

    @property
    def quantiles(self) -> QuantileSet:
        return QuantileSet(self.h)

    @property
    def patch_dim(self) -> int:
        return self.S * self.S * 3

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


PRESETS = {
    "desk": ModelConfig(),
    "tiny": ModelConfig(W=16, S=8, enc_dim=16, enc_depth=1, enc_heads=2,
                        dec_dim=16, dec_depth=1, dec_heads=2, h=3),
    "base": ModelConfig(W=224, S=16, enc_dim=768, enc_depth=12, enc_heads=12,
                        dec_dim=512, dec_depth=8, dec_heads=16, h=9),
}


def sincos_pos_table(dim: int, grid: int) -> np.ndarray:
    """Fixed 2-D sin-cos table of shape ``(1 + grid**2, dim)``; row 0 (class slot) is zero."""
    def one_axis(d, pos):
        omega = 1.0 / 10000 ** (np.arange(d // 2, dtype=np.float64) / (d / 2.0))
        out = np.outer(pos.reshape(-1), omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    gh, gw = np.meshgrid(np.arange(grid, dtype=np.float64), np.arange(grid, dtype=np.float64),
                         indexing="ij")
    table = np.concatenate([one_axis(dim // 2, gw), one_axis(dim // 2, gh)], axis=1)
    return np.concatenate([np.zeros((1, dim)), table], axis=0)


def patchify(image, S: int):
    """(..., W, W, 3) -> (..., N*N, S*S*3); patches row-major, pixels row-major then channel."""
    W = image.shape[-2]
    if image.shape[-3] != W or W % S:
        raise ValueError(f"image {tuple(image.shape)} cannot be split into {S}-pixel patches")
    N = W // S
    lead = tuple(image.shape[:-3])
    x = image.reshape(*lead, N, S, N, S, 3)
    x = x.transpose(-4, -3) if isinstance(x, torch.Tensor) else np.swapaxes(x, -4, -3)
    return x.reshape(*lead, N * N, S * S * 3)


def unpatchify(patches, S: int):
    n2 = patches.shape[-2]
    N = int(round(n2 ** 0.5))
    if N * N != n2 or patches.shape[-1] != S * S * 3:
        raise ValueError(f"patch tensor {tuple(patches.shape)} does not match patch size {S}")
    lead = tuple(patches.shape[:-2])
    x = patches.reshape(*lead, N, N, S, S, 3)
    x = x.transpose(-4, -3) if isinstance(x, torch.Tensor) else np.swapaxes(x, -4, -3)
    return x.reshape(*lead, N * S, N * S, 3)


class Attention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, n, C = x.shape
        qkv = self.qkv(x).reshape(B, n, 3, self.num_heads, C // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = ((q @ k.transpose(-2, -1)) * self.scale).softmax(dim=-1)
        return self.proj((attn @ v).transpose(1, 2).reshape(B, n, C))


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, dim, num_heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class QuantileMAE(nn.Module):
    """Visible-patch encoder, mask-token decoder and ``h`` linear pixel heads.

    Calling the module with images ``(B, W, W, 3)`` and a boolean ``(N, N)`` mask
    returns ``(B, h, W, W, 3)``: head pixels on masked patches, input pixels
    copied through on visible ones.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        N = c.W // c.S
        self.patch_embed = nn.Linear(c.patch_dim, c.enc_dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, c.enc_dim))
        self.enc = nn.ModuleList(Block(c.enc_dim, c.enc_heads, c.mlp_ratio) for _ in range(c.enc_depth))
        self.enc_norm = nn.LayerNorm(c.enc_dim, eps=1e-6)
        self.dec_embed = nn.Linear(c.enc_dim, c.dec_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, c.dec_dim))
        self.dec = nn.ModuleList(Block(c.dec_dim, c.dec_heads, c.mlp_ratio) for _ in range(c.dec_depth))
        self.dec_norm = nn.LayerNorm(c.dec_dim, eps=1e-6)
        self.head = nn.ModuleList(nn.Linear(c.dec_dim, c.patch_dim) for _ in range(c.h))
        enc_pos = torch.from_numpy(sincos_pos_table(c.enc_dim, N)).float()
        dec_pos = torch.from_numpy(sincos_pos_table(c.dec_dim, N)).float()
        self.register_buffer("enc_pos", enc_pos[None], persistent=False)
        self.register_buffer("dec_pos", dec_pos[None], persistent=False)

    def forward(self, images, mask):
        c = self.config
        N = c.W // c.S
        mask = torch.as_tensor(mask, dtype=torch.bool)
        if tuple(mask.shape) != (N, N):
            raise ValueError(f"mask must be ({N}, {N}), got {tuple(mask.shape)}")
        if images.ndim == 3:
            images = images[None]
        B = images.shape[0]
        flat = mask.reshape(-1)
        vis = torch.nonzero(~flat).reshape(-1)

        patches = patchify(images, c.S)
        x = self.patch_embed(patches[:, vis]) + self.enc_pos[:, 1:][:, vis]
        cls = (self.cls_token + self.enc_pos[:, :1]).expand(B, -1, -1)
        x = torch.cat([cls, x], dim=1)
        for blk in self.enc:
            x = blk(x)
        x = self.dec_embed(self.enc_norm(x))

        tokens = self.mask_token.expand(B, N * N, -1).clone()
        tokens[:, vis] = x[:, 1:]
        y = torch.cat([x[:, :1], tokens], dim=1) + self.dec_pos
        for blk in self.dec:
            y = blk(y)
        y = self.dec_norm(y)[:, 1:]

        keep = flat[None, :, None]
        outs = [unpatchify(torch.where(keep, head(y), patches), c.S) for head in self.head]
        return torch.stack(outs, dim=1)


def no_decay(name: str) -> bool:
    """Parameters exempt from weight decay: biases, norm gains, class and mask tokens."""
    return name.endswith(".bias") or "norm" in name or name in ("cls_token", "mask_token")


def init_random(config: ModelConfig) -> QuantileMAE:
    """Truncated-normal (std 0.02) weights, zero biases, unit norm gains; seeded."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = QuantileMAE(config)
        for name, p in model.named_parameters():
            if name.endswith(".bias"):
                nn.init.zeros_(p)
            elif "norm" in name:
                nn.init.ones_(p)
            else:
                nn.init.trunc_normal_(p, std=0.02, a=-0.04, b=0.04)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# checkpoints ---------------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _write_member(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(model: QuantileMAE, path, extra: dict | None = None) -> None:
    """Write a flat zip of ``.npy`` tensors plus ``manifest.json``.

    Output bytes depend only on the tensors, config and ``extra``.
    """
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    manifest = {
        "format": "viforecast-checkpoint/1",
        "config": asdict(model.config),
        "tensors": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in state.items()},
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write_member(zf, "manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode())
        for name in sorted(state):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(state[name]), allow_pickle=False)
            _write_member(zf, f"tensors/{name}.npy", buf.getvalue())


def read_checkpoint(path):
    """Return ``(manifest, {name: ndarray})`` from a checkpoint archive."""
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            tensors = {}
            for name in manifest["tensors"]:
                with zf.open(f"tensors/{name}.npy") as fh:
                    tensors[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return manifest, tensors


def _load_checked(model: QuantileMAE, state: dict) -> QuantileMAE:
    expected = model.state_dict()
    missing = sorted(set(expected) - set(state))
    if missing:
        raise CheckpointError(f"checkpoint lacks tensor {missing[0]!r}")
    extra = sorted(set(state) - set(expected))
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensor {extra[0]!r}")
    for name, ref in expected.items():
        if tuple(state[name].shape) != tuple(ref.shape):
            raise CheckpointError(
                f"tensor {name!r} has shape {tuple(state[name].shape)}, "
                f"config expects {tuple(ref.shape)}"
            )
    model.load_state_dict({k: torch.as_tensor(np.asarray(v)).to(expected[k].dtype)
                           for k, v in state.items()})
    return model


def load_checkpoint(path) -> tuple[QuantileMAE, dict]:
    manifest, tensors = read_checkpoint(path)
    config = ModelConfig.from_dict(manifest["config"])
    return _load_checked(QuantileMAE(config), tensors), manifest


# mapping from the standard single-head masked-autoencoder layout
_PRETRAINED_RENAMES = (
    ("blocks.", "enc."),
    ("norm.", "enc_norm."),
    ("decoder_embed.", "dec_embed."),
    ("decoder_blocks.", "dec."),
    ("decoder_norm.", "dec_norm."),
)
_PRETRAINED_SKIP = ("pos_embed", "decoder_pos_embed")


def map_pretrained_state(state: dict, config: ModelConfig) -> dict:
    """Rename a single-head MAE state dict into this layout, copying the head ``h`` times."""
    out = {}
    for name, value in state.items():
        value = np.asarray(value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else value)
        if name in _PRETRAINED_SKIP:
            continue
        if name == "patch_embed.proj.weight":
            # conv (out, c, i, j) -> linear over (i, j, c) pixel order
            out["patch_embed.weight"] = value.transpose(0, 2, 3, 1).reshape(value.shape[0], -1)
            continue
        if name == "patch_embed.proj.bias":
            out["patch_embed.bias"] = value
            continue
        if name.startswith("decoder_pred."):
            suffix = name[len("decoder_pred."):]
            for i in range(config.h):
                out[f"head.{i}.{suffix}"] = value.copy()
            continue
        for old, new in _PRETRAINED_RENAMES:
            if name.startswith(old):
                name = new + name[len(old):]
                break
        out[name] = value
    return out


def init_from_pretrained(weight_file, config: ModelConfig) -> QuantileMAE:
    """Load pretrained trunk weights; every quantile head starts as the single pretrained head.

    Accepts a torch ``.pth`` file in the standard MAE layout (optionally nested
    under ``"model"``) or a checkpoint archive written by :func:`save_checkpoint`.
    Validation happens before any tensor is assigned.
    """
    path = Path(weight_file)
    if zipfile.is_zipfile(path) and _is_own_archive(path):
        _, state = read_checkpoint(path)
        n_heads = len({k.split(".")[1] for k in state if k.startswith("head.")})
        if n_heads == 1 and config.h > 1:
            # single-head archive: same copy rule as for the standard layout
            for k in [k for k in state if k.startswith("head.0.")]:
                for i in range(1, config.h):
                    state[k.replace("head.0.", f"head.{i}.", 1)] = state[k].copy()
    else:
        try:
            raw = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise CheckpointError(f"cannot read pretrained weights {path}: {exc}") from exc
        if isinstance(raw, dict) and "model" in raw:
            raw = raw["model"]
        state = map_pretrained_state(raw, config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = QuantileMAE(config)
    return _load_checked(model, state)


def _is_own_archive(path) -> bool:
    with zipfile.ZipFile(path) as zf:
        return "manifest.json" in zf.namelist()


def reconstruct(model: QuantileMAE, image, mask) -> np.ndarray:
    """Numpy convenience wrapper: one ``(W, W, 3)`` image in, ``(h, W, W, 3)`` out."""
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(torch.as_tensor(np.asarray(image), dtype=dtype)[None], mask)
    return out[0].to(torch.float64).numpy()
