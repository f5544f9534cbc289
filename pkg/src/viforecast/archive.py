"""On-disk dataset archive (CSV + JSON per dataset) and synthetic generators."""

from __future__ import annotations

import hashlib
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ConfigError, DataQualityError, infer_periodicity

CACHE_ENV = "VIFORECAST_CACHE"


@dataclass(frozen=True)
class SeriesDataset:
    name: str
    values: np.ndarray  # (rows, M), oldest first
    frequency: str
    period: int
    train_end: int
    columns: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if not self.columns:
            object.__setattr__(self, "columns", tuple(f"v{i}" for i in range(values.shape[1])))
        if not np.all(np.isfinite(values)):
            raise DataQualityError(f"dataset {self.name!r} contains non-finite values")
        if not 0 < self.train_end <= values.shape[0]:
            raise DataQualityError(
                f"dataset {self.name!r}: train_end {self.train_end} outside (0, {values.shape[0]}]"
            )

    @property
    def M(self) -> int:
        return self.values.shape[1]


def _format_csv(values: np.ndarray, columns) -> bytes:
    buf = io.StringIO()
    np.savetxt(buf, values, fmt="%.17g", delimiter=",", header=",".join(columns), comments="")
    return buf.getvalue().encode()


def write_dataset(root, ds: SeriesDataset, *, write_period: bool = True) -> Path:
    d = Path(root) / ds.name
    d.mkdir(parents=True, exist_ok=True)
    (d / "data.csv").write_bytes(_format_csv(ds.values, ds.columns))
    meta = {"name": ds.name, "frequency": ds.frequency, "train_end": int(ds.train_end)}
    if write_period:
        meta["period"] = int(ds.period)
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def write_archive(root, datasets) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for ds in datasets:
        write_dataset(root, ds)
    return root


def _cached_period(name: str, frequency: str, values: np.ndarray) -> int:
    cache_dir = os.environ.get(CACHE_ENV)
    if not cache_dir:
        return infer_periodicity(frequency, values)
    key = hashlib.sha256(values.tobytes() + frequency.encode()).hexdigest()[:16]
    path = Path(cache_dir) / "periods.json"
    cache = json.loads(path.read_text()) if path.exists() else {}
    entry = f"{name}:{key}"
    if entry not in cache:
        cache[entry] = infer_periodicity(frequency, values)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(cache, indent=1, sort_keys=True))
    return int(cache[entry])


def read_dataset(path) -> SeriesDataset:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
        text = (path / "data.csv").read_text()
    except (OSError, json.JSONDecodeError) as exc:
        raise DataQualityError(f"cannot read dataset at {path}: {exc}") from exc
    header, _, body = text.partition("\n")
    columns = tuple(header.strip().split(","))
    values = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2, dtype=np.float64)
    if values.shape[1] != len(columns):
        raise DataQualityError(f"{path / 'data.csv'}: header has {len(columns)} columns, rows have {values.shape[1]}")
    frequency = meta.get("frequency", "")
    train_end = int(meta.get("train_end", values.shape[0]))
    period = meta.get("period")
    if period is None:
        period = _cached_period(meta.get("name", path.name), frequency, values[:train_end])
    return SeriesDataset(meta.get("name", path.name), values, frequency, int(period), train_end, columns)


def read_archive(root, names: Optional[list] = None) -> list:
    """Load every dataset directory under ``root`` (sorted by name)."""
    root = Path(root)
    if not root.is_dir():
        raise DataQualityError(f"archive root {root} does not exist")
    found = sorted(p for p in root.iterdir() if (p / "meta.json").exists())
    if names is not None:
        by_name = {p.name: p for p in found}
        missing = [n for n in names if n not in by_name]
        if missing:
            raise DataQualityError(f"dataset {missing[0]!r} not found in {root}")
        found = [by_name[n] for n in names]
    return [read_dataset(p) for p in found]


# synthetic generators ------------------------------------------------------

def _season(n, period, amp, phase):
    t = np.arange(n, dtype=np.float64)
    return amp * np.sin(2 * np.pi * t / period + phase)


def gen_sinusoid(rng, length, period=24, amp=1.0, phase=0.0, noise_std=0.1, offset=0.0):
    return offset + _season(length, period, amp, phase) + noise_std * rng.standard_normal(length)


def gen_trend_season(rng, length, period=24, amp=1.0, phase=0.0, noise_std=0.1, slope=0.001,
                     offset=0.0):
    t = np.arange(length, dtype=np.float64)
    return gen_sinusoid(rng, length, period, amp, phase, noise_std, offset) + slope * t


def gen_ar1(rng, length, phi=0.8, sigma=1.0, offset=0.0):
    x = np.empty(length)
    x[0] = sigma / np.sqrt(1 - phi ** 2) * rng.standard_normal()
    eps = sigma * rng.standard_normal(length)
    for t in range(1, length):
        x[t] = phi * x[t - 1] + eps[t]
    return offset + x


def gen_spike(rng, length, period=24, amp=1.0, phase=0.0, noise_std=0.1, offset=0.0,
              spike_sigma=100.0, spike_prob=0.02):
    """Noisy sinusoid with isolated spikes of ``spike_sigma`` noise standard deviations."""
    x = gen_sinusoid(rng, length, period, amp, phase, noise_std, offset)
    hits = rng.random(length) < spike_prob
    signs = rng.choice([-1.0, 1.0], size=length)
    x[hits] += signs[hits] * spike_sigma * noise_std
    return x


GENERATORS = {
    "sinusoid": gen_sinusoid,
    "trend_season": gen_trend_season,
    "ar1": gen_ar1,
    "spike": gen_spike,
}


def synth_datasets(spec: dict) -> list:
    """Build datasets from a generator spec; deterministic given ``spec['seed']``.

    Each entry of ``spec['datasets']`` names a generator plus its keyword
    arguments, and may set ``variates`` (independent draws per column, with the
    phase advanced by ``phase_step`` per variate), ``length``, ``frequency``,
    ``period`` and ``train_frac``.
    """
    seed = int(spec.get("seed", 0))
    out = []
    for i, entry in enumerate(spec.get("datasets", [])):
        entry = dict(entry)
        gen_name = entry.pop("generator")
        if gen_name not in GENERATORS:
            raise ConfigError(f"unknown generator {gen_name!r}")
        name = entry.pop("name", f"{gen_name}_{i}")
        length = int(entry.pop("length", 2000))
        variates = int(entry.pop("variates", 1))
        frequency = entry.pop("frequency", "H")
        train_frac = float(entry.pop("train_frac", 0.8))
        phase_step = float(entry.pop("phase_step", 0.0))
        period = entry.pop("period", None)
        accepted = GENERATORS[gen_name].__code__.co_varnames
        if period is not None and "period" in accepted:
            entry["period"] = period
        rng = np.random.default_rng([seed, i])
        cols = []
        for v in range(variates):
            kwargs = dict(entry)
            if phase_step and "phase" in accepted:
                kwargs["phase"] = kwargs.get("phase", 0.0) + v * phase_step
            try:
                cols.append(GENERATORS[gen_name](rng, length, **kwargs))
            except TypeError as exc:
                raise ConfigError(f"dataset {name!r}: {exc}") from exc
        values = np.stack(cols, axis=1)
        if period is None:
            period = infer_periodicity(frequency, values)
        train_end = max(1, int(round(train_frac * length)))
        out.append(SeriesDataset(name, values, frequency, int(period), train_end))
    return out
