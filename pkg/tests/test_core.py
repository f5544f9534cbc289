import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viforecast.core import (ForecastSet, ImageGeometry, PeriodError, QuantileSet,
                             TimeSeriesSample, WindowError, infer_periodicity, split_window)


def brute_acf_period(x):
    """Reference: loop-based lag correlation, smallest lag within 1e-9 of the best."""
    x = [float(v) for v in x]
    n = len(x)
    best_lag, best = 1, -2.0
    scores = {}
    for lag in range(2, n // 2 + 1):
        a, b = x[:-lag], x[lag:]
        ma, mb = sum(a) / len(a), sum(b) / len(b)
        num = sum((p - ma) * (q - mb) for p, q in zip(a, b))
        da = sum((p - ma) ** 2 for p in a)
        db = sum((q - mb) ** 2 for q in b)
        scores[lag] = num / (da * db) ** 0.5 if da * db > 0 else 0.0
    best = max(scores.values())
    if best <= 0.1:
        return 1
    return min(lag for lag, s in scores.items() if s >= best - 1e-9)


@pytest.mark.parametrize("token,expected", [
    ("H", 24), ("30min", 48), ("15min", 96), ("D", 7), ("W", 52), ("M", 12), ("Q", 4), ("Y", 1),
])
def test_period_lookup(token, expected):
    assert infer_periodicity(token) == expected


def test_period_from_sine_matches_bruteforce():
    t = np.arange(120)
    x = np.sin(2 * np.pi * t / 12 + 0.3)
    assert brute_acf_period(x) == 12
    assert infer_periodicity("unknown", x[:, None]) == 12


@pytest.mark.parametrize("p", range(2, 51))
def test_period_recovers_integer_sinusoids(p):
    t = np.arange(4 * p)
    x = np.sin(2 * np.pi * t / p + 0.3)
    assert infer_periodicity(None, x) == p


def test_period_uses_variate_mean():
    t = np.arange(200)
    x = np.stack([np.sin(2 * np.pi * t / 10), 0.5 * np.sin(2 * np.pi * t / 10 + 0.1)], axis=1)
    assert infer_periodicity("??", x) == 10


def test_white_noise_has_no_period():
    x = np.random.default_rng(0).standard_normal(2000)
    assert brute_acf_period(x) == 1
    assert infer_periodicity("??", x) == 1


def test_unknown_frequency_without_series():
    with pytest.raises(PeriodError, match="cannot infer period"):
        infer_periodicity("fortnightly")


def test_split_window_examples():
    s = np.arange(10.0)
    w = split_window(s, 4, 2, 10)
    np.testing.assert_array_equal(w.context[:, 0], [4, 5, 6, 7])
    np.testing.assert_array_equal(w.target[:, 0], [8, 9])
    with pytest.raises(WindowError):
        split_window(s, 9, 2, 10)
    s3 = np.arange(30.0).reshape(10, 3)
    w = split_window(s3, 4, 2, 6)
    assert w.M == 3
    np.testing.assert_array_equal(w.context, s3[0:4])
    np.testing.assert_array_equal(w.target, s3[4:6])


def test_split_window_end_past_series():
    with pytest.raises(WindowError):
        split_window(np.arange(10.0), 2, 2, 11)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 40), st.integers(1, 4))
def test_split_window_is_contiguous_slice(L, T, extra, M):
    n = L + T + extra
    series = np.random.default_rng(n).standard_normal((n, M))
    end = L + T + extra // 2
    w = split_window(series, L, T, end)
    joined = np.concatenate([w.context, w.target])
    assert np.array_equal(joined, series[end - L - T:end])


def test_sample_invariants():
    with pytest.raises(WindowError):
        TimeSeriesSample(np.zeros((5, 2)), np.zeros((3, 1)))
    with pytest.raises(WindowError):
        TimeSeriesSample(np.zeros((5, 1)), np.zeros((3, 1)), period=6)
    s = TimeSeriesSample(np.zeros((5, 1)), np.zeros((3, 1)), period=5)
    with pytest.raises(ValueError):
        s.context[0, 0] = 1.0


def test_geometry():
    g = ImageGeometry(224, 16)
    assert (g.N, g.visible_cols) == (14, 7)
    assert ImageGeometry.legacy_alignment(14, 96, 96) == 7
    with pytest.raises(ValueError):
        ImageGeometry(30, 8)
    with pytest.raises(ValueError):
        ImageGeometry(24, 8)  # 3x3 grid has no half split


@pytest.mark.parametrize("h", [1, 3, 9, 19])
def test_quantile_levels(h):
    qs = QuantileSet(h)
    np.testing.assert_allclose(qs.levels, [i / (h + 1) for i in range(1, h + 1)])
    assert np.all(np.diff(qs.levels) > 0)
    np.testing.assert_allclose(qs.levels + qs.levels[::-1], 1.0)
    assert qs.levels[qs.median_index] == 0.5


def test_forecast_set_point_is_median_head():
    heads = np.arange(9 * 4 * 2, dtype=float).reshape(9, 4, 2)
    fs = ForecastSet(heads, QuantileSet(9))
    np.testing.assert_array_equal(fs.point, heads[4])
    with pytest.raises(ValueError):
        ForecastSet(heads[:3], QuantileSet(9))
