import numpy as np
import pytest
import torch

from viforecast.archive import SeriesDataset, synth_datasets

torch.set_num_threads(1)

ACCEPTANCE_RESULTS = []


def record(criterion, passed, detail=""):
    line = f"{criterion}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


def sine_spec(n=20, seed=1, length=1500, noise=0.2, generator=None, **extra):
    return {
        "seed": seed,
        "datasets": [
            {"generator": generator or ("sinusoid" if i % 2 == 0 else "trend_season"),
             "name": f"s{i:02d}", "length": length, "period": 24, "amp": 1.0 + 0.1 * i,
             "phase": 0.3 * i, "noise_std": noise, "offset": 5.0, **extra}
            for i in range(n)
        ],
    }


@pytest.fixture(scope="session")
def smooth_archive():
    return synth_datasets(sine_spec(n=4, length=600, noise=0.05))


@pytest.fixture(scope="session")
def dense_spike_archive():
    """Every admissible window holds at least one -100 sigma spike."""
    rng = np.random.default_rng(0)
    x = 5.0 + 0.01 * rng.standard_normal(2000)
    x[::40] -= 100 * 0.01
    return [SeriesDataset("spiky", x, "H", 24, 2000)]
