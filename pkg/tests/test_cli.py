import json

import numpy as np
import pytest

from viforecast.archive import read_archive
from viforecast.backbone import read_checkpoint
from viforecast.cli import main
from viforecast.config import parse_config
from viforecast.core import ConfigError

from conftest import sine_spec

TINY_CONFIG = """
model:
  preset: tiny
optim:
  warmup_steps: 2
  total_steps: 4
  batch_size: 4
train:
  log_every: 0
"""


@pytest.fixture(scope="module")
def archive_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.yaml"
    spec.write_text(json.dumps(sine_spec(n=3, length=400)))
    assert main(["synth", str(root / "arch"), str(spec)]) == 0
    (root / "run.yaml").write_text(TINY_CONFIG)
    return root


def test_synth_default_writes_twenty(tmp_path):
    assert main(["synth", str(tmp_path / "a")]) == 0
    names = [d.name for d in read_archive(tmp_path / "a")]
    assert len(names) == 20 and names[0] == "synth_00"


def test_pretrain_outputs(archive_dir, tmp_path):
    out = tmp_path / "run"
    rc = main(["--config", str(archive_dir / "run.yaml"), "pretrain",
               "--archive", str(archive_dir / "arch"), "--out", str(out), "--heads", "1"])
    assert rc == 0
    manifest, tensors = read_checkpoint(out / "checkpoint.vif")
    heads = sorted(k for k in tensors if k.startswith("head."))
    assert heads == ["head.0.bias", "head.0.weight"]
    assert manifest["extra"]["steps"] == 4
    rows = (out / "loss.csv").read_text().splitlines()
    assert rows[0] == "step,loss,l_0.5,reject_rate" and len(rows) == 5


def test_pretrain_invalid_config_key(tmp_path, archive_dir, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("optim:\n  learning_rat: 0.1\n")
    rc = main(["pretrain", "--config", str(cfg), "--archive", str(archive_dir / "arch")])
    assert rc == 2
    assert "optim.learning_rat" in capsys.readouterr().err


def test_pretrain_bad_init_and_missing_archive(tmp_path, archive_dir):
    assert main(["pretrain", "--archive", str(archive_dir / "arch"), "--init", "imagenet"]) == 2
    assert main(["pretrain", "--archive", str(tmp_path / "none")]) == 3


def test_config_parsing():
    cfg = parse_config({"model": {"preset": "tiny", "h": 5}, "norm": {"r": 0.3},
                        "filter": {"enabled": False}})
    assert cfg.model.W == 16 and cfg.model.h == 5
    assert cfg.data.r == 0.3 and not cfg.data.use_filter
    with pytest.raises(ConfigError, match="unknown config section"):
        parse_config({"modle": {}})
    with pytest.raises(ConfigError):
        parse_config({"norm": {"r": 2.0}})
    with pytest.raises(ConfigError):
        parse_config({"optim": {"warmup_steps": 10, "total_steps": 5}})


@pytest.fixture(scope="module")
def checkpoint(archive_dir):
    out = archive_dir / "ckpt"
    assert main(["--config", str(archive_dir / "run.yaml"), "--seed", "2", "pretrain",
                 "--archive", str(archive_dir / "arch"), "--out", str(out)]) == 0
    return out / "checkpoint.vif"


def test_forecast_json(checkpoint, archive_dir, tmp_path):
    args = ["forecast", str(checkpoint), str(archive_dir / "arch"), "s01", "--L", "48",
            "--T", "24", "--end", "300"]
    assert main(args + ["--out", str(tmp_path / "a.json"), "--plot", str(tmp_path / "f.png")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.json")]) == 0
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes()
    doc = json.loads(a)
    np.testing.assert_allclose(doc["levels"], np.arange(1, 4) / 4)
    assert np.shape(doc["per_head"]) == (3, 24, 1) and np.shape(doc["point"]) == (24, 1)
    assert (tmp_path / "f.png").stat().st_size > 0


def test_forecast_errors(checkpoint, archive_dir):
    base = ["forecast", str(checkpoint), str(archive_dir / "arch")]
    assert main(base + ["nope", "--L", "48", "--T", "24"]) == 3
    assert main(base + ["s01", "--L", "48", "--T", "24", "--end", "30"]) == 3


def test_evaluate(checkpoint, archive_dir, tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.write_text("[]\n")
    assert main(["evaluate", str(checkpoint), str(archive_dir / "arch"), str(empty),
                 "--out", str(tmp_path / "e.json")]) == 0
    assert json.loads((tmp_path / "e.json").read_text()) == {"datasets": {}, "aggregate": {}}

    proto = tmp_path / "p.yaml"
    proto.write_text("- {dataset: s02, L: 48, T: 24, stride: 24}\n- {dataset: s00, L: 48, T: 24}\n")
    assert main(["evaluate", str(checkpoint), str(archive_dir / "arch"), str(proto),
                 "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert list(rep["datasets"]) == ["s00", "s02"]
    block = rep["datasets"]["s00"]
    assert block["n_windows"] == 3 and len(block["coverage"]) == 3
    assert {"mae", "naive_mae", "normalized_mae"} <= set(rep["aggregate"])

    bad = tmp_path / "bad.yaml"
    bad.write_text("- {dataset: zzz, L: 48, T: 24}\n")
    assert main(["evaluate", str(checkpoint), str(archive_dir / "arch"), str(bad)]) == 3
