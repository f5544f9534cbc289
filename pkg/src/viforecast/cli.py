"""Command-line entry points: ``synth``, ``pretrain``, ``forecast``, ``evaluate``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from .archive import read_archive, synth_datasets, write_archive
from .backbone import (CheckpointError, init_from_pretrained, init_random, load_checkpoint,
                       save_checkpoint)
from .core import (ConfigError, DataQualityError, NumericalError, PeriodError, WindowError,
                   split_window)
from .estimator import predict_sample
from .evaluation import evaluate_protocol

logger = logging.getLogger("viforecast")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CHECKPOINT_NAME = "checkpoint.vif"
LOSS_NAME = "loss.csv"

DEFAULT_SYNTH = {
    "seed": 7,
    "datasets": [
        {"generator": "sinusoid" if i % 2 == 0 else "trend_season", "name": f"synth_{i:02d}",
         "length": 1500, "period": 24, "amp": 1.0 + 0.1 * i, "phase": 0.3 * i,
         "noise_std": 0.2, "offset": 5.0}
        for i in range(20)
    ],
}


def _read_structured(path):
    try:
        return yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _deterministic():
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def cmd_synth(args) -> int:
    spec = _read_structured(args.spec) if args.spec else DEFAULT_SYNTH
    spec = dict(spec or {})
    if args.seed is not None:
        spec["seed"] = args.seed
    try:
        write_archive(args.out_dir, synth_datasets(spec))
    except OSError as exc:
        raise DataQualityError(f"cannot write archive to {args.out_dir}: {exc}") from exc
    logger.info("wrote %d datasets to %s", len(spec.get("datasets", [])), args.out_dir)
    return EXIT_OK


def _write_loss_csv(path, trace, levels):
    cols = ["step", "loss", *[f"l_{q:g}" for q in levels], "reject_rate"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in trace:
            w.writerow([row["step"], *[repr(float(row[c])) for c in cols[1:]]])


def cmd_pretrain(args) -> int:
    from .config import load_config, parse_config
    from .training import train

    cfg = load_config(args.config) if args.config else parse_config({})
    model_cfg = cfg.model
    data_cfg = cfg.data
    optim = cfg.optim
    seed = model_cfg.seed if args.seed is None else args.seed
    model_cfg = model_cfg.replace(seed=seed)
    if args.heads is not None:
        model_cfg = model_cfg.replace(h=args.heads)
    if args.no_filter:
        data_cfg = dataclasses.replace(data_cfg, use_filter=False)
    if args.no_color:
        data_cfg = dataclasses.replace(data_cfg, grayscale=True)
    if args.steps is not None:
        optim = dataclasses.replace(optim, total_steps=args.steps,
                                    warmup_steps=min(optim.warmup_steps, max(args.steps, 1)))
    archive_root = args.archive or cfg.archive
    if archive_root is None:
        raise ConfigError("no archive given (data.archive or --archive)")
    archive = read_archive(archive_root, cfg.datasets)

    if args.init == "random":
        init = init_random(model_cfg)
    elif args.init.startswith("pretrained:"):
        init = init_from_pretrained(args.init.split(":", 1)[1], model_cfg)
    else:
        raise ConfigError(f"--init must be 'random' or 'pretrained:<path>', got {args.init!r}")

    _deterministic()
    result = train(archive, model_cfg, optim, init, data_cfg=data_cfg, seed=seed,
                   log_every=cfg.log_every)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"r": data_cfg.r, "eps": data_cfg.eps, "grayscale": data_cfg.grayscale,
             "use_filter": data_cfg.use_filter, "steps": optim.total_steps, "seed": seed}
    save_checkpoint(result.model, out / CHECKPOINT_NAME, extra)
    _write_loss_csv(out / LOSS_NAME, result.trace, model_cfg.quantiles.levels)
    logger.info("checkpoint written to %s", out / CHECKPOINT_NAME)
    return EXIT_OK


def _load_model(path):
    model, manifest = load_checkpoint(path)
    model.eval()
    extra = manifest.get("extra", {})
    opts = {"r": extra.get("r", 0.4), "eps": extra.get("eps", 1e-6),
            "grayscale": extra.get("grayscale", False)}
    return model, opts


def _dump(obj, out):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def plot_forecast(path, sample, forecast, columns=None):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    M = sample.M
    fig, axes = plt.subplots(M, 1, figsize=(8, 2.4 * M), squeeze=False)
    t_ctx = np.arange(-sample.L, 0)
    t_fut = np.arange(sample.T)
    heads = forecast.per_head
    for v, ax in enumerate(axes[:, 0]):
        ax.plot(t_ctx, sample.context[:, v], color="0.3", lw=1, label="context")
        if heads.shape[0] > 1:
            ax.fill_between(t_fut, heads[0][:, v], heads[-1][:, v], alpha=0.3,
                            label=f"q{forecast.levels[0]:.0%}-q{forecast.levels[-1]:.0%}")
        ax.plot(t_fut, forecast.point[:, v], color="C0", lw=1.5, label="median")
        ax.set_title(columns[v] if columns else f"variate {v}", fontsize=9)
    axes[0, 0].legend(fontsize=8, loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def cmd_forecast(args) -> int:
    _deterministic()
    model, opts = _load_model(args.checkpoint)
    (ds,) = read_archive(args.archive, [args.dataset])
    end = ds.values.shape[0] if args.end is None else args.end
    sample = split_window(ds.values, args.L, args.T, end, frequency=ds.frequency,
                          period=ds.period, dataset_id=ds.name)
    fs = predict_sample(model, sample, **opts)
    _dump({"levels": fs.levels.tolist(), "per_head": fs.per_head.tolist(),
           "point": fs.point.tolist()}, args.out)
    if args.plot:
        plot_forecast(args.plot, sample, fs, list(ds.columns))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _deterministic()
    protocol = _read_structured(args.protocol) or []
    if isinstance(protocol, dict):
        protocol = protocol.get("windows", [])
    if not protocol:
        _dump({"datasets": {}, "aggregate": {}}, args.out)
        return EXIT_OK
    model, opts = _load_model(args.checkpoint)
    archive = read_archive(args.archive)
    try:
        report = evaluate_protocol(lambda s: predict_sample(model, s, **opts), archive, protocol)
    except KeyError as exc:
        raise DataQualityError(str(exc.args[0])) from exc
    _dump(report, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a subcommand from resetting flags given before it
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root random seed")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="viforecast", parents=[common],
                                description="Image-based probabilistic time series forecasting.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset archive")
    s.add_argument("out_dir")
    s.add_argument("spec", nargs="?", help="generator spec (YAML/JSON); default: 20 sinusoids")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pretrain", parents=[common], help="continual pretraining")
    s.add_argument("--archive", help="dataset archive root (overrides data.archive)")
    s.add_argument("--out", default="run", help="output directory")
    s.add_argument("--no-filter", action="store_true", help="keep out-of-range windows")
    s.add_argument("--no-color", action="store_true", help="grayscale rendering")
    s.add_argument("--heads", type=int, help="number of quantile heads")
    s.add_argument("--init", default="random", help="random | pretrained:<path>")
    s.add_argument("--steps", type=int, help="override optim.total_steps")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("forecast", parents=[common], help="forecast one window")
    s.add_argument("checkpoint")
    s.add_argument("archive")
    s.add_argument("dataset")
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--end", type=int, help="window end row (default: last row)")
    s.add_argument("--out", help="write JSON here instead of stdout")
    s.add_argument("--plot", help="write a forecast plot (PNG)")
    s.set_defaults(func=cmd_forecast)

    s = sub.add_parser("evaluate", parents=[common], help="rolling-window evaluation")
    s.add_argument("checkpoint")
    s.add_argument("archive")
    s.add_argument("protocol", help="YAML/JSON list of {dataset, L, T, stride}")
    s.add_argument("--out", help="write JSON here instead of stdout")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataQualityError, WindowError, PeriodError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
