"""Command-line interface.

Subcommands: encode, convert-color, train, eval, snr-report, bench.
Runs are configured by a JSON file (see README) whose values individual
flags override. Every failure prints a single line starting with
"error:" on stderr and exits nonzero; successes print JSON lines on
stdout and exit 0.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import rng
from .codec import EncoderConfig, encode_batch, write_spkt
from .colorspace import GRAY, MODELS, convert_color, spec_for
from .data import Dataset, load_idx, load_image_dir, split, synthetic, to_rgb
from .network import SewJoin, SpikingNet, firing_rate, load_weights
from .train import RunConfig, evaluate, train_run, work_model

_RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)}
_EXTRA_KEYS = {"dataset", "out_dir", "limit"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one parsable line instead of argparse's usage block
        self.exit(2, f"error: usage: {message}\n")


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# ---------------------------------------------------------------------------
# config and dataset plumbing
# ---------------------------------------------------------------------------


def load_run_config(path, overrides):
    raw = {}
    if path:
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = set(raw) - _RUN_KEYS - _EXTRA_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    base = {k: v for k, v in raw.items() if k in _RUN_KEYS}
    base.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**base)
    return cfg, raw.get("dataset"), raw.get("out_dir"), raw.get("limit")


def build_dataset(spec, limit=None) -> Dataset:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError('config "dataset" must be an object with a "kind"')
    kind = spec["kind"]
    if kind == "synthetic":
        ds = synthetic(n=int(spec.get("n", 2500)),
                       classes=int(spec.get("classes", 10)),
                       height=int(spec.get("height", 10)),
                       width=int(spec.get("width", 10)),
                       noise=float(spec.get("noise", 96.0)),
                       low=int(spec.get("low", 104)),
                       high=int(spec.get("high", 136)),
                       seed=int(spec.get("seed", 0)))
    elif kind == "idx":
        ds = load_idx(spec["images"], spec.get("labels"))
    elif kind == "image_dir":
        ds = load_image_dir(spec["root"])
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if limit is not None:
        limit = int(limit)
        if limit < 1:
            raise ValueError("limit must be >= 1")
        ds = Dataset(ds.images[:limit], ds.labels[:limit])
    return ds


def _load_input(path) -> Dataset:
    """idx file or class-directory tree, for encode/convert commands."""
    p = Path(path)
    if p.is_dir():
        return load_image_dir(p)
    return load_idx(p)


def _resolve_model(ds: Dataset, color: str):
    if ds.channels == 1:
        if color not in (None, "gray"):
            raise ValueError(
                f"color model {color!r} needs RGB input, data is single-channel")
        return GRAY
    return spec_for(color or "rgb")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_encode(args) -> int:
    ds = _load_input(args.input)
    if args.limit:
        ds = Dataset(ds.images[: args.limit], ds.labels[: args.limit])
    model = _resolve_model(ds, args.color)
    cfg = EncoderConfig(args.timesteps, model, args.seed, args.mode)
    train = encode_batch(ds.images, cfg, workers=args.workers)
    if args.out:
        write_spkt(train, args.out)
    tp, bsz, c, h, w = train.shape
    _emit({"kind": train.kind, "model": model.name, "t_prime": tp,
           "shape": [tp, bsz, c, h, w],
           "spikes": int(train.data.data.sum()),
           "phi": firing_rate(train),
           "out": args.out})
    return 0


def cmd_convert_color(args) -> int:
    ds = _load_input(args.input)
    if args.limit:
        ds = Dataset(ds.images[: args.limit], ds.labels[: args.limit])
    if ds.channels != 3:
        raise ValueError("convert-color needs RGB input (3 channels)")
    out = convert_color(ds.images, args.color)
    np.save(args.out, out.data)
    spec = spec_for(args.color)
    _emit({"model": spec.name, "x_max": spec.x_max, "n_bit": spec.n_bit,
           "shape": list(out.shape),
           "channel_min": [int(out.data[:, i].min()) for i in range(3)],
           "channel_max": [int(out.data[:, i].max()) for i in range(3)],
           "out": args.out})
    return 0


def _common_run_setup(args):
    overrides = {
        "mode": args.mode, "color_model": args.color,
        "timesteps": args.timesteps, "epochs": args.epochs,
        "batch_size": args.batch_size, "seed": args.seed,
        "snr": args.snr, "workers": args.workers,
    }
    cfg, dataset_spec, cfg_out, cfg_limit = load_run_config(args.config,
                                                            overrides)
    if dataset_spec is None:
        raise ValueError('config must define a "dataset"')
    limit = args.limit if args.limit else cfg_limit
    ds = build_dataset(dataset_spec, limit)
    out_dir = args.out or cfg_out
    return cfg, ds, out_dir


def cmd_train(args) -> int:
    cfg, ds, out_dir = _common_run_setup(args)
    if not out_dir:
        raise ValueError("an output directory is required (--out or out_dir)")
    net, history = train_run(cfg, ds, out_dir=out_dir)
    last = history[-1]
    _emit({"out_dir": str(out_dir), "epochs": cfg.epochs, "mode": cfg.mode,
           "final_train_loss": last.train_loss, "final_val_acc": last.val_acc})
    return 0


def cmd_eval(args) -> int:
    cfg, ds, _ = _common_run_setup(args)
    wdir = Path(args.weights)
    _, val_ds = split(ds, cfg.train_fraction, cfg.seed)
    classes = max(int(ds.labels.max()) + 1, 2)
    _, _, h, w = ds.images.shape
    net = SpikingNet(ds.channels, classes, h, w,
                     hidden_channels=cfg.hidden_channels,
                     dense_units=cfg.dense_units, join=SewJoin[cfg.sew_join],
                     v_threshold=cfg.v_threshold, v_reset=cfg.v_reset,
                     surrogate=cfg.surrogate(), init_seed=cfg.seed)
    load_weights(net, wdir / "weights.bin", wdir / "weights.json")
    model = work_model(ds.channels, cfg.color_model)
    enc = EncoderConfig(cfg.timesteps, model, 0, cfg.mode)
    acc = evaluate(net, val_ds, enc, cfg.batch_size,
                   rng.derive(cfg.seed, rng.TAG_EVAL), workers=cfg.workers)
    _emit({"val_acc": acc, "samples": len(val_ds), "mode": cfg.mode})
    return 0


def cmd_snr_report(args) -> int:
    cfg, ds, out_dir = _common_run_setup(args)
    if not out_dir:
        raise ValueError("an output directory is required (--out or out_dir)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    merged = []
    means = {}
    for mode in ("rate", "bitplane", "combined"):
        mode_cfg = dataclasses.replace(cfg, mode=mode, snr=True)
        _, history = train_run(mode_cfg, ds, out_dir=out / mode)
        model = work_model(ds.channels, cfg.color_model)
        snrs = []
        for rec in history:
            if rec.snr is None:
                continue
            merged.append((rec.snr.epoch, rec.snr.sig, rec.snr.noi,
                           rec.snr.snr, mode, model.name))
            snrs.append(rec.snr.snr)
        means[mode] = float(np.mean(snrs)) if snrs else float("nan")
    from .snr import write_snr_csv
    write_snr_csv(out / "snr.csv", merged)
    for mode in ("rate", "bitplane", "combined"):
        _emit({"mode": mode, "mean_snr": means[mode]})
    return 0


def cmd_bench(args) -> int:
    cfg, ds, out_dir = _common_run_setup(args)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    native = "gray" if ds.channels == 1 else "rgb"
    colors = [c.strip() for c in args.colors.split(",") if c.strip()] \
        if args.colors else [native]
    batch = ds.images[: cfg.batch_size]
    if batch.shape[0] < cfg.batch_size:
        raise ValueError("dataset smaller than one batch")

    def representation(color):
        if color == "gray":
            if ds.channels != 1:
                raise ValueError("gray cells need single-channel data")
            return batch
        if ds.channels == 1:
            return np.repeat(batch, 3, axis=1)
        return batch

    nets = {}

    def measure(mode, color):
        x = representation(color)
        model = GRAY if color == "gray" else spec_for(color)
        enc = EncoderConfig(cfg.timesteps, model, 0, mode)
        channels = x.shape[1]
        if channels not in nets:
            nets[channels] = SpikingNet(
                channels, max(int(ds.labels.max()) + 1, 2),
                x.shape[2], x.shape[3],
                hidden_channels=cfg.hidden_channels,
                dense_units=cfg.dense_units, join=SewJoin[cfg.sew_join],
                v_threshold=cfg.v_threshold, v_reset=cfg.v_reset,
                surrogate=cfg.surrogate(), init_seed=cfg.seed)
        net = nets[channels]
        times = []
        for rep in range(args.repeats):
            enc_r = EncoderConfig(cfg.timesteps, model,
                                  rng.derive(cfg.seed, rng.TAG_ENCODE, rep),
                                  mode)
            t0 = time.perf_counter()
            frames = encode_batch(x, enc_r)
            net.reset()
            net.forward(frames)
            times.append((time.perf_counter() - t0) * 1e3)
        return enc.t_prime, sum(times) / len(times)

    base_tp, base_ms = measure("rate", native)
    rows = [("rate", native, base_tp, args.repeats, base_ms, 0.0)]
    for mode in modes:
        for color in colors:
            if mode == "rate" and color == native:
                continue
            tp, ms = measure(mode, color)
            rows.append((mode, color, tp, args.repeats, ms,
                         100.0 * (ms - base_ms) / base_ms))

    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        import csv as _csv
        with open(Path(out_dir) / "bench.csv", "w", newline="") as f:
            writer = _csv.writer(f)
            writer.writerow(["mode", "color", "t_prime", "repeats",
                             "mean_ms", "overhead_pct"])
            for mode, color, tp, reps, ms, ov in rows:
                writer.writerow([mode, color, tp, reps,
                                 format(ms, ".3f"), format(ov, ".2f")])
    for mode, color, tp, reps, ms, ov in rows:
        _emit({"mode": mode, "color": color, "t_prime": tp,
               "mean_ms": round(ms, 3), "overhead_pct": round(ov, 2)})
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_run_flags(sp):
    sp.add_argument("--config", help="JSON run config")
    sp.add_argument("--mode", choices=("rate", "bitplane", "combined"))
    sp.add_argument("--color", choices=sorted(MODELS))
    sp.add_argument("--timesteps", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--limit", type=int)
    sp.add_argument("--snr", action="store_const", const=True, default=None)
    sp.add_argument("--workers", type=int, default=None,
                    help="encoder worker threads")
    sp.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spikecoding",
                     description="bit-plane and color-model spike coding")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode images to a spike train")
    p.add_argument("--input", required=True,
                   help="IDX image file or class-directory tree")
    p.add_argument("--mode", default="combined",
                   choices=("rate", "bitplane", "combined"))
    p.add_argument("--color", default=None,
                   choices=sorted(MODELS) + ["gray"])
    p.add_argument("--timesteps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write an SPKT spike file here")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("convert-color", help="convert RGB images to a model")
    p.add_argument("--input", required=True)
    p.add_argument("--color", required=True, choices=sorted(MODELS))
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--out", required=True, help="output .npy path")
    p.set_defaults(func=cmd_convert_color)

    p = sub.add_parser("train", help="train the desk-scale network")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved weights on the val split")
    _add_run_flags(p)
    p.add_argument("--weights", required=True,
                   help="directory holding weights.bin and weights.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("snr-report",
                       help="train all three modes, reporting gradient SNR")
    _add_run_flags(p)
    p.set_defaults(func=cmd_snr_report)

    p = sub.add_parser("bench", help="time encode+forward per (mode, color)")
    _add_run_flags(p)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--modes", default="combined")
    p.add_argument("--colors", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
