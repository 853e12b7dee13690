"""Training loop: Adam on softmax cross-entropy over encoded spike trains.

Determinism contract: with a fixed config (master seed included) the full
run history is bit-identical across repeats. Every random choice is keyed
off the master seed through tagged substreams (split, init, per-epoch
shuffle, per-batch encode draws, a fixed eval stream), so no state leaks
between consumers. Wall-clock numbers are recorded but kept out of
history.csv (they land in timing.csv) so history files can be compared
byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import rng
from .codec import KINDS, EncoderConfig, encode_batch
from .colorspace import GRAY, MODELS, spec_for
from .data import Dataset, split
from .network import SewJoin, SpikingNet, save_weights
from .neuron import SurrogateSpec
from .snr import GradSnrReport, collect_per_sample_grads, grad_snr, write_snr_csv
from .tensor import Tape, Tensor


@dataclass(frozen=True)
class RunConfig:
    mode: str = "combined"
    color_model: str = "rgb"
    timesteps: int = 10
    epochs: int = 20
    batch_size: int = 16
    train_fraction: float = 0.8
    seed: int = 1
    learning_rate: float = 1e-3
    surrogate_family: str = "arctan"
    surrogate_alpha: float = 2.0
    v_threshold: float = 1.0
    v_reset: float = 0.0
    sew_join: str = "ADD"
    hidden_channels: int = 16
    dense_units: int = 128
    snr: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.mode not in KINDS:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.color_model not in MODELS:
            raise ValueError(f"unknown color model {self.color_model!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.timesteps < 1:
            raise ValueError("epochs, batch_size and timesteps must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly in (0, 1)")
        if self.sew_join not in SewJoin.__members__:
            raise ValueError(f"unknown SEW join {self.sew_join!r}")
        SurrogateSpec(self.surrogate_family, self.surrogate_alpha)

    def surrogate(self) -> SurrogateSpec:
        return SurrogateSpec(self.surrogate_family, self.surrogate_alpha)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_acc: float
    epoch_ms: float
    snr: GradSnrReport | None = None


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Stabilized by per-row max subtraction. Backward is the fused
    (softmax - onehot) / batch rule.
    """
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be (B, K), got {logits.shape}")
    bsz, k = logits.shape
    if labels.shape != (bsz,):
        raise ValueError(f"labels must be ({bsz},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError("label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    nll = lse - z[np.arange(bsz), labels]
    out = Tensor(nll.mean())
    from .tensor import _record, _wants_grad, _accum
    if _wants_grad(logits):
        def _bw(logits=logits, out=out, z=z, lse=lse, labels=labels, bsz=bsz):
            g = out.grad
            if g is None:
                return
            p = np.exp(z - lse[:, None])
            p[np.arange(bsz), labels] -= 1.0
            _accum(logits, p * (float(g) / bsz))
        _record(out, _bw)
    return out


class Adam:
    """Adam with bias correction; moments start at zero."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = [p for _, p in params] if params and isinstance(
            params[0], tuple) else list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """One update; a missing gradient counts as zero (the parameter
        keeps its value while the step counter still advances)."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = 0.0
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def predict(net: SpikingNet, frames) -> np.ndarray:
    """Argmax class per sample; ties break to the lowest index."""
    net.reset()
    logits = net.forward(frames)
    return np.argmax(logits.data, axis=1)


def _batches(n: int, size: int):
    for lo in range(0, n, size):
        yield lo, min(lo + size, n)


def evaluate(net: SpikingNet, ds: Dataset, enc: EncoderConfig,
             batch_size: int, eval_seed: int, workers: int = 1) -> float:
    """Accuracy on ds under a fixed evaluation encode stream."""
    hits = 0
    for bi, (lo, hi) in enumerate(_batches(len(ds), batch_size)):
        cfg = EncoderConfig(enc.timesteps, enc.model,
                            rng.derive(eval_seed, bi), enc.mode)
        frames = encode_batch(ds.images[lo:hi], cfg, workers=workers)
        pred = predict(net, frames)
        hits += int((pred == ds.labels[lo:hi]).sum())
    return hits / len(ds)


def work_model(ds_channels: int, color_model: str):
    return GRAY if ds_channels == 1 else spec_for(color_model)


def train_run(cfg: RunConfig, dataset: Dataset,
              out_dir=None) -> tuple[SpikingNet, list[EpochRecord]]:
    """Train on an 80/20-style split of dataset per cfg; optionally write
    history.csv, timing.csv, snr.csv, run.json and weights into out_dir."""
    if len(dataset) < 2:
        raise ValueError("dataset too small to split")
    train_ds, val_ds = split(dataset, cfg.train_fraction, cfg.seed)
    classes = max(int(dataset.labels.max()) + 1, 2)
    model = work_model(dataset.channels, cfg.color_model)
    _, _, h, w = dataset.images.shape

    net = SpikingNet(dataset.channels, classes, h, w,
                     hidden_channels=cfg.hidden_channels,
                     dense_units=cfg.dense_units,
                     join=SewJoin[cfg.sew_join],
                     v_threshold=cfg.v_threshold, v_reset=cfg.v_reset,
                     surrogate=cfg.surrogate(), init_seed=cfg.seed)
    opt = Adam(net.params(), lr=cfg.learning_rate)
    enc_proto = EncoderConfig(cfg.timesteps, model, 0, cfg.mode)
    eval_seed = rng.derive(cfg.seed, rng.TAG_EVAL)

    history: list[EpochRecord] = []
    n_train = len(train_ds)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n_train, rng.derive(cfg.seed, rng.TAG_SHUFFLE,
                                                    epoch))
        loss_sum = 0.0
        n_batches = 0
        snr_report = None
        if cfg.snr:
            # one probe batch per epoch, fixed samples, fresh encoder
            # draws: gradient quality is tracked on constant data, so the
            # per-epoch curve is not at the mercy of shuffle composition
            probe = EncoderConfig(cfg.timesteps, model,
                                  rng.derive(cfg.seed, rng.TAG_SNR, epoch),
                                  cfg.mode)
            probe_n = min(cfg.batch_size, n_train)
            frames = encode_batch(train_ds.images[:probe_n], probe,
                                  workers=cfg.workers)
            grads = collect_per_sample_grads(net, frames,
                                             train_ds.labels[:probe_n],
                                             softmax_cross_entropy)
            snr_report = grad_snr(grads, epoch=epoch)
        for bi, (lo, hi) in enumerate(_batches(n_train, cfg.batch_size)):
            take = order[lo:hi]
            images = train_ds.images[take]
            labels = train_ds.labels[take]
            enc = EncoderConfig(cfg.timesteps, model,
                                rng.derive(cfg.seed, rng.TAG_ENCODE, epoch, bi),
                                cfg.mode)
            frames = encode_batch(images, enc, workers=cfg.workers)
            net.reset()
            opt.zero_grad()
            tape = Tape()
            with tape:
                logits = net.forward(frames)
                loss = softmax_cross_entropy(logits, labels)
            tape.backward(loss)
            opt.step()
            loss_sum += loss.item()
            n_batches += 1
        val_acc = evaluate(net, val_ds, enc_proto, cfg.batch_size, eval_seed,
                           workers=cfg.workers)
        epoch_ms = (time.perf_counter() - t0) * 1e3
        history.append(EpochRecord(epoch, loss_sum / n_batches, val_acc,
                                   epoch_ms, snr_report))

    if out_dir is not None:
        write_run_outputs(Path(out_dir), cfg, dataset, model, net, history)
    return net, history


# ---------------------------------------------------------------------------
# run outputs
# ---------------------------------------------------------------------------


def _g17(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return format(float(x), ".17g")


def write_history_csv(path, history) -> None:
    """epoch, train_loss, val_acc, snr. Deliberately excludes timing so
    identical runs produce identical bytes; timing.csv carries the clock."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_acc", "snr"])
        for rec in history:
            snr = "" if rec.snr is None else _g17(rec.snr.snr)
            writer.writerow([rec.epoch, _g17(rec.train_loss),
                             _g17(rec.val_acc), snr])


def write_timing_csv(path, history) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "epoch_ms"])
        for rec in history:
            writer.writerow([rec.epoch, format(rec.epoch_ms, ".3f")])


def write_run_outputs(out_dir: Path, cfg: RunConfig, dataset: Dataset,
                      model, net: SpikingNet, history) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_history_csv(out_dir / "history.csv", history)
    write_timing_csv(out_dir / "timing.csv", history)
    if cfg.snr:
        rows = [(r.snr.epoch, r.snr.sig, r.snr.noi, r.snr.snr,
                 cfg.mode, model.name)
                for r in history if r.snr is not None]
        write_snr_csv(out_dir / "snr.csv", rows)
    save_weights(net, out_dir / "weights.bin", out_dir / "weights.json")
    echo = {
        "config": asdict(cfg),
        "dataset": {
            "n": len(dataset),
            "channels": dataset.channels,
            "height": int(dataset.images.shape[2]),
            "width": int(dataset.images.shape[3]),
            "classes": int(dataset.labels.max()) + 1,
        },
        "encoder": {
            "model": model.name,
            "x_max": model.x_max,
            "n_bit": model.n_bit,
            "t_prime": EncoderConfig(cfg.timesteps, model, 0,
                                     cfg.mode).t_prime,
        },
        "seeds": {
            "master": cfg.seed,
            "split": rng.derive(cfg.seed, rng.TAG_SPLIT),
            "init": rng.derive(cfg.seed, rng.TAG_INIT),
            "eval": rng.derive(cfg.seed, rng.TAG_EVAL),
        },
        "weight_init": "uniform(-sqrt(1/fan_in), sqrt(1/fan_in)), zero biases",
        "parameters": int(sum(p.data.size for _, p in net.params())),
    }
    with open(out_dir / "run.json", "w") as f:
        json.dump(echo, f, indent=2, sort_keys=True)
        f.write("\n")
