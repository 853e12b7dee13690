"""Gradient signal-to-noise diagnostics.

Treats each sample's flattened whole-model loss gradient as one draw of a
random vector delta and summarizes a batch of draws by

    sig = || mean(delta) ||^2
    noi = mean || delta - mean(delta) ||^2
    snr = sig / noi            (+inf when the draws agree exactly)

The theoretical magnitude estimate sqrt(N * T' * alpha) tracks how the
norm of a depth-k spike-train activation product scales with neuron count
N, timesteps T', firing rate phi, and the surrogate derivative values at
the two binary pre-activation levels:

    alpha = phi * th1^(2k) + (1 - phi) * th0^(2k)

where th1 and th0 are the derivative magnitudes at spike (1 - v_th) and
silence (0 - v_th). For a combined train the same bookkeeping applies
with T' = T + n_bit, the spike total summing both segments.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tape, Tensor


@dataclass(frozen=True)
class GradSnrReport:
    epoch: int
    sig: float
    noi: float
    snr: float
    sample_count: int


def grad_snr(per_sample_grads, epoch: int = 0) -> GradSnrReport:
    """Summarize per-sample gradient vectors (S, D) into a GradSnrReport."""
    if isinstance(per_sample_grads, (list, tuple)):
        if not per_sample_grads:
            raise ValueError("grad_snr: no sample gradients")
        shapes = {np.asarray(g).shape for g in per_sample_grads}
        if len(shapes) != 1:
            raise ValueError(f"grad_snr: inconsistent gradient shapes {shapes}")
        mat = np.stack([np.asarray(g, dtype=np.float64).reshape(-1)
                        for g in per_sample_grads])
    else:
        mat = np.asarray(per_sample_grads, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError(f"grad_snr expects (S, D), got {mat.shape}")
    if mat.shape[0] < 1 or mat.shape[1] < 1:
        raise ValueError("grad_snr: empty gradient matrix")
    mean = mat.mean(axis=0)
    sig = float(mean @ mean)
    dev = mat - mean
    noi = float((dev * dev).sum(axis=1).mean())
    snr = sig / noi if noi > 0.0 else math.inf
    return GradSnrReport(epoch, sig, noi, snr, mat.shape[0])


def collect_per_sample_grads(net, frames, labels, loss_fn) -> np.ndarray:
    """Per-sample flattened loss gradients, one independent forward and
    backward per sample, rows ordered like the batch, columns like
    net.params(). Missing gradients count as zeros."""
    from .codec import SpikeTrain  # local import, avoids a cycle at import time

    if isinstance(frames, SpikeTrain):
        data = frames.data.data
    elif isinstance(frames, Tensor):
        data = frames.data
    else:
        data = np.asarray(frames, dtype=np.float64)
    labels = np.asarray(labels)
    if data.ndim != 5:
        raise ValueError(f"expected frames (T', B, C, H, W), got {data.shape}")
    if labels.shape[0] != data.shape[1]:
        raise ValueError("labels do not match the batch dimension")

    rows = []
    for i in range(data.shape[1]):
        net.reset()
        net.zero_grad()
        tape = Tape()
        with tape:
            logits = net.forward(data[:, i : i + 1])
            loss = loss_fn(logits, labels[i : i + 1])
        tape.backward(loss)
        parts = []
        for _, p in net.params():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            parts.append(np.asarray(g, dtype=np.float64).reshape(-1))
        rows.append(np.concatenate(parts))
    net.zero_grad()
    return np.stack(rows)


def theoretical_magnitude(phi: float, theta1: float, theta0: float,
                          k: int, n: int, t_prime: int) -> float:
    """sqrt(N * T' * alpha) with alpha = phi*th1^(2k) + (1-phi)*th0^(2k)."""
    if not 0.0 <= phi <= 1.0:
        raise ValueError("phi must lie in [0, 1]")
    if theta1 < 0 or theta0 < 0:
        raise ValueError("derivative magnitudes must be nonnegative")
    if k < 1 or n < 1 or t_prime < 1:
        raise ValueError("k, n and t_prime must be >= 1")
    alpha = phi * theta1 ** (2 * k) + (1.0 - phi) * theta0 ** (2 * k)
    return math.sqrt(n * t_prime * alpha)


def write_snr_csv(path, rows) -> None:
    """rows: iterables of (epoch, sig, noi, snr, mode, colormodel)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "sig", "noi", "snr", "mode", "colormodel"])
        for epoch, sig, noi, snr, mode, colormodel in rows:
            writer.writerow([epoch, _fmt(sig), _fmt(noi), _fmt(snr),
                             mode, colormodel])


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return format(float(x), ".17g")
