"""Spike-element-wise residual toy network.

Architecture, applied per timestep with shared weights and stateful
integrate-and-fire neurons:

    conv(C_in -> hidden, 3x3, pad 1) -> IF
    SEW block: conv -> IF -> conv -> IF, joined with the block input
    2x2 average pool -> flatten -> dense(-> dense_units) -> IF
    dense(-> classes)

The classifier readout is the time average of the final dense layer's
pre-activations over all T' steps. With AND/IAND joins every inter-layer
signal stays binary; ADD can emit 2 where branch and shortcut both fired.
"""

from __future__ import annotations

import json
from enum import Enum

import numpy as np

from . import rng
from .codec import SpikeTrain
from .neuron import IfConfig, IfNeuron, SurrogateSpec
from .tensor import (Tensor, add_bias, avg_pool2d_nhwc, conv2d_nhwc, matmul,
                     split_rows, stack_rows)


class SewJoin(Enum):
    ADD = "ADD"
    AND = "AND"
    IAND = "IAND"


def _is_binary(a: np.ndarray) -> bool:
    return bool(np.isin(a, (0.0, 1.0)).all())


def sew_join(a: Tensor, s: Tensor, join: SewJoin) -> Tensor:
    """Join a residual branch output a with the block input s.

    ADD: a + s (can reach 2). AND: a * s. IAND: (1 - a) * s, the shortcut
    gated by branch silence. AND and IAND require binary a.
    """
    if not isinstance(join, SewJoin):
        raise TypeError("join must be a SewJoin")
    if a.shape != s.shape:
        raise ValueError(f"sew_join: shape mismatch {a.shape} vs {s.shape}")
    if join is SewJoin.ADD:
        return a + s
    if not _is_binary(a.data):
        raise ValueError(f"sew_join {join.value}: branch output must be binary")
    if join is SewJoin.AND:
        return a * s
    return (1.0 - a) * s


def _uniform_init(key: int, counter_start: int, shape: tuple[int, ...],
                  fan_in: int) -> tuple[np.ndarray, int]:
    n = int(np.prod(shape))
    bound = float(np.sqrt(1.0 / fan_in))
    u = rng.uniform_block(key, counter_start, n)
    return ((2.0 * u - 1.0) * bound).reshape(shape), counter_start + n


class SpikingNet:
    """Desk-scale spiking classifier; see the module docstring."""

    def __init__(self, in_channels: int, num_classes: int, height: int,
                 width: int, hidden_channels: int = 16, dense_units: int = 128,
                 join: SewJoin = SewJoin.ADD, v_threshold: float = 1.0,
                 v_reset: float = 0.0,
                 surrogate: SurrogateSpec | None = None,
                 smooth: bool = False, init_seed: int = 0):
        if height % 2 or width % 2:
            raise ValueError("height and width must be even (2x2 pooling)")
        if in_channels < 1 or num_classes < 2:
            raise ValueError("need at least 1 input channel and 2 classes")
        self.in_channels = in_channels
        self.num_classes = num_classes
        self.height = height
        self.width = width
        self.hidden_channels = hidden_channels
        self.dense_units = dense_units
        self.join = join
        sur = surrogate if surrogate is not None else SurrogateSpec()
        self.if_cfg = IfConfig(v_threshold, v_reset, sur, smooth)

        hc = hidden_channels
        feat = hc * (height // 2) * (width // 2)
        self.feature_size = feat
        key = rng.derive(init_seed, rng.TAG_INIT)
        c = 0
        self.conv1_w, c = self._param(key, c, (hc, in_channels, 3, 3),
                                      in_channels * 9)
        self.conv1_b = Tensor(np.zeros(hc), requires_grad=True)
        self.conv_a_w, c = self._param(key, c, (hc, hc, 3, 3), hc * 9)
        self.conv_a_b = Tensor(np.zeros(hc), requires_grad=True)
        self.conv_b_w, c = self._param(key, c, (hc, hc, 3, 3), hc * 9)
        self.conv_b_b = Tensor(np.zeros(hc), requires_grad=True)
        self.dense1_w, c = self._param(key, c, (feat, dense_units), feat)
        self.dense1_b = Tensor(np.zeros(dense_units), requires_grad=True)
        self.dense2_w, c = self._param(key, c, (dense_units, num_classes),
                                       dense_units)
        self.dense2_b = Tensor(np.zeros(num_classes), requires_grad=True)

        self.if1 = IfNeuron(self.if_cfg)
        self.if_a = IfNeuron(self.if_cfg)
        self.if_b = IfNeuron(self.if_cfg)
        self.if_d = IfNeuron(self.if_cfg)
        self._fresh = True

    @staticmethod
    def _param(key, counter, shape, fan_in):
        data, counter = _uniform_init(key, counter, shape, fan_in)
        return Tensor(data, requires_grad=True), counter

    def params(self) -> list[tuple[str, Tensor]]:
        return [
            ("conv1.w", self.conv1_w), ("conv1.b", self.conv1_b),
            ("block.conv_a.w", self.conv_a_w), ("block.conv_a.b", self.conv_a_b),
            ("block.conv_b.w", self.conv_b_w), ("block.conv_b.b", self.conv_b_b),
            ("dense1.w", self.dense1_w), ("dense1.b", self.dense1_b),
            ("dense2.w", self.dense2_w), ("dense2.b", self.dense2_b),
        ]

    def zero_grad(self):
        for _, p in self.params():
            p.grad = None

    def reset(self):
        """Clear all IF membrane state; required before every forward."""
        for n in (self.if1, self.if_a, self.if_b, self.if_d):
            n.reset()
        self._fresh = True

    def forward(self, frames) -> Tensor:
        """Run all timesteps and return logits (B, classes): the time mean
        of the final dense pre-activations."""
        if isinstance(frames, SpikeTrain):
            frames = frames.data
        data = frames.data if isinstance(frames, Tensor) else np.asarray(
            frames, dtype=np.float64)
        if data.ndim != 5:
            raise ValueError(f"forward expects (T', B, C, H, W), got {data.shape}")
        tp, bsz, c, h, w = data.shape
        if (c, h, w) != (self.in_channels, self.height, self.width):
            raise ValueError(
                f"forward: frames {(c, h, w)} do not match network "
                f"{(self.in_channels, self.height, self.width)}")
        if not self._fresh:
            raise ValueError("forward called on non-reset state; call reset()")
        self._fresh = False

        # convolutions and dense layers are pointwise in time, so they run
        # once over all tp frames stacked on the batch axis; only the IF
        # neurons, whose membrane state couples timesteps, loop over t.
        # Activations travel channels-last, the layout the conv gathers
        # are fastest in
        x_all = Tensor(np.ascontiguousarray(
            data.reshape(tp * bsz, c, h, w).transpose(0, 2, 3, 1)))
        c1 = conv2d_nhwc(x_all, self.conv1_w, self.conv1_b, padding=1)
        s1 = stack_rows([self.if1.step(p) for p in split_rows(c1, tp)])
        ca = conv2d_nhwc(s1, self.conv_a_w, self.conv_a_b, padding=1)
        sa = stack_rows([self.if_a.step(p) for p in split_rows(ca, tp)])
        cb = conv2d_nhwc(sa, self.conv_b_w, self.conv_b_b, padding=1)
        sb = stack_rows([self.if_b.step(p) for p in split_rows(cb, tp)])
        joined = sew_join(sb, s1, self.join)
        pooled = avg_pool2d_nhwc(joined, 2)
        flat = pooled.reshape(tp * bsz, self.feature_size)
        d1 = add_bias(matmul(flat, self.dense1_w), self.dense1_b)
        sd = stack_rows([self.if_d.step(p) for p in split_rows(d1, tp)])
        logits_all = add_bias(matmul(sd, self.dense2_w), self.dense2_b)
        acc = None
        for part in split_rows(logits_all, tp):
            acc = part if acc is None else acc + part
        return acc / float(tp)


def forward(net: SpikingNet, spikes) -> Tensor:
    return net.forward(spikes)


def firing_rate(spikes) -> float:
    """Fraction of entries that are spikes: total spikes / (N * T')."""
    if isinstance(spikes, SpikeTrain):
        arr = spikes.data.data
    elif isinstance(spikes, Tensor):
        arr = spikes.data
    else:
        arr = np.asarray(spikes, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("firing_rate of an empty train")
    return float(arr.sum() / arr.size)


# ---------------------------------------------------------------------------
# weight serialization: flat little-endian float64 binary plus a manifest
# ---------------------------------------------------------------------------


def save_weights(net: SpikingNet, bin_path, manifest_path) -> None:
    entries = []
    offset = 0
    chunks = []
    for name, p in net.params():
        flat = np.ascontiguousarray(p.data, dtype="<f8").reshape(-1)
        nbytes = flat.size * 8
        entries.append({"name": name, "shape": list(p.data.shape),
                        "offset": offset, "nbytes": nbytes})
        chunks.append(flat.tobytes())
        offset += nbytes
    with open(bin_path, "wb") as f:
        for ch in chunks:
            f.write(ch)
    manifest = {"format": "spikecoding-weights", "version": 1,
                "dtype": "float64", "byte_order": "little",
                "params": entries}
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_weights(net: SpikingNet, bin_path, manifest_path) -> None:
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("format") != "spikecoding-weights":
        raise ValueError("load_weights: not a weights manifest")
    blob = open(bin_path, "rb").read()
    by_name = {name: p for name, p in net.params()}
    seen = set()
    for e in manifest["params"]:
        name = e["name"]
        if name not in by_name:
            raise ValueError(f"load_weights: unexpected parameter {name!r}")
        p = by_name[name]
        shape = tuple(e["shape"])
        if shape != p.data.shape:
            raise ValueError(
                f"load_weights: {name} shape {shape} != network {p.data.shape}")
        arr = np.frombuffer(blob, dtype="<f8", count=int(np.prod(shape)),
                            offset=e["offset"]).reshape(shape)
        p.data = np.ascontiguousarray(arr, dtype=np.float64)
        seen.add(name)
    missing = set(by_name) - seen
    if missing:
        raise ValueError(f"load_weights: missing parameters {sorted(missing)}")
