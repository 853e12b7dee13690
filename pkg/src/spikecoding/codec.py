"""Spike train encoders and the SPKT container format.

Three encodings of an integer image batch (B, C, H, W):

  rate      T steps of Bernoulli spikes, one per timestep and pixel, with
            firing probability P = value / x_max. A spike fires when the
            pixel's uniform draw u satisfies u < P, so the spike rate is
            proportional to intensity (P = 0 never fires, P = 1 always).
  bitplane  n_bit deterministic frames; frame k is bit k of the value,
            least significant bit first, so sum_k 2^k * frame_k rebuilds
            the image exactly.
  combined  the rate train followed by the bit planes along the time
            axis: T' = T + n_bit steps.

Rate draws are addressed by (timestep, flat pixel index) in a counter-based
stream keyed by the encoder seed, so the train is reproducible no matter
how the work is chunked; ``workers`` only splits the batch dimension.

SPKT file layout (little-endian):
  magic "SPKT" | u8 version=1 | u8 kind | u16 reserved=0
  u32 T', u32 B, u32 C, u32 H, u32 W
  then the (T',B,C,H,W) spike tensor bit-packed in C order, MSB first
  within each byte.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .colorspace import GRAY, ColorModelSpec, convert_color
from .tensor import IntTensor, Tensor

MAGIC = b"SPKT"
VERSION = 1
KINDS = ("rate", "bitplane", "combined")
_KIND_CODE = {"rate": 1, "bitplane": 2, "combined": 3}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_HEADER = struct.Struct("<4sBBHIIIII")


@dataclass(frozen=True)
class EncoderConfig:
    timesteps: int = 10
    model: ColorModelSpec = GRAY
    seed: int = 0
    mode: str = "combined"

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if self.mode not in KINDS:
            raise ValueError(f"unknown encode mode {self.mode!r}")

    @property
    def t_prime(self) -> int:
        """Total timesteps the configured mode produces."""
        if self.mode == "rate":
            return self.timesteps
        if self.mode == "bitplane":
            return self.model.n_bit
        return self.timesteps + self.model.n_bit


@dataclass
class SpikeTrain:
    """Binary spike tensor of shape (T', B, C, H, W) plus its encoding kind."""
    kind: str
    data: Tensor

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown spike train kind {self.kind!r}")
        if self.data.data.ndim != 5:
            raise ValueError(
                f"spike train must be (T', B, C, H, W), got {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape


def _as_int_array(x, x_max: int, what: str) -> np.ndarray:
    arr = x.data if isinstance(x, IntTensor) else np.asarray(x)
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError(f"{what} expects integer pixel values")
    if arr.ndim != 4:
        raise ValueError(f"{what} expects (B, C, H, W), got {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{what}: empty input")
    if int(arr.min()) < 0 or int(arr.max()) > x_max:
        raise ValueError(f"{what}: values must lie in [0, {x_max}]")
    return arr.astype(np.int64)


def bitplane_encode(x, model: ColorModelSpec) -> SpikeTrain:
    """Slice an integer batch into n_bit binary frames, LSB first."""
    arr = _as_int_array(x, model.x_max, "bitplane_encode")
    planes = np.empty((model.n_bit,) + arr.shape, dtype=np.float64)
    rest = arr
    for k in range(model.n_bit):
        planes[k] = (rest % 2).astype(np.float64)
        rest = rest // 2
    return SpikeTrain("bitplane", Tensor(planes))


def rate_encode(x, cfg: EncoderConfig, workers: int = 1) -> SpikeTrain:
    """Bernoulli rate coding: P = value / x_max per pixel, T timesteps."""
    arr = _as_int_array(x, cfg.model.x_max, "rate_encode")
    bsz, c, h, w = arr.shape
    total = arr.size
    prob = arr.reshape(-1).astype(np.float64) / float(cfg.model.x_max)
    t_steps = cfg.timesteps
    out = np.empty((t_steps, total), dtype=np.float64)

    def fill(lo: int, hi: int) -> None:
        p = prob[lo:hi]
        for t in range(t_steps):
            base = t * total + lo
            u = rng.uniform_block(cfg.seed, base, hi - lo)
            out[t, lo:hi] = (u < p).astype(np.float64)

    if workers <= 1 or total < 2 * workers:
        fill(0, total)
    else:
        step = -(-total // workers)
        spans = [(i, min(i + step, total)) for i in range(0, total, step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda s: fill(*s), spans))
    return SpikeTrain("rate", Tensor(out.reshape(t_steps, bsz, c, h, w)))


def combined_encode(x, cfg: EncoderConfig, workers: int = 1) -> SpikeTrain:
    """Rate train first, bit planes after, concatenated along time.

    x is already in the configured model's channel ranges (conversion
    happens once, upstream in encode_batch)."""
    rate = rate_encode(x, cfg, workers=workers)
    planes = bitplane_encode(x, cfg.model)
    data = np.concatenate([rate.data.data, planes.data.data], axis=0)
    return SpikeTrain("combined", Tensor(data))


def encode_batch(x, cfg: EncoderConfig, workers: int = 1) -> SpikeTrain:
    """Convert a raw batch to the configured color model, then encode it.

    Raw input is either grayscale (C = 1, values [0, 255], used as-is with
    the gray spec) or RGB (C = 3, converted unless the model is gray)."""
    arr = x.data if isinstance(x, IntTensor) else np.asarray(x)
    if arr.ndim != 4:
        raise ValueError(f"encode_batch expects (B, C, H, W), got {arr.shape}")
    channels = arr.shape[1]
    if channels == 1 or cfg.model.name == "gray":
        if channels != 1:
            raise ValueError("gray encoding expects a single-channel batch")
        converted = IntTensor(arr)
        spec = GRAY
    else:
        converted = convert_color(arr, cfg.model)
        spec = cfg.model
    work_cfg = EncoderConfig(cfg.timesteps, spec, cfg.seed, cfg.mode)
    if cfg.mode == "rate":
        return rate_encode(converted, work_cfg, workers=workers)
    if cfg.mode == "bitplane":
        return bitplane_encode(converted, spec)
    return combined_encode(converted, work_cfg, workers=workers)


# ---------------------------------------------------------------------------
# SPKT container
# ---------------------------------------------------------------------------


def write_spkt(train: SpikeTrain, path) -> None:
    arr = train.data.data
    if not np.isin(arr, (0.0, 1.0)).all():
        raise ValueError("write_spkt: spike train must be binary")
    tp, bsz, c, h, w = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, _KIND_CODE[train.kind], 0,
                          tp, bsz, c, h, w)
    packed = np.packbits(arr.reshape(-1).astype(np.uint8))
    with open(path, "wb") as f:
        f.write(header)
        f.write(packed.tobytes())


def read_spkt(path) -> SpikeTrain:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ValueError("read_spkt: file too short for header")
    magic, version, kind_code, _, tp, bsz, c, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"read_spkt: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"read_spkt: unsupported version {version}")
    if kind_code not in _CODE_KIND:
        raise ValueError(f"read_spkt: unknown kind code {kind_code}")
    count = tp * bsz * c * h * w
    need = -(-count // 8)
    body = raw[_HEADER.size:]
    if len(body) < need:
        raise ValueError("read_spkt: truncated spike data")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=count)
    data = bits.astype(np.float64).reshape(tp, bsz, c, h, w)
    return SpikeTrain(_CODE_KIND[kind_code], Tensor(data))
