"""Color model conversions on integer image tensors.

Input is raw RGB with channels in [0, 255], layout (B, 3, H, W). Every
model quantizes to integers: channels are rounded half away from zero,
then clamped to the model's range. Each model carries a single scalar
x_max (the largest channel ceiling) and the bit-plane count
n_bit = ceil(log2(x_max)).

Channel conventions:
  rgb    identity, [0,255]^3
  cmy    round(100 * (1 - c/255)), [0,100]^3
  ycbcr  full-range BT.601 digital form, [0,255]^3
  hsl    H integer degrees [0,359], S and L in [0,100]; computed in exact
         integer arithmetic so half-integer boundaries round predictably
  hsv    H integer degrees [0,359], S and V in [0,100]; same exactness
  xyz    linearized sRGB, D65, each channel scaled so its sRGB maximum
         (the white point) lands at 255
  lab    CIE L*a*b* from D65 XYZ; L in [0,100], a and b offset by +128
         and clamped to [0,255]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import IntTensor

# sRGB -> XYZ (D65) matrix rows; white point is the row sum
_XYZ_M = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE = _XYZ_M.sum(axis=1)  # X_n, Y_n, Z_n of D65 in this scaling

# CIE f() breakpoints
_LAB_EPS = 216.0 / 24389.0
_LAB_KAPPA = 24389.0 / 27.0


@dataclass(frozen=True)
class ColorModelSpec:
    """Name, per-channel ceilings, the scalar ceiling x_max, and the
    bit-plane count implied by it."""
    name: str
    channel_max: tuple[int, ...]

    @property
    def x_max(self) -> int:
        return max(self.channel_max)

    @property
    def n_bit(self) -> int:
        # ceil(log2(x)) as exact integer math
        return (self.x_max - 1).bit_length()

    @property
    def channels(self) -> int:
        return len(self.channel_max)


MODELS = {
    "rgb": ColorModelSpec("rgb", (255, 255, 255)),
    "cmy": ColorModelSpec("cmy", (100, 100, 100)),
    "ycbcr": ColorModelSpec("ycbcr", (255, 255, 255)),
    "hsl": ColorModelSpec("hsl", (359, 100, 100)),
    "hsv": ColorModelSpec("hsv", (359, 100, 100)),
    "xyz": ColorModelSpec("xyz", (255, 255, 255)),
    "lab": ColorModelSpec("lab", (100, 255, 255)),
}

# single-channel intensity data bypasses conversion but still needs a spec
GRAY = ColorModelSpec("gray", (255,))


def spec_for(name: str) -> ColorModelSpec:
    try:
        return MODELS[name]
    except KeyError:
        raise ValueError(f"unknown color model {name!r}, "
                         f"expected one of {sorted(MODELS)}") from None


def _round_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _quantize(channels: list[np.ndarray], spec: ColorModelSpec) -> np.ndarray:
    out = np.empty((channels[0].shape[0], len(channels)) + channels[0].shape[1:],
                   dtype=np.int64)
    for i, (ch, top) in enumerate(zip(channels, spec.channel_max)):
        out[:, i] = np.clip(_round_away(ch), 0, top).astype(np.int64)
    return out


# ---------------------------------------------------------------------------
# per-model conversions; all take float arrays r, g, b in [0, 255]
# ---------------------------------------------------------------------------


def _to_cmy(r, g, b):
    return [100.0 * (1.0 - r / 255.0),
            100.0 * (1.0 - g / 255.0),
            100.0 * (1.0 - b / 255.0)]


def _to_ycbcr(r, g, b):
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return [y, cb, cr]


def _round_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """round(num/den) half away from zero, exact, for num >= 0, den > 0."""
    return (2 * num + den) // (2 * den)


def _hsl_hsv_exact(data: np.ndarray, name: str) -> np.ndarray:
    """HSL/HSV in pure integer arithmetic.

    Every channel is a ratio of small integers (hue: 60*(g-b)/d etc.,
    S/L/V: hundredths of chroma ratios), so quantization is computed with
    integer floor divisions. Exact half-integer values (they do occur,
    e.g. hue 220.5) round away from zero by construction instead of
    falling on whichever side float evaluation lands.
    """
    r = data[:, 0].astype(np.int64)
    g = data[:, 1].astype(np.int64)
    b = data[:, 2].astype(np.int64)
    mx = np.maximum(r, np.maximum(g, b))
    mn = np.minimum(r, np.minimum(g, b))
    d = mx - mn
    ds = np.where(d == 0, 1, d)  # safe divisor; hue forced to 0 where d == 0

    # hue numerator over denominator d, in degrees: 60*(g-b)/d (mod 360)
    # where red is max, 120 + 60*(b-r)/d where green, 240 + 60*(r-g)/d
    # where blue
    num = np.where(
        mx == r, (60 * (g - b)) % (360 * ds),
        np.where(mx == g, 60 * (b - r) + 120 * ds,
                 60 * (r - g) + 240 * ds))
    h = np.where(d == 0, 0, _round_ratio(num, ds) % 360)

    if name == "hsv":
        mxs = np.where(mx == 0, 1, mx)
        s = np.where(mx == 0, 0, _round_ratio(100 * d, mxs))
        v = _round_ratio(100 * mx, np.int64(255))
        second, third = s, v
    else:
        # l = (mx+mn)/510; s = d / (255 - |mx+mn-255|), both per hundred
        dl = 255 - np.abs(mx + mn - 255)
        dls = np.where(dl == 0, 1, dl)
        s = np.where(d == 0, 0, _round_ratio(100 * d, dls))
        l = _round_ratio(100 * (mx + mn), np.int64(510))
        second, third = s, l
    out = np.empty((data.shape[0], 3) + data.shape[2:], dtype=np.int64)
    out[:, 0], out[:, 1], out[:, 2] = h, second, third
    return out


def _linearize(c):
    c = c / 255.0
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _to_xyz_rel(r, g, b):
    """XYZ with channels relative to the white point (white -> 1,1,1)."""
    rl, gl, bl = _linearize(r), _linearize(g), _linearize(b)
    out = []
    for row, w in zip(_XYZ_M, _WHITE):
        out.append((row[0] * rl + row[1] * gl + row[2] * bl) / w)
    return out


def _to_xyz(r, g, b):
    return [255.0 * c for c in _to_xyz_rel(r, g, b)]


def _lab_f(t):
    return np.where(t > _LAB_EPS, np.cbrt(t), (_LAB_KAPPA * t + 16.0) / 116.0)


def _to_lab(r, g, b):
    xr, yr, zr = _to_xyz_rel(r, g, b)
    fx, fy, fz = _lab_f(xr), _lab_f(yr), _lab_f(zr)
    lstar = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy) + 128.0
    bb = 200.0 * (fy - fz) + 128.0
    return [lstar, a, bb]


_CONVERTERS = {
    "cmy": _to_cmy,
    "ycbcr": _to_ycbcr,
    "xyz": _to_xyz,
    "lab": _to_lab,
}


def convert_color(x, model: ColorModelSpec | str) -> IntTensor:
    """Convert a raw RGB batch (B, 3, H, W), values in [0, 255], to the
    given model's integer channels. RGB is the identity."""
    spec = spec_for(model) if isinstance(model, str) else model
    if isinstance(x, IntTensor):
        data = x.data
    else:
        data = np.asarray(x)
        if not np.issubdtype(data.dtype, np.integer):
            raise TypeError("convert_color expects integer RGB input")
    if data.ndim != 4 or data.shape[1] != 3:
        raise ValueError(f"convert_color expects (B, 3, H, W), got {data.shape}")
    if data.size and (int(data.min()) < 0 or int(data.max()) > 255):
        raise ValueError("convert_color: RGB values must lie in [0, 255]")
    if spec.name == "rgb":
        return IntTensor(data.astype(np.int64))
    if spec.name in ("hsl", "hsv"):
        return IntTensor(_hsl_hsv_exact(data.astype(np.int64), spec.name))
    if spec.name not in _CONVERTERS:
        raise ValueError(f"cannot convert to {spec.name!r}")

    r = data[:, 0].astype(np.float64)
    g = data[:, 1].astype(np.float64)
    b = data[:, 2].astype(np.float64)
    channels = _CONVERTERS[spec.name](r, g, b)
    return IntTensor(_quantize(channels, spec))
