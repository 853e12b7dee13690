"""Integrate-and-fire dynamics with surrogate spike gradients.

The forward spike is a hard threshold (firing exactly at the boundary);
the backward pass substitutes a smooth bell-shaped derivative so training
signals survive the discontinuity. Two families are provided:

  sigmoid:  alpha * e^(alpha*x) / (e^(alpha*x) + 1)^2
  arctan:   alpha / (2 * (1 + (pi/2 * alpha * x)^2))

with x = v - v_threshold. Both are even in x and peak at x = 0 (values
alpha/4 and alpha/2). Each family also has a smooth forward stand-in whose
exact derivative is the surrogate, used by finite-difference checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, _accum, _record, _wants_grad

FAMILIES = ("sigmoid", "arctan")


@dataclass(frozen=True)
class SurrogateSpec:
    family: str = "arctan"
    alpha: float = 2.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown surrogate family {self.family!r}")
        if not self.alpha > 0:
            raise ValueError("surrogate alpha must be positive")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def surrogate_grad(x, spec: SurrogateSpec) -> np.ndarray:
    """Backward derivative substitute evaluated at x = v - v_threshold."""
    x = np.asarray(x, dtype=np.float64)
    a = spec.alpha
    if spec.family == "sigmoid":
        # a * e^(ax) / (e^(ax)+1)^2 == a * s * (1 - s), s = sigmoid(ax);
        # the product form never overflows
        s = _stable_sigmoid(a * x)
        return a * s * (1.0 - s)
    u = 0.5 * math.pi * a * x
    return a / (2.0 * (1.0 + u * u))


def smooth_spike(x, spec: SurrogateSpec) -> np.ndarray:
    """Smooth forward stand-in whose derivative is surrogate_grad."""
    x = np.asarray(x, dtype=np.float64)
    if spec.family == "sigmoid":
        return _stable_sigmoid(spec.alpha * x)
    return np.arctan(0.5 * math.pi * spec.alpha * x) / math.pi + 0.5


def heaviside(theta, t: float):
    """Unit step in theta - t, firing at the boundary: 1 where theta >= t."""
    if isinstance(theta, Tensor):
        return Tensor((theta.data >= t).astype(np.float64))
    return (np.asarray(theta, dtype=np.float64) >= t).astype(np.float64)


@dataclass(frozen=True)
class IfConfig:
    """Integrate-and-fire step parameters. dt = 1 and unit capacitance,
    so one step is v <- v + drive. smooth replaces the hard threshold by
    the surrogate family's smooth forward (for gradient checking)."""
    v_threshold: float = 1.0
    v_reset: float = 0.0
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)
    smooth: bool = False


def if_step(v: Tensor, drive: Tensor, cfg: IfConfig) -> tuple[Tensor, Tensor]:
    """One discrete integrate-and-fire update.

    v_t = v + drive; spikes = H(v_t - v_threshold); the membrane is reset
    hard where it fired: v_next = v_t * (1 - s) + v_reset * s, which leaves
    fired entries at exactly v_reset.

    Recorded as a single tape op. The adjoint routes both output grads
    through the surrogate: with sg = surrogate_grad(v_t - v_threshold),

        d(spikes)/d(v_t) = sg
        d(v_next)/d(v_t) = (1 - s) + (v_reset - v_t) * sg

    and dL/d(v) = dL/d(drive) = dL/d(v_t).
    """
    if not isinstance(v, Tensor) or not isinstance(drive, Tensor):
        raise TypeError("if_step expects Tensor membrane and drive")
    if v.shape != drive.shape:
        raise ValueError(f"if_step: shape mismatch {v.shape} vs {drive.shape}")
    vt = v.data + drive.data
    x = vt - cfg.v_threshold
    if cfg.smooth:
        s_val = smooth_spike(x, cfg.surrogate)
    else:
        s_val = (x >= 0.0).astype(np.float64)
    vn_val = vt * (1.0 - s_val)
    if cfg.v_reset != 0.0:
        vn_val += cfg.v_reset * s_val
    spikes = Tensor(s_val)
    v_next = Tensor(vn_val)
    if _wants_grad(v, drive):
        def _bw(v=v, drive=drive, spikes=spikes, v_next=v_next,
                vt=vt, x=x, s_val=s_val, cfg=cfg):
            gs = spikes.grad
            gv = v_next.grad
            if gs is None and gv is None:
                return
            sg = surrogate_grad(x, cfg.surrogate)
            total = None
            if gs is not None:
                total = gs * sg
            if gv is not None:
                term = gv * ((1.0 - s_val) + (cfg.v_reset - vt) * sg)
                total = term if total is None else total + term
            _accum(v, total)
            _accum(drive, total)
        v_next.requires_grad = True
        _record(spikes, _bw)
    return spikes, v_next


class IfNeuron:
    """One integrate-and-fire layer holding membrane state across timesteps.

    State is created lazily at the first step (all v_reset) and carried
    on the tape so gradients flow through time.
    """

    def __init__(self, cfg: IfConfig | None = None):
        self.cfg = cfg if cfg is not None else IfConfig()
        self.v: Tensor | None = None

    def reset(self):
        self.v = None

    def step(self, drive: Tensor) -> Tensor:
        if self.v is None:
            self.v = Tensor(np.full(drive.shape, self.cfg.v_reset))
        spikes, self.v = if_step(self.v, drive, self.cfg)
        return spikes
