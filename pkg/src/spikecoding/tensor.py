"""Reverse-mode automatic differentiation over numpy arrays.

Tensor wraps a float64 ndarray; IntTensor wraps int64 for exact integer
pixel math (bit planes, color channels). Differentiable ops append a
backward closure to the active Tape. Ops are recorded in execution order,
which is already a topological order of the data flow, so Tape.backward
replays the list once in reverse and every gradient is complete before
its producer runs. Gradients accumulate additively; callers reset them
between optimization steps.

Only scalar-with-tensor broadcasting is supported. Row-vector and
channel-vector bias additions are dedicated ops (add_bias, conv2d's bias)
with explicit reducing adjoints, not general broadcasting.
"""

from __future__ import annotations

import numpy as np

# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

_ACTIVE = None


class Tape:
    """Ordered record of differentiable ops for one backward pass."""

    def __init__(self):
        self._ops = []

    def __len__(self):
        return len(self._ops)

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("a tape is already active")
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = None
        return False

    def backward(self, loss: "Tensor") -> None:
        """Seed d(loss)/d(loss) = 1 and run every recorded closure once,
        in reverse creation order. loss must be a scalar on this tape."""
        if not isinstance(loss, Tensor):
            raise TypeError("loss must be a Tensor")
        if loss.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if not self._ops:
            raise ValueError("tape is empty, nothing to differentiate")
        loss.grad = np.ones((), dtype=np.float64)
        for op in reversed(self._ops):
            op()


def active_tape():
    return _ACTIVE


def _wants_grad(*tensors) -> bool:
    if _ACTIVE is None:
        return False
    return any(t.requires_grad for t in tensors if isinstance(t, Tensor))


def _record(out: "Tensor", fn) -> None:
    out.requires_grad = True
    _ACTIVE._ops.append(fn)


def _accum(t: "Tensor", g) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _accum_reduced(t: "Tensor", g) -> None:
    """Accumulate, collapsing g onto a 0-d tensor when it was broadcast."""
    if not t.requires_grad:
        return
    if t.shape == () and np.ndim(g) != 0:
        g = np.asarray(g.sum())
    _accum(t, g)


# --------------------------------------------------------------------------
# float tensor
# --------------------------------------------------------------------------


class Tensor:
    """Dense float64 tensor with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    # -- basics ------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- elementwise arithmetic ---------------------------------------------

    def _other_parts(self, other, opname):
        """Return (other_tensor_or_None, other_data) after shape checks."""
        if isinstance(other, Tensor):
            if other.shape != self.shape and other.shape != () and self.shape != ():
                raise ValueError(
                    f"{opname}: shape mismatch {self.shape} vs {other.shape}"
                )
            return other, other.data
        if isinstance(other, (int, float, np.integer, np.floating)):
            return None, float(other)
        raise TypeError(f"{opname}: unsupported operand {type(other).__name__}")

    def __add__(self, other):
        ot, od = self._other_parts(other, "add")
        out = Tensor(self.data + od)
        if _wants_grad(self, ot):
            def _bw(a=self, b=ot, out=out):
                g = out.grad
                if g is None:
                    return
                _accum_reduced(a, g)
                if b is not None:
                    _accum_reduced(b, g)
            _record(out, _bw)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        ot, od = self._other_parts(other, "sub")
        out = Tensor(self.data - od)
        if _wants_grad(self, ot):
            def _bw(a=self, b=ot, out=out):
                g = out.grad
                if g is None:
                    return
                _accum_reduced(a, g)
                if b is not None:
                    _accum_reduced(b, -g)
            _record(out, _bw)
        return out

    def __rsub__(self, other):
        ot, od = self._other_parts(other, "sub")
        out = Tensor(od - self.data)
        if _wants_grad(self, ot):
            def _bw(a=self, b=ot, out=out):
                g = out.grad
                if g is None:
                    return
                _accum_reduced(a, -g)
                if b is not None:
                    _accum_reduced(b, g)
            _record(out, _bw)
        return out

    def __mul__(self, other):
        ot, od = self._other_parts(other, "mul")
        out = Tensor(self.data * od)
        if _wants_grad(self, ot):
            def _bw(a=self, b=ot, out=out, ad=self.data, bd=od):
                g = out.grad
                if g is None:
                    return
                _accum_reduced(a, g * bd)
                if b is not None:
                    _accum_reduced(b, g * ad)
            _record(out, _bw)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        ot, od = self._other_parts(other, "div")
        if np.any(np.asarray(od) == 0.0):
            raise ZeroDivisionError("div: division by zero")
        out = Tensor(self.data / od)
        if _wants_grad(self, ot):
            def _bw(a=self, b=ot, out=out, ad=self.data, bd=od):
                g = out.grad
                if g is None:
                    return
                _accum_reduced(a, g / bd)
                if b is not None:
                    _accum_reduced(b, -g * ad / (bd * bd))
            _record(out, _bw)
        return out

    def __rtruediv__(self, other):
        ot, od = self._other_parts(other, "div")
        if np.any(self.data == 0.0):
            raise ZeroDivisionError("div: division by zero")
        out = Tensor(od / self.data)
        if _wants_grad(self, ot):
            def _bw(a=self, b=ot, out=out, ad=self.data, bd=od):
                g = out.grad
                if g is None:
                    return
                _accum_reduced(a, -g * bd / (ad * ad))
                if b is not None:
                    _accum_reduced(b, g / ad)
            _record(out, _bw)
        return out

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape and reductions -----------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape))
        if _wants_grad(self):
            def _bw(a=self, out=out):
                g = out.grad
                if g is None:
                    return
                _accum(a, g.reshape(a.shape))
            _record(out, _bw)
        return out

    def sum(self) -> "Tensor":
        out = Tensor(self.data.sum())
        if _wants_grad(self):
            def _bw(a=self, out=out):
                g = out.grad
                if g is None:
                    return
                _accum(a, np.broadcast_to(g, a.shape))
            _record(out, _bw)
        return out

    def mean(self) -> "Tensor":
        if self.data.size == 0:
            raise ValueError("mean of empty tensor")
        out = Tensor(self.data.mean())
        if _wants_grad(self):
            def _bw(a=self, out=out, n=self.data.size):
                g = out.grad
                if g is None:
                    return
                _accum(a, np.broadcast_to(g / n, a.shape))
            _record(out, _bw)
        return out


def elementwise(op: str, a, b):
    """Dispatch a named elementwise op. add/sub/mul/div work on Tensors
    (recorded when grads are wanted); floor (floor division) and mod are
    the exact integer ops used by bit-plane slicing."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    if op in ("floor", "floor_div"):
        return a // b
    if op == "mod":
        return a % b
    raise ValueError(f"unknown elementwise op {op!r}")


# --------------------------------------------------------------------------
# linear algebra and structured ops
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product (m,k) @ (k,n)."""
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul expects Tensors")
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    if _wants_grad(a, b):
        def _bw(a=a, b=b, out=out):
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                _accum(a, g @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ g)
        _record(out, _bw)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-vector bias: (B,K) + (K,), adjoint sums the batch axis."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")
    out = Tensor(x.data + b.data)
    if _wants_grad(x, b):
        def _bw(x=x, b=b, out=out):
            g = out.grad
            if g is None:
                return
            if x.requires_grad:
                _accum(x, g)
            if b.requires_grad:
                _accum(b, g.sum(axis=0))
        _record(out, _bw)
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, oh: int, ow: int, stride: int):
    """(B*oh*ow, C*kh*kw) patch matrix from the padded input, one copy."""
    bsz, cin = xp.shape[0], xp.shape[1]
    sb, sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (bsz, cin, oh, ow, kh, kw),
        (sb, sc, sh * stride, sw * stride, sh, sw))
    # the reshape of the overlapping view is what materializes the copy
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(
        bsz * oh * ow, cin * kh * kw)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW layout, via im2col + one GEMM.

    x: (B, Cin, H, W), w: (Cout, Cin, KH, KW), bias: (Cout,) or None.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d needs 4-D x and w, got {x.shape} and {w.shape}")
    bsz, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: channel mismatch, x has {cin}, w expects {cin_w}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError("conv2d: kernel larger than padded input")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    # (B*oh*ow, Cin*kh*kw) @ (Cin*kh*kw, Cout)
    colmat = _im2col(xp, kh, kw, oh, ow, stride)
    wmat = w.data.reshape(cout, -1)
    omat = colmat @ wmat.T
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        omat += bias.data
    out = Tensor(np.ascontiguousarray(
        omat.reshape(bsz, oh, ow, cout).transpose(0, 3, 1, 2)))

    if _wants_grad(x, w, bias):
        def _bw(x=x, w=w, bias=bias, out=out, colmat=colmat, wmat=wmat):
            g = out.grad
            if g is None:
                return
            gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(
                bsz * oh * ow, cout)
            if w.requires_grad:
                _accum(w, (gmat.T @ colmat).reshape(w.shape))
            if bias is not None and bias.requires_grad:
                _accum(bias, gmat.sum(axis=0))
            if x.requires_grad:
                if stride == 1 and kh > padding and kw > padding:
                    # dX is the full correlation of g with the kernel
                    # flipped spatially and swapped in/out: one more GEMM
                    gp = np.pad(g, ((0, 0), (0, 0),
                                    (kh - 1 - padding, kh - 1 - padding),
                                    (kw - 1 - padding, kw - 1 - padding)))
                    gcol = _im2col(gp, kh, kw, h, wd, 1)
                    wflip = np.ascontiguousarray(
                        w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                        .reshape(cin, cout * kh * kw))
                    _accum(x, (gcol @ wflip.T).reshape(
                        bsz, h, wd, cin).transpose(0, 3, 1, 2))
                else:
                    dcol = gmat @ wmat
                    dcols = dcol.reshape(bsz, oh, ow, cin, kh, kw).transpose(
                        0, 3, 4, 5, 1, 2)
                    dxp = np.zeros((bsz, cin, hp, wp), dtype=np.float64)
                    for i in range(kh):
                        for j in range(kw):
                            dxp[:, :, i : i + stride * oh : stride,
                                j : j + stride * ow : stride] += dcols[:, :, i, j]
                    if padding:
                        dxp = dxp[:, :, padding : padding + h,
                                  padding : padding + wd]
                    _accum(x, dxp)
        _record(out, _bw)
    return out


def _im2col_nhwc(xp: np.ndarray, kh: int, kw: int, oh: int, ow: int):
    """(B*oh*ow, kh*kw*C) patch matrix from padded NHWC input, stride 1.

    With channels innermost every patch row is a run of contiguous
    channel vectors, so the materializing reshape copies fast.
    """
    bsz, cin = xp.shape[0], xp.shape[3]
    sb, sh, sw, sc = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, (bsz, oh, ow, kh, kw, cin), (sb, sh, sw, sh, sw, sc))
    return windows.reshape(bsz * oh * ow, kh * kw * cin)


def conv2d_nhwc(x: Tensor, w: Tensor, bias: Tensor | None = None,
                padding: int = 0) -> Tensor:
    """2-D cross-correlation on NHWC activations, stride 1 only.

    x: (B, H, W, Cin); w: (Cout, Cin, KH, KW) exactly as for conv2d;
    bias: (Cout,) or None. Same math as conv2d up to layout, but both the
    patch gather and the output need no transposed copies, which makes it
    the network's hot-path op. Requires padding < kernel on both axes.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(
            f"conv2d_nhwc needs 4-D x and w, got {x.shape} and {w.shape}")
    bsz, h, wd, cin = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(
            f"conv2d_nhwc: channel mismatch, x has {cin}, w expects {cin_w}")
    if padding < 0 or padding >= kh or padding >= kw:
        raise ValueError("conv2d_nhwc: need 0 <= padding < kernel")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError("conv2d_nhwc: kernel larger than padded input")
    oh, ow = hp - kh + 1, wp - kw + 1

    if padding:
        xp = np.zeros((bsz, hp, wp, cin), dtype=np.float64)
        xp[:, padding : padding + h, padding : padding + wd] = x.data
    else:
        xp = x.data
    colmat = _im2col_nhwc(xp, kh, kw, oh, ow)
    wmat = w.data.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
    omat = colmat @ wmat
    if bias is not None:
        if bias.data.shape != (cout,):
            raise ValueError(f"conv2d_nhwc: bias shape {bias.shape} != ({cout},)")
        omat += bias.data
    out = Tensor(omat.reshape(bsz, oh, ow, cout))

    if _wants_grad(x, w, bias):
        def _bw(x=x, w=w, bias=bias, out=out, colmat=colmat):
            g = out.grad
            if g is None:
                return
            gmat = np.ascontiguousarray(g).reshape(bsz * oh * ow, cout)
            if w.requires_grad:
                dwl = (colmat.T @ gmat).reshape(kh, kw, cin, cout)
                _accum(w, np.ascontiguousarray(dwl.transpose(3, 2, 0, 1)))
            if bias is not None and bias.requires_grad:
                _accum(bias, gmat.sum(axis=0))
            if x.requires_grad:
                # dX: full correlation of g with the kernel flipped
                # spatially and swapped in/out, one more gather + GEMM
                ph, pw = kh - 1 - padding, kw - 1 - padding
                gp = np.zeros((bsz, oh + 2 * ph, ow + 2 * pw, cout),
                              dtype=np.float64)
                gp[:, ph : ph + oh, pw : pw + ow] = gmat.reshape(
                    bsz, oh, ow, cout)
                gcol = _im2col_nhwc(gp, kh, kw, h, wd)
                wflip = np.ascontiguousarray(
                    w.data.transpose(2, 3, 0, 1)[::-1, ::-1]).reshape(
                        kh * kw * cout, cin)
                _accum(x, (gcol @ wflip).reshape(bsz, h, wd, cin))

        _record(out, _bw)
    return out


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling; k must divide H and W."""
    if x.data.ndim != 4:
        raise ValueError(f"avg_pool2d needs a 4-D tensor, got {x.shape}")
    bsz, c, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise ValueError(f"avg_pool2d: window {k} must divide H={h}, W={w}")
    oh, ow = h // k, w // k
    out = Tensor(x.data.reshape(bsz, c, oh, k, ow, k).mean(axis=(3, 5)))
    if _wants_grad(x):
        def _bw(x=x, out=out):
            g = out.grad
            if g is None:
                return
            spread = np.broadcast_to(
                (g / (k * k))[:, :, :, None, :, None], (bsz, c, oh, k, ow, k))
            _accum(x, spread.reshape(bsz, c, h, w))
        _record(out, _bw)
    return out


def avg_pool2d_nhwc(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling on NHWC activations."""
    if x.data.ndim != 4:
        raise ValueError(f"avg_pool2d_nhwc needs a 4-D tensor, got {x.shape}")
    bsz, h, w, c = x.shape
    if k < 1 or h % k or w % k:
        raise ValueError(f"avg_pool2d_nhwc: window {k} must divide H={h}, W={w}")
    oh, ow = h // k, w // k
    out = Tensor(x.data.reshape(bsz, oh, k, ow, k, c).mean(axis=(2, 4)))
    if _wants_grad(x):
        def _bw(x=x, out=out):
            g = out.grad
            if g is None:
                return
            spread = np.broadcast_to(
                (g / (k * k))[:, :, None, :, None, :], (bsz, oh, k, ow, k, c))
            _accum(x, spread.reshape(bsz, h, w, c))

        _record(out, _bw)
    return out


def split_rows(x: Tensor, count: int) -> list:
    """Split axis 0 into `count` equal consecutive blocks.

    The pieces are views, so the split is free; gradients from all pieces
    are gathered back into x in one pass.
    """
    if x.data.ndim < 1:
        raise ValueError("split_rows needs at least a 1-D tensor")
    n = x.shape[0]
    if count < 1 or n % count:
        raise ValueError(f"split_rows: {count} must divide axis 0 ({n})")
    step = n // count
    parts = [Tensor(x.data[i * step : (i + 1) * step]) for i in range(count)]
    if _wants_grad(x):
        for p in parts:
            p.requires_grad = True

        def _bw(x=x, parts=parts, step=step):
            if all(p.grad is None for p in parts):
                return
            g = np.empty_like(x.data)
            for i, p in enumerate(parts):
                blk = g[i * step : (i + 1) * step]
                blk[...] = 0.0 if p.grad is None else p.grad
            _accum(x, g)

        _record(parts[0], _bw)
    return parts


def stack_rows(parts) -> Tensor:
    """Concatenate tensors along axis 0; the inverse of split_rows."""
    parts = list(parts)
    if not parts:
        raise ValueError("stack_rows needs at least one tensor")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    if _wants_grad(*parts):
        def _bw(parts=parts, out=out):
            g = out.grad
            if g is None:
                return
            ofs = 0
            for p in parts:
                n = p.shape[0]
                if p.requires_grad:
                    _accum(p, g[ofs : ofs + n])
                ofs += n

        _record(out, _bw)
    return out


# --------------------------------------------------------------------------
# integer tensor
# --------------------------------------------------------------------------


class IntTensor:
    """Integer tensor for exact pixel math. Values must be nonnegative."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.integer):
            raise TypeError("IntTensor requires integer-valued input")
        arr = np.ascontiguousarray(arr.astype(np.int64))
        if arr.size and int(arr.min()) < 0:
            raise ValueError("IntTensor values must be nonnegative")
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"IntTensor(shape={self.shape})"

    def _od(self, other, opname):
        if isinstance(other, IntTensor):
            if other.shape != self.shape and other.shape != () and self.shape != ():
                raise ValueError(
                    f"{opname}: shape mismatch {self.shape} vs {other.shape}")
            return other.data
        if isinstance(other, (int, np.integer)):
            return int(other)
        raise TypeError(f"{opname}: unsupported operand {type(other).__name__}")

    def __floordiv__(self, other):
        od = self._od(other, "floor_div")
        if np.any(np.asarray(od) == 0):
            raise ZeroDivisionError("floor_div: division by zero")
        return IntTensor(self.data // od)

    def __mod__(self, other):
        od = self._od(other, "mod")
        if np.any(np.asarray(od) == 0):
            raise ZeroDivisionError("mod: division by zero")
        return IntTensor(self.data % od)

    def __add__(self, other):
        return IntTensor(self.data + self._od(other, "add"))

    def __mul__(self, other):
        return IntTensor(self.data * self._od(other, "mul"))

    def to_tensor(self) -> Tensor:
        return Tensor(self.data.astype(np.float64))
