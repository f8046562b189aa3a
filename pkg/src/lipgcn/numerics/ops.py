"""Differentiable operations over :class:`~lipgcn.numerics.tensor.Tensor`.

Dimension conventions follow the rest of the package: batch B, nodes N,
time T, channels C. Convolutions and the GRU dispatch to the active kernel
backend (:mod:`lipgcn.kernels`); everything else is plain numpy with
hand-written adjoints.
"""

import numpy as np

from .. import kernels
from ..errors import ConfigError, DimensionError, UsageError
from .tensor import Tensor, accumulate_grad, record


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise / broadcast arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: cannot broadcast {a.shape} with {b.shape}") from None
    def adjoint(g):
        accumulate_grad(a, g)
        accumulate_grad(b, g)
    return record(Tensor(data), "add", (a, b), adjoint)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub: cannot broadcast {a.shape} with {b.shape}") from None
    def adjoint(g):
        accumulate_grad(a, g)
        accumulate_grad(b, -g)
    return record(Tensor(data), "sub", (a, b), adjoint)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None
    def adjoint(g):
        accumulate_grad(a, g * b.data)
        accumulate_grad(b, g * a.data)
    return record(Tensor(data), "mul", (a, b), adjoint)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise DimensionError(f"div: cannot broadcast {a.shape} with {b.shape}") from None
    def adjoint(g):
        accumulate_grad(a, g / b.data)
        accumulate_grad(b, -g * a.data / (b.data * b.data))
    return record(Tensor(data), "div", (a, b), adjoint)


def neg(x):
    x = _as_tensor(x)
    def adjoint(g):
        accumulate_grad(x, -g)
    return record(Tensor(-x.data), "neg", (x,), adjoint)


def scale(x, s):
    """Multiply by a python scalar constant."""
    x = _as_tensor(x)
    s = float(s)
    def adjoint(g):
        accumulate_grad(x, g * s)
    return record(Tensor(x.data * s), "scale", (x,), adjoint)


def sqrt(x):
    x = _as_tensor(x)
    data = np.sqrt(x.data)
    def adjoint(g):
        accumulate_grad(x, g * (0.5 / np.sqrt(x.data)))
    return record(Tensor(data), "sqrt", (x,), adjoint)


def exp(x):
    x = _as_tensor(x)
    data = np.exp(x.data)
    def adjoint(g):
        accumulate_grad(x, g * data)
    return record(Tensor(data), "exp", (x,), adjoint)


def log(x):
    x = _as_tensor(x)
    def adjoint(g):
        accumulate_grad(x, g / x.data)
    return record(Tensor(np.log(x.data)), "log", (x,), adjoint)


def relu(x):
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0)
    def adjoint(g):
        accumulate_grad(x, g * (x.data > 0.0))
    return record(Tensor(data), "relu", (x,), adjoint)


def sigmoid(x):
    x = _as_tensor(x)
    d = x.data
    data = np.empty_like(d)
    pos = d >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    data[~pos] = e / (1.0 + e)
    def adjoint(g):
        accumulate_grad(x, g * data * (1.0 - data))
    return record(Tensor(data), "sigmoid", (x,), adjoint)


def tanh(x):
    x = _as_tensor(x)
    data = np.tanh(x.data)
    def adjoint(g):
        accumulate_grad(x, g * (1.0 - data * data))
    return record(Tensor(data), "tanh", (x,), adjoint)


_POINTWISE = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "add": add,
    "mul": mul,
    "scale": scale,
}


def pointwise(op, *args):
    """Dispatch an elementwise op by name: relu/sigmoid/tanh/add/mul/scale."""
    try:
        fn = _POINTWISE[op]
    except KeyError:
        raise UsageError(f"unknown pointwise op {op!r}; have {sorted(_POINTWISE)}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def sum_(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    def adjoint(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        accumulate_grad(x, np.broadcast_to(gg, x.data.shape))
    return record(Tensor(data), "sum", (x,), adjoint)


def mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.shape[axis]
    def adjoint(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        accumulate_grad(x, np.broadcast_to(gg, x.data.shape) / count)
    return record(Tensor(data), "mean", (x,), adjoint)


def reshape(x, shape):
    x = _as_tensor(x)
    def adjoint(g):
        accumulate_grad(x, g.reshape(x.data.shape))
    return record(Tensor(x.data.reshape(shape)), "reshape", (x,), adjoint)


def transpose(x, axes):
    x = _as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    def adjoint(g):
        accumulate_grad(x, g.transpose(inverse))
    return record(Tensor(x.data.transpose(axes)), "transpose", (x,), adjoint)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    if len(tensors) < 1:
        raise UsageError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]
    def adjoint(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            accumulate_grad(t, piece)
    return record(Tensor(data), "concat", tuple(tensors), adjoint)


def narrow(x, axis, start, length):
    """Contiguous slice along one axis; the adjoint zero-pads back."""
    x = _as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    def adjoint(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        accumulate_grad(x, gx)
    return record(Tensor(x.data[index]), "narrow", (x,), adjoint)


def flip(x, axis):
    x = _as_tensor(x)
    def adjoint(g):
        accumulate_grad(x, np.flip(g, axis=axis))
    return record(Tensor(np.flip(x.data, axis=axis)), "flip", (x,), adjoint)


def replicate_pad(x, axis, pad):
    """Edge-replicate ``pad`` entries on both ends of ``axis``."""
    x = _as_tensor(x)
    if pad == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (pad, pad)
    data = np.pad(x.data, widths, mode="edge")
    def adjoint(g):
        first = [slice(None)] * x.ndim
        first[axis] = slice(0, pad + 1)
        last = [slice(None)] * x.ndim
        last[axis] = slice(g.shape[axis] - pad - 1, g.shape[axis])
        mid = [slice(None)] * x.ndim
        mid[axis] = slice(pad + 1, g.shape[axis] - pad - 1)
        gx_first = g[tuple(first)].sum(axis=axis, keepdims=True)
        gx_last = g[tuple(last)].sum(axis=axis, keepdims=True)
        accumulate_grad(x, np.concatenate([gx_first, g[tuple(mid)], gx_last], axis=axis))
    return record(Tensor(data), "replicate_pad", (x,), adjoint)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul: inner extents disagree for {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: cannot broadcast {a.shape} x {b.shape}") from None
    def adjoint(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        accumulate_grad(a, np.matmul(g, bt))
        accumulate_grad(b, np.matmul(at, g))
    return record(Tensor(data), "matmul", (a, b), adjoint)


def linear(x, w, b=None):
    """x @ w (+ b broadcast on the last axis)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax(x, axis=-1):
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    def adjoint(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        accumulate_grad(x, data * (g - dot))
    return record(Tensor(data), "softmax", (x,), adjoint)


def log_softmax(x, axis=-1):
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    def adjoint(g):
        accumulate_grad(x, g - np.exp(data) * g.sum(axis=axis, keepdims=True))
    return record(Tensor(data), "log_softmax", (x,), adjoint)


# ---------------------------------------------------------------------------
# convolutions and the GRU (kernel-backed)


def _require_odd(extents, op):
    for e in extents:
        if e % 2 == 0:
            raise ConfigError(f"{op}: kernel extents must be odd, got {tuple(extents)}")


def conv1d_temporal(x, kernel, dilation=1):
    """Dilated temporal conv, x [B,C,T] * kernel [O,C,K] -> [B,O,T] (T preserved)."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise DimensionError(
            f"conv1d_temporal: need x [B,C,T] and kernel [O,C,K], got {x.shape} and {kernel.shape}"
        )
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"conv1d_temporal: channel mismatch between x {x.shape} and kernel {kernel.shape}"
        )
    _require_odd((kernel.shape[2],), "conv1d_temporal")
    if dilation < 1:
        raise ConfigError(f"conv1d_temporal: dilation must be >= 1, got {dilation}")
    data = kernels.conv1d_forward(x.data, kernel.data, dilation)
    def adjoint(g):
        gx, gk = kernels.conv1d_backward(np.ascontiguousarray(g), x.data, kernel.data, dilation)
        accumulate_grad(x, gx)
        accumulate_grad(kernel, gk)
    return record(Tensor(data), "conv1d", (x, kernel), adjoint)


def conv2d_spatial(x, kernel, stride=1):
    """Strided 2-D conv, x [B,C,H,W] * kernel [O,C,KH,KW], padding K//2."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"conv2d_spatial: need x [B,C,H,W] and kernel [O,C,KH,KW], got {x.shape} and {kernel.shape}"
        )
    _require_odd(kernel.shape[2:], "conv2d_spatial")
    if stride < 1:
        raise ConfigError(f"conv2d_spatial: stride must be >= 1, got {stride}")
    data = kernels.conv2d_forward(x.data, kernel.data, stride)
    def adjoint(g):
        gx, gk = kernels.conv2d_backward(np.ascontiguousarray(g), x.data, kernel.data, stride)
        accumulate_grad(x, gx)
        accumulate_grad(kernel, gk)
    return record(Tensor(data), "conv2d", (x, kernel), adjoint)


def conv3d_local(x, kernel):
    """Same-padded 3-D conv, x [B,C,T,H,W] * kernel [O,C,kt,kh,kw]; T,H,W preserved."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 5 or kernel.ndim != 5 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"conv3d_local: need x [B,C,T,H,W] and kernel [O,C,kt,kh,kw], got {x.shape} and {kernel.shape}"
        )
    _require_odd(kernel.shape[2:], "conv3d_local")
    data = kernels.conv3d_forward(x.data, kernel.data)
    def adjoint(g):
        gx, gk = kernels.conv3d_backward(np.ascontiguousarray(g), x.data, kernel.data)
        accumulate_grad(x, gx)
        accumulate_grad(kernel, gk)
    return record(Tensor(data), "conv3d", (x, kernel), adjoint)


def gru_sequence(x, wx, wh, bx, bh):
    """GRU over x [B,T,D] with zero initial state -> hidden sequence [B,T,H]."""
    x, wx, wh, bx, bh = map(_as_tensor, (x, wx, wh, bx, bh))
    H = wh.shape[0]
    if x.ndim != 3 or wx.shape != (x.shape[2], 3 * H) or wh.shape != (H, 3 * H) \
            or bx.shape != (3 * H,) or bh.shape != (3 * H,):
        raise DimensionError(
            "gru_sequence: need x [B,T,D], wx [D,3H], wh [H,3H], bx/bh [3H], got "
            f"{x.shape}, {wx.shape}, {wh.shape}, {bx.shape}, {bh.shape}"
        )
    data, cache = kernels.gru_forward(x.data, wx.data, wh.data, bx.data, bh.data)
    def adjoint(g):
        gx, gwx, gwh, gbx, gbh = kernels.gru_backward(
            np.ascontiguousarray(g), x.data, wx.data, wh.data, cache
        )
        accumulate_grad(x, gx)
        accumulate_grad(wx, gwx)
        accumulate_grad(wh, gwh)
        accumulate_grad(bx, gbx)
        accumulate_grad(bh, gbh)
    return record(Tensor(data), "gru_sequence", (x, wx, wh, bx, bh), adjoint)


# ---------------------------------------------------------------------------
# gather for landmark node-feature sampling


def gather_nodes(feat, rows, cols):
    """Pick per-landmark feature vectors from a feature map.

    feat [B,C,T,H,W]; rows/cols integer arrays [T,N] (shared across the
    batch) or [B,T,N]. Returns [B,N,T,C]. The adjoint scatter-adds into the
    feature map; the integer cell indices are data, not differentiated.
    """
    feat = _as_tensor(feat)
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    B, C, T, H, W = feat.data.shape
    if rows.ndim == 2:
        rows = np.broadcast_to(rows, (B,) + rows.shape)
        cols = np.broadcast_to(cols, (B,) + cols.shape)
    N = rows.shape[2]
    b_idx = np.arange(B)[:, None, None]
    t_idx = np.arange(T)[None, :, None]
    # [B,T,N,C] -> [B,N,T,C]
    picked = feat.data.transpose(0, 2, 3, 4, 1)[b_idx, t_idx, rows, cols]
    data = np.ascontiguousarray(picked.transpose(0, 2, 1, 3))
    def adjoint(g):
        gfeat = np.zeros((B, T, H, W, C), dtype=np.float64)
        np.add.at(gfeat, (b_idx, t_idx, rows, cols), g.transpose(0, 2, 1, 3))
        accumulate_grad(feat, np.ascontiguousarray(gfeat.transpose(0, 4, 1, 2, 3)))
    return record(Tensor(data), "gather_nodes", (feat,), adjoint)


# ---------------------------------------------------------------------------
# operator sugar on Tensor

Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = div
Tensor.__matmul__ = matmul
Tensor.__neg__ = neg
