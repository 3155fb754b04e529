"""Closed primitive-op set for the tape.

Everything differentiable in this package (denoiser, samplers, feature
extractors, losses) composes from these primitives:

    add, mul, matmul, conv2d, nonlinearity, reshape, slice_, gather,
    reduce_sum, reduce_mean, log, exp, sqrt, power, softmax

Each op computes its numpy value eagerly, then records a node with a
vector-Jacobian closure if the active tape is connected to any input.
Closures capture only arrays the tape already owns (inputs/outputs);
anything derived (im2col buffers, sigmoid caches) is recomputed in the
vjp so the byte accounting in the meter stays exact.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tape import (GradkitError, ShapeMismatch, Tensor, UnknownOp, active_tape)

__all__ = [
    "add", "mul", "matmul", "conv2d", "nonlinearity", "reshape", "slice_",
    "gather", "reduce_sum", "reduce_mean", "log", "exp", "sqrt", "power",
    "softmax", "forward_op", "as_tensor", "constant", "NONLINEARITIES",
]


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    # scalars and integer arrays adopt the requested dtype so float32 graphs
    # are not silently promoted; explicit float arrays keep their own dtype
    if dtype is not None and (arr.ndim == 0 or not np.issubdtype(arr.dtype, np.floating)):
        arr = arr.astype(dtype)
    return Tensor(arr)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x))


def _parent_ref(tape, t: Tensor):
    if tape is None:
        return None
    if t.tape is tape and t.node is not None:
        return (t.node, t.slot)
    if t.requires_grad:
        return (tape.ensure_leaf(t), 0)
    return None


def _emit(op: str, inputs: Sequence[Tensor], out_values, vjp_builder) -> Tensor:
    """Wrap one output value; record a node when connected to the tape."""
    tape = active_tape()
    out = Tensor(out_values)
    if tape is None:
        return out
    parents = tuple(_parent_ref(tape, t) for t in inputs)
    if all(p is None for p in parents):
        return out
    vjp = vjp_builder()
    node = tape.record(op, parents, vjp, (out.values,))
    out.tape, out.node, out.slot = tape, node, 0
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce an operand pair; bare scalars adopt the tensor operand's dtype."""
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if ta and tb:
        return a, b
    if ta:
        return a, as_tensor(b, dtype=a.values.dtype)
    if tb:
        return as_tensor(a, dtype=b.values.dtype), b
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.values + b.values
    ash, bsh = a.values.shape, b.values.shape

    def build():
        def vjp(gs):
            g = gs[0]
            return (_unbroadcast(g, ash), _unbroadcast(g, bsh))
        return vjp

    return _emit("add", (a, b), out, build)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.values * b.values
    av, bv = a.values, b.values

    def build():
        def vjp(gs):
            g = gs[0]
            return (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
        return vjp

    return _emit("mul", (a, b), out, build)


def matmul(a, b, transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    av = a.values.T if transpose_a else a.values
    bv = b.values.T if transpose_b else b.values
    if av.shape[1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul inner dims disagree: {av.shape} @ {bv.shape}")
    out = av @ bv
    ra, rb = a.values, b.values

    def build():
        def vjp(gs):
            g = gs[0]
            if not transpose_a:
                ga = g @ (rb if transpose_b else rb.T)
            else:
                ga = (rb.T if transpose_b else rb) @ g.T
            if not transpose_b:
                gb = (ra if transpose_a else ra.T) @ g
            else:
                gb = g.T @ (ra.T if transpose_a else ra)
            return (ga, gb)
        return vjp

    return _emit("matmul", (a, b), out, build)


# ---------------------------------------------------------------------------
# convolution

def _conv_cols(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int,
               oh: int, ow: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return cols


def conv2d(x, w, stride: tuple[int, int] = (1, 1), pad: tuple[int, int] = (0, 0)) -> Tensor:
    """Cross-correlation of [B,C,H,W] input with [O,C,kh,kw] kernel."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-d input/kernel, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    sh, sw = stride
    ph, pw = pad
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    if oh <= 0 or ow <= 0:
        raise ShapeMismatch(f"conv2d output would be empty for input {x.shape}")

    xv, wv = x.values, w.values
    xp = np.pad(xv, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xv
    cols = _conv_cols(xp, kh, kw, sh, sw, oh, ow)
    wmat = wv.reshape(o, c * kh * kw)
    out = np.matmul(wmat, cols.reshape(b, c * kh * kw, oh * ow)).reshape(b, o, oh, ow)

    def build():
        def vjp(gs):
            g = gs[0]
            gl = g.reshape(b, o, oh * ow)
            # kernel grad: recompute cols rather than saving the buffer
            xp2 = (np.pad(xv, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
                   if (ph or pw) else xv)
            cols2 = _conv_cols(xp2, kh, kw, sh, sw, oh, ow).reshape(b, c * kh * kw, oh * ow)
            gw = np.tensordot(gl, cols2, axes=([0, 2], [0, 2])).reshape(o, c, kh, kw)
            gcols = np.matmul(wmat.T, gl).reshape(b, c, kh, kw, oh, ow)
            gxp = np.zeros_like(xp2)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gcols[:, :, i, j]
            gx = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
            return (gx, gw)
        return vjp

    return _emit("conv2d", (x, w), out, build)


# ---------------------------------------------------------------------------
# nonlinearities

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


NONLINEARITIES = ("relu", "silu", "sigmoid", "tanh", "abs")


def nonlinearity(x, kind: str) -> Tensor:
    x = as_tensor(x)
    xv = x.values
    if kind == "relu":
        out = np.maximum(xv, 0.0)
    elif kind == "silu":
        out = xv * _sigmoid(xv)
    elif kind == "sigmoid":
        out = _sigmoid(xv)
    elif kind == "tanh":
        out = np.tanh(xv)
    elif kind == "abs":
        out = np.abs(xv)
    else:
        raise UnknownOp(f"nonlinearity kind '{kind}' not in {NONLINEARITIES}")
    ov = out

    def build():
        def vjp(gs):
            g = gs[0]
            if kind == "relu":
                return (g * (xv > 0),)
            if kind == "silu":
                s = _sigmoid(xv)
                return (g * (s * (1.0 + xv * (1.0 - s))),)
            if kind == "sigmoid":
                return (g * (ov * (1.0 - ov)),)
            if kind == "tanh":
                return (g * (1.0 - ov * ov),)
            return (g * np.sign(xv),)  # abs; subgradient 0 at the kink
        return vjp

    return _emit(f"nonlinearity[{kind}]", (x,), out, build)


# ---------------------------------------------------------------------------
# shape and indexing

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.values.shape
    out = x.values.reshape(shape)

    def build():
        def vjp(gs):
            return (gs[0].reshape(old),)
        return vjp

    return _emit("reshape", (x,), out, build)


def slice_(x, key) -> Tensor:
    """Basic indexing (ints/slices); the vjp scatters into zeros."""
    x = as_tensor(x)
    out = x.values[key]
    xshape = x.values.shape

    def build():
        def vjp(gs):
            gx = np.zeros(xshape, dtype=gs[0].dtype)
            gx[key] = gs[0]
            return (gx,)
        return vjp

    return _emit("slice", (x,), np.ascontiguousarray(out), build)


def gather(x, indices, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeMismatch("gather indices must be integers")
    out = np.take(x.values, idx, axis=axis)
    xshape = x.values.shape
    ax = axis % x.values.ndim

    def build():
        def vjp(gs):
            gx = np.zeros(xshape, dtype=gs[0].dtype)
            np.add.at(gx, (slice(None),) * ax + (idx,), gs[0])
            return (gx,)
        return vjp

    return _emit("gather", (x,), out, build)


# ---------------------------------------------------------------------------
# reductions

def _reduce_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def _expand_like(g: np.ndarray, shape, axes, keepdims: bool) -> np.ndarray:
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _reduce_axes(axis, x.values.ndim)
    out = x.values.sum(axis=axes, keepdims=keepdims)
    xshape = x.values.shape

    def build():
        def vjp(gs):
            return (np.ascontiguousarray(_expand_like(gs[0], xshape, axes, keepdims)),)
        return vjp

    return _emit("reduce_sum", (x,), np.asarray(out), build)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _reduce_axes(axis, x.values.ndim)
    out = x.values.mean(axis=axes, keepdims=keepdims)
    xshape = x.values.shape
    count = int(np.prod([xshape[a] for a in axes])) if axes else 1

    def build():
        def vjp(gs):
            return (np.ascontiguousarray(
                _expand_like(gs[0], xshape, axes, keepdims)) / count,)
        return vjp

    return _emit("reduce_mean", (x,), np.asarray(out), build)


# ---------------------------------------------------------------------------
# transcendental / power

def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.values)
    xv = x.values

    def build():
        def vjp(gs):
            return (gs[0] / xv,)
        return vjp

    return _emit("log", (x,), out, build)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.values)
    ov = out

    def build():
        def vjp(gs):
            return (gs[0] * ov,)
        return vjp

    return _emit("exp", (x,), out, build)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.values)
    ov = out

    def build():
        def vjp(gs):
            return (gs[0] * (0.5 / ov),)
        return vjp

    return _emit("sqrt", (x,), out, build)


def power(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    p = float(exponent)
    out = x.values ** p
    xv = x.values

    def build():
        def vjp(gs):
            return (gs[0] * (p * xv ** (p - 1.0)),)
        return vjp

    return _emit("power", (x,), out, build)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xv = x.values
    shifted = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    ov = out

    def build():
        def vjp(gs):
            g = gs[0]
            inner = (g * ov).sum(axis=axis, keepdims=True)
            return (ov * (g - inner),)
        return vjp

    return _emit("softmax", (x,), out, build)


# ---------------------------------------------------------------------------
# generic dispatch

_REGISTRY = {
    "add": add,
    "mul": mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "nonlinearity": nonlinearity,
    "reshape": reshape,
    "slice": slice_,
    "gather": gather,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "log": log,
    "exp": exp,
    "sqrt": sqrt,
    "power": power,
    "softmax": softmax,
}


def forward_op(op_id: str, inputs: Sequence, **attrs) -> Tensor:
    """Dispatch by op id; raises UnknownOp for anything outside the set."""
    fn = _REGISTRY.get(op_id)
    if fn is None:
        raise UnknownOp(f"op '{op_id}' is not in the primitive set "
                        f"{sorted(_REGISTRY)}")
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# operator sugar on Tensor (composition of primitives, no new derivatives)

def _neg(t):
    return mul(t, -1.0)


def _sub(a, b):
    return add(a, mul(b, -1.0))


def _rsub(a, b):
    return add(b, mul(a, -1.0))


def _div(a, b):
    if isinstance(b, Tensor):
        return mul(a, power(b, -1.0))
    return mul(a, 1.0 / float(b))


def _rdiv(a, b):
    return mul(power(a, -1.0), b)


Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(self, other)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(self, other)
Tensor.__sub__ = _sub
Tensor.__rsub__ = _rsub
Tensor.__truediv__ = _div
Tensor.__rtruediv__ = _rdiv
Tensor.__neg__ = _neg
Tensor.__pow__ = lambda self, p: power(self, p)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.__getitem__ = lambda self, key: slice_(self, key)
