"""Tape-based reverse-mode autodiff over float64 numpy arrays.

A Tape records every tensor in creation order during a forward pass;
backward() replays the records in reverse, accumulating gradients into
Tensor.grad. Operations are module-level functions. Any argument that is
not a Tensor is treated as a constant (no gradient flows into it), which
keeps masks, fixed kinematic matrices, and ground truth out of the graph.

Everything is float64. Shapes follow numpy broadcasting for elementwise
ops; matrix ops use the numpy @ broadcasting rules over leading batch
dimensions.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError, NumericError


class Tape:
    """Creation-ordered record of one forward pass."""

    def __init__(self) -> None:
        self._nodes: list[Tensor] = []
        self._leaves: dict[str, Tensor] = {}
        self._n_ops = 0

    def input(self, data) -> "Tensor":
        """Register a graph input that should receive a gradient."""
        return Tensor(self, data)

    def leaf(self, name: str, data) -> "Tensor":
        """Named input (parameter); cached so reuse shares one node."""
        node = self._leaves.get(name)
        if node is None:
            node = Tensor(self, data)
            self._leaves[name] = node
        return node

    @property
    def leaves(self) -> dict:
        return self._leaves


class Tensor:
    __slots__ = ("tape", "data", "grad", "_bwd")

    def __init__(self, tape: Tape, data, _bwd: Callable | None = None) -> None:
        self.tape = tape
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._bwd = _bwd
        tape._nodes.append(self)
        if _bwd is not None:
            tape._n_ops += 1

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros(self.data.shape, dtype=np.float64)
        self.grad += g


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss."""
    tape = loss.tape
    if tape._n_ops == 0:
        raise RuntimeError("backward called before any forward pass was recorded")
    if loss.data.shape != ():
        raise ConfigError(f"backward expects a scalar, got shape {loss.data.shape}")
    loss._accum(np.ones((), dtype=np.float64))
    for node in reversed(tape._nodes):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)


def _tape_of(*args) -> Tape:
    tapes = {a.tape for a in args if isinstance(a, Tensor)}
    if len(tapes) != 1:
        raise ConfigError("operation arguments must share exactly one tape")
    return tapes.pop()


def _data(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    ad, bd = _data(a), _data(b)
    out = Tensor(tape, ad + bd, _bwd=lambda g: _ew_back(g, a, b, None))
    return out


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    ad, bd = _data(a), _data(b)

    def bwd(g):
        if isinstance(a, Tensor):
            a._accum(_unbroadcast(g, ad.shape))
        if isinstance(b, Tensor):
            b._accum(_unbroadcast(-g, bd.shape))

    return Tensor(tape, ad - bd, _bwd=bwd)


def _ew_back(g, a, b, _):
    if isinstance(a, Tensor):
        a._accum(_unbroadcast(g, a.data.shape))
    if isinstance(b, Tensor):
        b._accum(_unbroadcast(g, b.data.shape))


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    ad, bd = _data(a), _data(b)

    def bwd(g):
        if isinstance(a, Tensor):
            a._accum(_unbroadcast(g * bd, ad.shape))
        if isinstance(b, Tensor):
            b._accum(_unbroadcast(g * ad, bd.shape))

    return Tensor(tape, ad * bd, _bwd=bwd)


def neg(a: Tensor) -> Tensor:
    return Tensor(a.tape, -a.data, _bwd=lambda g: a._accum(-g))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.tape, a.data * c, _bwd=lambda g: a._accum(g * c))


def square(a: Tensor) -> Tensor:
    return Tensor(a.tape, a.data ** 2, _bwd=lambda g: a._accum(2.0 * g * a.data))


def sigmoid(a: Tensor) -> Tensor:
    # expit without the scipy import: stable on both tails
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor(a.tape, out, _bwd=lambda g: a._accum(g * out * (1.0 - out)))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor(a.tape, out, _bwd=lambda g: a._accum(g * (1.0 - out ** 2)))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return Tensor(a.tape, out, _bwd=lambda g: a._accum(g * (a.data > 0)))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data)

    def bwd(g):
        x = a.data
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        a._accum(g * s)

    return Tensor(a.tape, out, _bwd=bwd)


# ---------------------------------------------------------------------------
# linear algebra


def affine(x, W, b=None) -> Tensor:
    """x @ W.T (+ b) for x of shape (in,) or (batch, in), W of shape (out, in)."""
    tape = _tape_of(x, W, b) if b is not None else _tape_of(x, W)
    xd, Wd = _data(x), _data(W)
    out = xd @ Wd.T
    if b is not None:
        out = out + _data(b)

    def bwd(g):
        if isinstance(x, Tensor):
            x._accum(g @ Wd)
        if isinstance(W, Tensor):
            if xd.ndim == 1:
                W._accum(np.outer(g, xd))
            else:
                W._accum(g.T @ xd)
        if b is not None and isinstance(b, Tensor):
            b._accum(g if xd.ndim == 1 else g.sum(axis=0))

    return Tensor(tape, out, _bwd=bwd)


def bmm(a, b) -> Tensor:
    """Batched matmul with numpy @ broadcasting over leading dims."""
    tape = _tape_of(a, b)
    ad, bd = _data(a), _data(b)

    def bwd(g):
        if isinstance(a, Tensor):
            a._accum(_unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape))
        if isinstance(b, Tensor):
            b._accum(_unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape))

    return Tensor(tape, ad @ bd, _bwd=bwd)


def bmv(a, v) -> Tensor:
    """Batched matrix-vector product: (..., n, m) x (..., m) -> (..., n)."""
    tape = _tape_of(a, v)
    ad, vd = _data(a), _data(v)
    out = np.einsum("...ij,...j->...i", ad, vd)

    def bwd(g):
        if isinstance(a, Tensor):
            a._accum(_unbroadcast(np.einsum("...i,...j->...ij", g, vd), ad.shape))
        if isinstance(v, Tensor):
            v._accum(_unbroadcast(np.einsum("...ij,...i->...j", ad, g), vd.shape))

    return Tensor(tape, out, _bwd=bwd)


def transpose_last2(a: Tensor) -> Tensor:
    return Tensor(a.tape, a.data.swapaxes(-1, -2),
                  _bwd=lambda g: a._accum(g.swapaxes(-1, -2)))


def inv2x2(a: Tensor) -> Tensor:
    """Closed-form inverse of a batch of 2x2 matrices."""
    d = a.data
    if d.shape[-2:] != (2, 2):
        raise ConfigError(f"inv2x2 expects trailing (2, 2), got {d.shape}")
    det = d[..., 0, 0] * d[..., 1, 1] - d[..., 0, 1] * d[..., 1, 0]
    if np.any(np.abs(det) < 1e-300) or not np.all(np.isfinite(det)):
        raise NumericError("singular 2x2 block in matrix inverse")
    inv = np.empty_like(d)
    inv[..., 0, 0] = d[..., 1, 1]
    inv[..., 0, 1] = -d[..., 0, 1]
    inv[..., 1, 0] = -d[..., 1, 0]
    inv[..., 1, 1] = d[..., 0, 0]
    inv = inv / det[..., None, None]

    def bwd(g):
        it = inv.swapaxes(-1, -2)
        a._accum(-(it @ g @ it))

    return Tensor(a.tape, inv, _bwd=bwd)


def diag2(v: Tensor) -> Tensor:
    """Embed (..., 2) diagonals into (..., 2, 2) matrices."""
    d = v.data
    out = np.zeros(d.shape + (2,), dtype=np.float64)
    out[..., 0, 0] = d[..., 0]
    out[..., 1, 1] = d[..., 1]

    def bwd(g):
        gv = np.stack([g[..., 0, 0], g[..., 1, 1]], axis=-1)
        v._accum(gv)

    return Tensor(v.tape, out, _bwd=bwd)


# ---------------------------------------------------------------------------
# shape ops and reductions


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return Tensor(a.tape, a.data.reshape(shape),
                  _bwd=lambda g: a._accum(g.reshape(old)))


def permute(a: Tensor, axes: tuple) -> Tensor:
    inverse = np.argsort(axes)
    return Tensor(a.tape, a.data.transpose(axes),
                  _bwd=lambda g: a._accum(g.transpose(inverse)))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    tape = _tape_of(*parts)
    datas = [_data(p) for p in parts]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for piece, part in zip(np.split(g, splits, axis=axis), parts):
            if isinstance(part, Tensor):
                part._accum(piece)

    return Tensor(tape, np.concatenate(datas, axis=axis), _bwd=bwd)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    tape = _tape_of(*parts)
    datas = [_data(p) for p in parts]

    def bwd(g):
        for i, part in enumerate(parts):
            if isinstance(part, Tensor):
                part._accum(np.take(g, i, axis=axis))

    return Tensor(tape, np.stack(datas, axis=axis), _bwd=bwd)


def segment(a: Tensor, lo: int, hi: int) -> Tensor:
    """Slice [lo:hi] of the last axis."""

    def bwd(g):
        full = np.zeros(a.data.shape, dtype=np.float64)
        full[..., lo:hi] = g
        a._accum(full)

    return Tensor(a.tape, a.data[..., lo:hi], _bwd=bwd)


def take(a: Tensor, index: int, axis: int = 0) -> Tensor:
    """Select one slice along an axis (the inverse of stack)."""

    def bwd(g):
        full = np.zeros(a.data.shape, dtype=np.float64)
        sel = [slice(None)] * full.ndim
        sel[axis] = index
        full[tuple(sel)] = g
        a._accum(full)

    return Tensor(a.tape, np.take(a.data, index, axis=axis), _bwd=bwd)


def sum_all(a: Tensor) -> Tensor:
    return Tensor(a.tape, a.data.sum(),
                  _bwd=lambda g: a._accum(np.broadcast_to(g, a.data.shape).copy()))


def cumsum(a: Tensor, axis: int = 0) -> Tensor:
    def bwd(g):
        a._accum(np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis))

    return Tensor(a.tape, np.cumsum(a.data, axis=axis), _bwd=bwd)


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution in channels-last layout.

    x: (H, W, Cin) or (B, H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,).
    Cross-correlation (no kernel flip), zero padding, square stride.
    """
    tape = _tape_of(x, w, b) if b is not None else _tape_of(x, w)
    xd, wd = _data(x), _data(w)
    single = xd.ndim == 3
    if single:
        xd = xd[None]
    if xd.ndim != 4 or wd.ndim != 4:
        raise ConfigError("conv2d expects (B, H, W, Cin) input and (kh, kw, Cin, Cout) kernel")
    B, H, W, Cin = xd.shape
    kh, kw, wcin, Cout = wd.shape
    if wcin != Cin:
        raise ConfigError(f"kernel expects {wcin} input channels, got {Cin}")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise ConfigError(
            f"kernel ({kh}x{kw}) larger than padded input ({H + 2 * padding}x{W + 2 * padding})")
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    cols = np.empty((B, Ho, Wo, kh, kw, Cin), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + Ho * stride:stride, j:j + Wo * stride:stride, :]
    out = np.tensordot(cols, wd, axes=([3, 4, 5], [0, 1, 2]))
    if b is not None:
        out = out + _data(b)

    def bwd(g):
        if single:
            g = g.reshape((B, Ho, Wo, Cout))
        if isinstance(w, Tensor):
            w._accum(np.tensordot(cols, g, axes=([0, 1, 2], [0, 1, 2])))
        if b is not None and isinstance(b, Tensor):
            b._accum(g.sum(axis=(0, 1, 2)))
        if isinstance(x, Tensor):
            dcols = np.einsum("bhwo,ijco->bhwijc", g, wd)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + Ho * stride:stride, j:j + Wo * stride:stride, :] += \
                        dcols[:, :, :, i, j, :]
            dx = dxp[:, padding:padding + H, padding:padding + W, :]
            x._accum(dx[0] if single else dx)

    if single:
        out = out[0]
    return Tensor(tape, out, _bwd=bwd)
