"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tape records one forward pass; Var wraps an ndarray and remembers the
node that produced it. backward() walks the node list in reverse and
accumulates gradients. Ops are batched: one node per batched array op, so
tape overhead stays negligible next to the BLAS work.

With record=False the same op functions run as plain numpy (no graph),
which is how test-time / codec inference reuses the exact forward kernels.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erfc, expit

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Var:
    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


class Tape:
    """Ordered record of ops; record=False turns ops into plain numpy."""

    def __init__(self, record=True):
        self.record = record
        self._n = 0
        # node: (out_idx, ((parent_idx, grad_fn), ...))
        self.nodes = []

    def var(self, value, like=None):
        value = np.asarray(value, dtype=like if like is not None else None)
        v = Var(self, self._n, value)
        self._n += 1
        return v

    def _emit(self, value, parents):
        out = Var(self, self._n, value)
        self._n += 1
        if self.record and parents:
            self.nodes.append((out.idx, tuple(parents)))
        return out

    def backward(self, loss, seed=None):
        """Gradients of a scalar loss w.r.t. every reachable Var.

        Returns a dict mapping Var.idx -> ndarray. seed overrides the
        initial gradient (defaults to 1.0 for a scalar loss).
        """
        if seed is None:
            seed = np.ones_like(loss.value)
        grads = {loss.idx: np.asarray(seed, dtype=loss.value.dtype)}
        for out_idx, parents in reversed(self.nodes):
            g = grads.pop(out_idx, None)
            if g is None:
                continue
            for pidx, grad_fn in parents:
                contrib = grad_fn(g)
                if pidx in grads:
                    grads[pidx] = grads[pidx] + contrib
                else:
                    grads[pidx] = contrib
        return grads


def _val(x):
    """Python scalars pass through unwrapped so they keep numpy's
    no-promotion scalar semantics (float32 graphs stay float32)."""
    if isinstance(x, Var):
        return x.value
    return x if isinstance(x, (int, float)) else np.asarray(x)


def _tape(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(grad, shape):
    """Reduce grad back to shape after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b, value, da, db):
    tape = _tape(a, b)
    parents = []
    if isinstance(a, Var):
        sa = a.value.shape
        parents.append((a.idx, lambda g, f=da, s=sa: _unbroadcast(f(g), s)))
    if isinstance(b, Var):
        sb = b.value.shape
        parents.append((b.idx, lambda g, f=db, s=sb: _unbroadcast(f(g), s)))
    return tape._emit(value, parents)


def add(a, b):
    av, bv = _val(a), _val(b)
    return _binary(a, b, av + bv, lambda g: g, lambda g: g)


def sub(a, b):
    av, bv = _val(a), _val(b)
    return _binary(a, b, av - bv, lambda g: g, lambda g: -g)


def mul(a, b):
    av, bv = _val(a), _val(b)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def div(a, b):
    av, bv = _val(a), _val(b)
    return _binary(a, b, av / bv, lambda g: g / bv, lambda g: -g * av / (bv * bv))


def _unary(a, value, da):
    tape = _tape(a)
    parents = [(a.idx, da)] if isinstance(a, Var) else []
    return tape._emit(value, parents)


def exp(a):
    out = np.exp(_val(a))
    return _unary(a, out, lambda g: g * out)


def log(a):
    av = _val(a)
    return _unary(a, np.log(av), lambda g: g / av)


def sqrt(a):
    out = np.sqrt(_val(a))
    return _unary(a, out, lambda g: g * (0.5 / out))


def square(a):
    av = _val(a)
    return _unary(a, av * av, lambda g: g * (2.0 * av))


def absolute(a):
    av = _val(a)
    return _unary(a, np.abs(av), lambda g: g * np.sign(av))


def tanh(a):
    out = np.tanh(_val(a))
    return _unary(a, out, lambda g: g * (1.0 - out * out))


def sigmoid(a):
    out = expit(_val(a))
    return _unary(a, out, lambda g: g * out * (1.0 - out))


def softplus(a):
    av = _val(a)
    return _unary(a, np.logaddexp(0.0, av), lambda g: g * expit(av))


def relu(a):
    av = _val(a)
    return _unary(a, np.maximum(av, 0.0), lambda g: g * (av > 0))


def floor_at(a, lo):
    """Elementwise max(a, lo); gradient is zero where the floor binds."""
    av = _val(a)
    mask = av > lo
    return _unary(a, np.maximum(av, lo), lambda g: g * mask)


def reshape(a, shape):
    av = _val(a)
    old = av.shape
    return _unary(a, av.reshape(shape), lambda g: g.reshape(old))


def transpose(a, axes):
    av = _val(a)
    inv = np.argsort(axes)
    return _unary(a, av.transpose(axes), lambda g: g.transpose(inv))


def vsum(a, axis=None):
    av = _val(a)
    shape = av.shape

    def back(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return _unary(a, av.sum(axis=axis), back)


def vmean(a, axis=None):
    av = _val(a)
    shape = av.shape
    if axis is None:
        n = av.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([shape[i] for i in axes]))

    def back(g):
        if axis is None:
            return np.broadcast_to(g / n, shape).copy()
        return np.broadcast_to(np.expand_dims(g / n, axis), shape).copy()

    return _unary(a, av.mean(axis=axis), back)


def matmul(a, b):
    """x @ W with x (..., i) and W (i, o)."""
    av, bv = _val(a), _val(b)
    value = av @ bv

    def da(g):
        return g @ bv.T

    def db(g):
        gm = g.reshape(-1, g.shape[-1])
        am = av.reshape(-1, av.shape[-1])
        return am.T @ gm

    return _binary(a, b, value, da, db)


def dim_matmul(w, h):
    """Per-dimension affine stack: w (D, o, i), h (N, D, i) -> (N, D, o)."""
    wv, hv = _val(w), _val(h)
    value = np.einsum("doi,ndi->ndo", wv, hv, optimize=True)

    def dw(g):
        return np.einsum("ndo,ndi->doi", g, hv, optimize=True)

    def dh(g):
        return np.einsum("doi,ndo->ndi", wv, g, optimize=True)

    return _binary(w, h, value, dw, dh)


def channel_matmul(w, x):
    """Mix channels of x (N, C, H, W) with w (C, C): out[n,i] = sum_j w[ij] x[n,j]."""
    wv, xv = _val(w), _val(x)
    value = np.einsum("ij,njhw->nihw", wv, xv, optimize=True)

    def dw(g):
        return np.einsum("nihw,njhw->ij", g, xv, optimize=True)

    def dx(g):
        return np.einsum("ij,nihw->njhw", wv, g, optimize=True)

    return _binary(w, x, value, dw, dx)


def transform_2d(x, c, inverse=False):
    """Separable orthonormal transform C x C^T over the last two axes.

    c is a constant orthonormal matrix; inverse applies C^T x C.
    """
    xv = _val(x)
    m = c.T if inverse else c
    value = m @ xv @ m.T

    def dx(g):
        return m.T @ g @ m

    return _unary(x, value, dx)


def gauss_bin_prob(v, phi):
    """P(round(V) = v) for V ~ N(0, phi^2) with unit bins: F(v+.5) - F(v-.5).

    Fused primitive: evaluated through complementary error functions on the
    positive side so tail bins keep full relative precision, and exactly
    symmetric in the sign of v.
    """
    vv, pv = _val(v), _val(phi)
    t = np.abs(vv)
    a = (t - 0.5) / pv
    b = (t + 0.5) / pv
    value = 0.5 * (erfc(a * _INV_SQRT2) - erfc(b * _INV_SQRT2))
    pdf_a = _INV_SQRT2PI * np.exp(-0.5 * a * a)
    pdf_b = _INV_SQRT2PI * np.exp(-0.5 * b * b)

    def dv(g):
        return g * np.sign(vv) * (pdf_b - pdf_a) / pv

    def dphi(g):
        return g * (a * pdf_a - b * pdf_b) / pv

    return _binary(v, phi, value, dv, dphi)


def _same_pad(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _patches(xp, kh, kw, stride):
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv_forward(xv, wv, stride):
    n, cin, h, w = xv.shape
    kh, kw = wv.shape[2], wv.shape[3]
    ho, pt, pb = _same_pad(h, kh, stride)
    wo, pl, pr = _same_pad(w, kw, stride)
    xp = np.pad(xv, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    pat = _patches(xp, kh, kw, stride)
    out = np.einsum("nchwij,ocij->nohw", pat, wv, optimize=True)
    return out, xp, pat, (pt, pl, ho, wo)


def _scatter_patches(dpat, xp_shape, stride, kh, kw):
    gp = np.zeros(xp_shape, dtype=dpat.dtype)
    ho, wo = dpat.shape[2], dpat.shape[3]
    for i in range(kh):
        for j in range(kw):
            gp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dpat[
                :, :, :, :, i, j
            ]
    return gp


def conv2d(x, w, b, stride):
    """2D convolution, zero 'same' padding, shapes (N,C,H,W) x (O,C,kh,kw)."""
    xv, wv, bv = _val(x), _val(w), _val(b)
    out, xp, pat, (pt, pl, ho, wo) = _conv_forward(xv, wv, stride)
    out = out + bv[None, :, None, None]
    kh, kw = wv.shape[2], wv.shape[3]
    h, wid = xv.shape[2], xv.shape[3]

    tape = _tape(x, w, b)
    parents = []
    if isinstance(x, Var):

        def dx(g):
            dpat = np.einsum("nohw,ocij->nchwij", g, wv, optimize=True)
            gp = _scatter_patches(dpat, xp.shape, stride, kh, kw)
            return gp[:, :, pt : pt + h, pl : pl + wid]

        parents.append((x.idx, dx))
    if isinstance(w, Var):
        parents.append(
            (w.idx, lambda g: np.einsum("nohw,nchwij->ocij", g, pat, optimize=True))
        )
    if isinstance(b, Var):
        parents.append((b.idx, lambda g: g.sum(axis=(0, 2, 3))))
    return tape._emit(out, parents)


def conv2d_transpose(x, w, b, stride, out_hw):
    """Transposed convolution, the exact adjoint of conv2d's 'same' scheme.

    x (N,C,H,W), w (C,O,kh,kw); out_hw is the target spatial size, which
    must satisfy H == ceil(out_h / stride).
    """
    xv, wv, bv = _val(x), _val(w), _val(b)
    n, cin, h, w_in = xv.shape
    kh, kw = wv.shape[2], wv.shape[3]
    oh, ow = out_hw
    ho, pt, pb = _same_pad(oh, kh, stride)
    wo, pl, pr = _same_pad(ow, kw, stride)
    if (ho, wo) != (h, w_in):
        raise ValueError(f"transposed conv input {h}x{w_in} cannot map to {oh}x{ow}")
    xp_shape = (n, wv.shape[1], oh + pt + pb, ow + pl + pr)
    dpat = np.einsum("nchw,coij->nohwij", xv, wv, optimize=True)
    gp = _scatter_patches(dpat, xp_shape, stride, kh, kw)
    out = gp[:, :, pt : pt + oh, pl : pl + ow] + bv[None, :, None, None]

    tape = _tape(x, w, b)
    parents = []
    if isinstance(x, Var):

        def dx(g):
            gpad = np.pad(g, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
            pat = _patches(gpad, kh, kw, stride)
            return np.einsum("nohwij,coij->nchw", pat, wv, optimize=True)

        parents.append((x.idx, dx))
    if isinstance(w, Var):

        def dw(g):
            gpad = np.pad(g, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
            pat = _patches(gpad, kh, kw, stride)
            return np.einsum("nchw,nohwij->coij", xv, pat, optimize=True)

        parents.append((w.idx, dw))
    if isinstance(b, Var):
        parents.append((b.idx, lambda g: g.sum(axis=(0, 2, 3))))
    return tape._emit(out, parents)
