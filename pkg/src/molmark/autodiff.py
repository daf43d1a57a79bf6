"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; backward() walks
the tape in reverse topological order and accumulates gradients. The op set
is exactly what the watermark encoder/decoder stack needs, including a 3x3
same-padding convolution and a differentiable symmetric eigendecomposition
(gradients must flow through the coordinate-recovery step during training).

Identical inputs produce bit-identical forward values and gradients: every
op is a deterministic numpy computation with a fixed evaluation order.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError

_EIG_GAP_FLOOR = 1e-12   # sign-preserving clamp on eigenvalue gaps in the eigh VJP
_SQRT_FLOOR = 1e-12      # denominator clamp in the sqrt VJP (active only at 0)

_grad_enabled = True


class no_grad:
    """Context manager: ops inside build no tape (forward values only)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    """An ndarray plus the tape entry that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        if _parents and not _grad_enabled:
            self.requires_grad = False
        else:
            self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into .grad over the whole tape."""
        if seed is None:
            if self.data.size != 1:
                raise NumericError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order = _toposort(self)
        self.grad = np.asarray(seed, dtype=self.data.dtype)
        for node in order:
            if node._vjp is None or node.grad is None:
                continue
            for parent, contrib in zip(node._parents, node._vjp(node.grad)):
                if contrib is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def __pow__(self, c):
        return pow_const(self, c)

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self.dtype))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def constant(value, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse post-order over the tape (iterative; graphs can be deep)."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- elementwise arithmetic ---------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return Tensor(out, _parents=(a, b),
                  _vjp=lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return Tensor(out, _parents=(a, b),
                  _vjp=lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return Tensor(out, _parents=(a, b),
                  _vjp=lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                  _unbroadcast(g * a.data, b.data.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    return Tensor(out, _parents=(a, b),
                  _vjp=lambda g: (_unbroadcast(g / b.data, a.data.shape),
                                  _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def pow_const(a: Tensor, c: float) -> Tensor:
    out = a.data ** c
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * c * a.data ** (c - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), _parents=(a,), _vjp=lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    safe = np.maximum(out, np.asarray(_SQRT_FLOOR, dtype=out.dtype))
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g / (2.0 * safe),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * (a.data > 0),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * out * (1.0 - out),))


def cast(a: Tensor, dtype) -> Tensor:
    return Tensor(a.data.astype(dtype), _parents=(a,),
                  _vjp=lambda g: (g.astype(a.data.dtype),))


# -- shape manipulation ---------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return Tensor(a.data.reshape(shape), _parents=(a,), _vjp=lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return Tensor(np.transpose(a.data, axes), _parents=(a,),
                  _vjp=lambda g: (np.transpose(g, inverse),))


def getitem(a: Tensor, idx) -> Tensor:
    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)
    return Tensor(a.data[idx], _parents=(a,), _vjp=vjp)


def pad(a: Tensor, widths) -> Tensor:
    widths = tuple((int(lo), int(hi)) for lo, hi in widths)
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.data.shape))
    return Tensor(np.pad(a.data, widths), _parents=(a,), _vjp=lambda g: (g[slices],))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor(data, _parents=tuple(tensors), _vjp=vjp)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(tensors)))

    return Tensor(data, _parents=tuple(tensors), _vjp=vjp)


# -- reductions -----------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def max_all(a: Tensor) -> Tensor:
    """Global maximum; the subgradient flows through the first argmax entry."""
    flat_idx = int(np.argmax(a.data))
    out = a.data.reshape(-1)[flat_idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        full.reshape(-1)[flat_idx] = g
        return (full,)

    return Tensor(np.asarray(out), _parents=(a,), _vjp=vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically shifted softmax (the shift is a constant, so its gradient
    contribution is exactly zero)."""
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, tsum(e, axis=axis, keepdims=True))


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape) if need_a else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape) if need_b else None
        return (ga, gb)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def eigh_sym(a: Tensor) -> tuple[Tensor, Tensor]:
    """Eigendecomposition of a symmetric matrix; eigenvalues ascending.

    Returns (eigenvalues, eigenvectors-as-columns). The adjoint is the
    standard symmetric-eigh rule with the output symmetrized, so it is exact
    whenever the upstream matrix is built symmetrically. Gaps smaller than
    _EIG_GAP_FLOOR are clamped sign-preservingly to keep training finite near
    degenerate spectra; the clamp is inactive for well-separated spectra.
    """
    w, v = np.linalg.eigh(a.data)

    def _scatter(m):
        full = v @ m @ v.T
        return (0.5 * (full + full.T),)

    def vjp_w(gw):
        return _scatter(np.diag(gw))

    def vjp_v(gv):
        diff = w[None, :] - w[:, None]
        sign = np.where(diff >= 0, 1.0, -1.0)
        denom = sign * np.maximum(np.abs(diff), _EIG_GAP_FLOOR)
        f = 1.0 / denom
        np.fill_diagonal(f, 0.0)
        return _scatter(f * (v.T @ gv))

    w_t = Tensor(w, _parents=(a,), _vjp=vjp_w)
    v_t = Tensor(v, _parents=(a,), _vjp=vjp_v)
    return w_t, v_t


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padding stride-1 convolution: (B,Cin,H,W) x (Cout,Cin,kh,kw)."""
    kh, kw = kernels.data.shape[2:]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.tensordot(win, kernels.data, axes=([1, 4, 5], [1, 2, 3]))  # B,H,W,Cout
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    need_x = x.requires_grad

    def vjp(g):
        gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))          # Cout,Cin,kh,kw
        gx = None
        if need_x:
            gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
            gwin = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
            kf = kernels.data[:, :, ::-1, ::-1]
            gx = np.tensordot(gwin, kf, axes=([1, 4, 5], [0, 2, 3]))    # B,H,W,Cin
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2)).astype(x.data.dtype, copy=False)
        grads = [gx, gk.astype(kernels.data.dtype, copy=False)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor(out, _parents=parents, _vjp=vjp)
