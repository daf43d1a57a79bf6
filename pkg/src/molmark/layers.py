"""Named trainable layers built on the autodiff engine.

Parameters live in a ParamStore keyed by unique names; layers register their
tensors once at construction. Hidden activations are rectifiers; module
outputs are linear unless a sigmoid is part of the contract (attention gate).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import DataError, NumericError


class ParamStore:
    """Ordered name -> Tensor map for every trainable parameter."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, ad.Tensor] = {}

    def register(self, name: str, value: np.ndarray) -> ad.Tensor:
        if name in self._params:
            raise DataError(f"parameter {name!r} registered twice")
        t = ad.Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> ad.Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradient per parameter; parameters off the tape get zeros."""
        return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in self._params.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for name, t in self._params.items():
            if name not in state:
                raise DataError(f"checkpoint is missing parameter {name!r}")
            arr = state[name]
            if arr.shape != t.data.shape:
                raise DataError(f"parameter {name!r} shape {arr.shape} != {t.data.shape}")
            t.data = arr.astype(self.dtype, copy=True)

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sinusoidal_pe(n: int, d_model: int, num: float = 10000.0) -> np.ndarray:
    """Sine/cosine positional table: sin at even columns, cos at odd ones."""
    if d_model % 2 != 0:
        raise DataError(f"positional embedding width must be even, got {d_model}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    expo = np.where(i % 2 == 0, i, i - 1) / d_model
    angle = pos / num ** expo
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


class Linear:
    def __init__(self, store: ParamStore, prefix: str, n_in: int, n_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.w = store.register(prefix + "w", _uniform_init(rng, (n_in, n_out), n_in))
        self.b = store.register(prefix + "b", _uniform_init(rng, (n_out,), n_in)) if bias else None

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        out = ad.matmul(x, self.w)
        return out if self.b is None else ad.add(out, self.b)


class Conv3x3:
    """3x3 convolution, stride 1, zero padding 1 (spatial shape preserved)."""

    def __init__(self, store: ParamStore, prefix: str, c_in: int, c_out: int,
                 rng: np.random.Generator, bias: bool = True):
        fan_in = c_in * 9
        self.k = store.register(prefix + "k", _uniform_init(rng, (c_out, c_in, 3, 3), fan_in))
        self.b = store.register(prefix + "b", _uniform_init(rng, (c_out,), fan_in)) if bias else None

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        return ad.conv2d(x, self.k, self.b)


class LayerNorm:
    """Zero-mean/unit-variance over the last axis, then learned affine."""

    def __init__(self, store: ParamStore, prefix: str, dim: int, eps: float = 1e-5):
        self.gain = store.register(prefix + "gain", np.ones(dim))
        self.bias = store.register(prefix + "bias", np.zeros(dim))
        self.eps = eps

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        mu = ad.tmean(x, axis=-1, keepdims=True)
        xc = ad.sub(x, mu)
        var = ad.tmean(ad.mul(xc, xc), axis=-1, keepdims=True)
        xhat = ad.div(xc, ad.sqrt(var + ad.constant(self.eps, x.dtype)))
        return ad.add(ad.mul(xhat, self.gain), self.bias)


class SelfAttention:
    """Single-head scaled dot-product attention over the atom axis.

    Tokens are the N atoms; token features are the flattened (channels x
    width) values. The value-weighted sum is squashed by a sigmoid so the
    result can gate features multiplicatively. Masked atoms are excluded
    from the softmax and produce zero rows.
    """

    def __init__(self, store: ParamStore, prefix: str, channels: int, width: int,
                 rng: np.random.Generator):
        f = channels * width
        self.channels, self.width, self.f = channels, width, f
        self.wq = store.register(prefix + "wq", _uniform_init(rng, (f, f), f))
        self.wk = store.register(prefix + "wk", _uniform_init(rng, (f, f), f))
        self.wv = store.register(prefix + "wv", _uniform_init(rng, (f, f), f))

    def __call__(self, x: ad.Tensor, mask: np.ndarray | None = None) -> ad.Tensor:
        b, c, n, w = x.shape
        if c != self.channels or w != self.width:
            raise NumericError(f"attention built for {self.channels}x{self.width}, got {c}x{w}")
        tokens = ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, n, self.f))
        q = ad.matmul(tokens, self.wq)
        k = ad.matmul(tokens, self.wk)
        v = ad.matmul(tokens, self.wv)
        scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(self.f))
        if mask is not None:
            bias = ((mask - 1.0) * 1e9).astype(x.dtype.type)[:, None, :]   # -1e9 at masked keys
            scores = ad.add(scores, ad.Tensor(np.broadcast_to(bias, (b, n, n)).copy()))
        weights = ad.softmax(scores, axis=-1)
        out = ad.matmul(weights, v)
        out = ad.transpose(ad.reshape(out, (b, n, c, w)), (0, 2, 1, 3))
        gate = ad.sigmoid(out)
        if mask is not None:
            gate = ad.mul(gate, ad.Tensor(mask.astype(x.dtype.type)[:, None, :, None]))
        return gate


class CrossBlock:
    """Dense connectivity step: concatenate the input with a rectified
    convolution of it, growing the channel count by `growth`."""

    def __init__(self, store: ParamStore, prefix: str, c_in: int, growth: int,
                 rng: np.random.Generator):
        self.growth = growth
        self.conv = Conv3x3(store, prefix + "conv.", c_in, growth, rng) if growth > 0 else None

    def __call__(self, x: ad.Tensor, mask4: ad.Tensor | None = None) -> ad.Tensor:
        if self.conv is None:
            return x
        new = ad.relu(self.conv(x))
        if mask4 is not None:
            new = ad.mul(new, mask4)
        return ad.concat([x, new], axis=1)


def adaptive_avg_pool(x: ad.Tensor, mask: np.ndarray, sizes: np.ndarray) -> ad.Tensor:
    """Mean over the (atoms, width) axes counting only unmasked atoms.

    x: (B, C, N, W) -> (B, C, 1, 1).
    """
    if (np.asarray(sizes) <= 0).any():
        raise NumericError("adaptive_avg_pool on an all-masked batch entry")
    b, c, n, w = x.shape
    m4 = ad.Tensor(mask.astype(x.dtype.type)[:, None, :, None])
    total = ad.tsum(ad.mul(x, m4), axis=(2, 3))                     # (B, C)
    counts = (np.asarray(sizes, dtype=np.float64) * w).astype(x.dtype.type)[:, None]
    return ad.reshape(ad.div(total, ad.Tensor(counts)), (b, c, 1, 1))
