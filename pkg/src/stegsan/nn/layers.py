"""Layers with explicit forward/backward passes (NHWC layout).

Each layer caches what its backward pass needs during ``forward``; a layer
instance therefore serves one forward/backward pair at a time. ``backward``
accumulates into ``Param.grad`` and returns the gradient w.r.t. the input.
"""

from __future__ import annotations

import math

import numpy as np

from .. import kernels


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = np.zeros_like(value)


class Module:
    """Parameter bookkeeping shared by all layers and models."""

    def named_params(self, prefix=""):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Param):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_params(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{name}.{i}.")

    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0

    def state_dict(self):
        return {name: p.value.copy() for name, p in self.named_params()}

    def load_state_dict(self, state):
        own = dict(self.named_params())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.value.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.value.shape}")
            p.value = arr.astype(p.value.dtype).copy()
            p.grad = np.zeros_like(p.value)

    def astype(self, dtype):
        for p in self.params():
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)
        return self

    @property
    def dtype(self):
        ps = self.params()
        return ps[0].value.dtype if ps else np.float32

    def n_params(self):
        return sum(p.value.size for p in self.params())


class Conv2d(Module):
    """Stride-1 convolution with zero "same" padding; odd kernel sizes only."""

    def __init__(self, cin, cout, kernel=(3, 3), rng=None, zero_init=False, dtype=np.float32):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        self.kh, self.kw, self.cin, self.cout = kh, kw, cin, cout
        fan_in = kh * kw * cin
        if zero_init:
            w = np.zeros((kh, kw, cin, cout))
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(kh, kw, cin, cout))
        self.weight = Param(w.astype(dtype))
        self.bias = Param(np.zeros(cout, dtype=dtype))
        self._cols = None
        self._shape = None

    def forward(self, x):
        n, h, w, c = x.shape
        self._shape = x.shape
        if self.kh == 1 and self.kw == 1:
            cols = x.reshape(n * h * w, c)
        else:
            cols = kernels.im2col(x, self.kh, self.kw)
        self._cols = cols
        out = cols @ self.weight.value.reshape(-1, self.cout) + self.bias.value
        return out.reshape(n, h, w, self.cout)

    def backward(self, g):
        g2 = g.reshape(-1, self.cout)
        self.weight.grad += (self._cols.T @ g2).reshape(self.weight.value.shape)
        self.bias.grad += g2.sum(axis=0)
        dcols = g2 @ self.weight.value.reshape(-1, self.cout).T
        if self.kh == 1 and self.kw == 1:
            return dcols.reshape(self._shape)
        return kernels.col2im(dcols, self._shape, self.kh, self.kw)


class Linear(Module):
    def __init__(self, din, dout, rng=None, zero_init=False, dtype=np.float32):
        if zero_init:
            w = np.zeros((din, dout))
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            w = rng.normal(0.0, math.sqrt(1.0 / din), size=(din, dout))
        self.weight = Param(w.astype(dtype))
        self.bias = Param(np.zeros(dout, dtype=dtype))
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, g):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        self.weight.grad += x2.T @ g2
        self.bias.grad += g2.sum(axis=0)
        return g @ self.weight.value.T


class GroupNorm(Module):
    def __init__(self, groups, channels, eps=1e-5, dtype=np.float32):
        if channels % groups:
            raise ValueError(f"{channels} channels not divisible into {groups} groups")
        self.groups, self.eps = groups, eps
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self._xhat = None
        self._inv = None

    def forward(self, x):
        n, h, w, c = x.shape
        xhat, inv = kernels.groupnorm_fwd(x.reshape(n, h * w, c), self.groups, self.eps)
        self._xhat, self._inv = xhat, inv
        return xhat.reshape(x.shape) * self.gamma.value + self.beta.value

    def backward(self, g):
        n, h, w, c = g.shape
        g3 = g.reshape(n, h * w, c)
        self.gamma.grad += (g3 * self._xhat).sum(axis=(0, 1))
        self.beta.grad += g3.sum(axis=(0, 1))
        dx = kernels.groupnorm_bwd(g3 * self.gamma.value, self._xhat, self._inv, self.groups)
        return dx.reshape(g.shape)


class SiLU(Module):
    def __init__(self):
        self._x = None
        self._s = None

    def forward(self, x):
        y, s = kernels.silu_fwd(x)
        self._x, self._s = x, s
        return y

    def backward(self, g):
        return kernels.silu_bwd(g, self._x, self._s)


class AvgPool(Module):
    def __init__(self, factor=(2, 2)):
        self.fh, self.fw = factor
        self._shape = None

    def forward(self, x):
        n, h, w, c = x.shape
        if h % self.fh or w % self.fw:
            raise ValueError(f"spatial shape {(h, w)} not divisible by pool {(self.fh, self.fw)}")
        self._shape = x.shape
        return x.reshape(n, h // self.fh, self.fh, w // self.fw, self.fw, c).mean(axis=(2, 4))

    def backward(self, g):
        n, h, w, c = self._shape
        g = g / (self.fh * self.fw)
        g = np.broadcast_to(g[:, :, None, :, None, :], (n, h // self.fh, self.fh, w // self.fw, self.fw, c))
        return g.reshape(self._shape)


class Upsample(Module):
    """Nearest-neighbour upsampling."""

    def __init__(self, factor=(2, 2)):
        self.fh, self.fw = factor

    def forward(self, x):
        return x.repeat(self.fh, axis=1).repeat(self.fw, axis=2)

    def backward(self, g):
        n, h, w, c = g.shape
        return g.reshape(n, h // self.fh, self.fh, w // self.fw, self.fw, c).sum(axis=(2, 4))


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


def sinusoidal_embedding(t, dim, max_period=10000.0):
    """Transformer-style timestep features: ``[cos(t f_k), sin(t f_k)]``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


class TimeMLP(Module):
    """Sinusoidal features followed by Linear-SiLU-Linear-SiLU."""

    def __init__(self, freq_dim, dim, rng, dtype=np.float32):
        self.freq_dim = freq_dim
        self.fc1 = Linear(freq_dim, dim, rng, dtype=dtype)
        self.act1 = SiLU()
        self.fc2 = Linear(dim, dim, rng, dtype=dtype)
        self.act2 = SiLU()

    def forward(self, t):
        e = sinusoidal_embedding(t, self.freq_dim).astype(self.dtype)
        return self.act2.forward(self.fc2.forward(self.act1.forward(self.fc1.forward(e))))

    def backward(self, g):
        self.fc1.backward(self.act1.backward(self.fc2.backward(self.act2.backward(g))))


class ResBlock(Module):
    """GN-SiLU-Conv, add projected conditioning, GN-SiLU-Conv, plus skip.

    ``cond_dim=0`` gives an unconditioned block. The second convolution
    starts at zero so every block is the identity (or its 1x1 projection)
    at initialisation.
    """

    def __init__(self, cin, cout, cond_dim, rng, kernel=(3, 3), groups=8, dtype=np.float32):
        self.norm1 = GroupNorm(min(groups, cin), cin, dtype=dtype)
        self.act1 = SiLU()
        self.conv1 = Conv2d(cin, cout, kernel, rng, dtype=dtype)
        self.cond = Linear(cond_dim, cout, rng, dtype=dtype) if cond_dim else None
        self.norm2 = GroupNorm(min(groups, cout), cout, dtype=dtype)
        self.act2 = SiLU()
        self.conv2 = Conv2d(cout, cout, kernel, rng, zero_init=True, dtype=dtype)
        self.skip = Conv2d(cin, cout, (1, 1), rng, dtype=dtype) if cin != cout else None

    def forward(self, x, cond=None):
        h = self.conv1.forward(self.act1.forward(self.norm1.forward(x)))
        if self.cond is not None:
            h = h + self.cond.forward(cond)[:, None, None, :]
        h = self.conv2.forward(self.act2.forward(self.norm2.forward(h)))
        s = self.skip.forward(x) if self.skip is not None else x
        return h + s

    def backward(self, g):
        """Returns ``(dx, dcond)``; ``dcond`` is ``None`` for unconditioned blocks."""
        gh = self.norm2.backward(self.act2.backward(self.conv2.backward(g)))
        dcond = None
        if self.cond is not None:
            dcond = self.cond.backward(gh.sum(axis=(1, 2)))
        dx = self.norm1.backward(self.act1.backward(self.conv1.backward(gh)))
        dx = dx + (self.skip.backward(g) if self.skip is not None else g)
        return dx, dcond
