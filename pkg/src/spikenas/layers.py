"""Multi-step network layers with explicit forward/backward.

Every activation is time-major, shaped ``(T, N, ...)``. A leading time axis of
length 1 marks a *static* tensor (the same value at every timestep, e.g. an
image fed directly as current); conv and BN layers process it once and the
first neuron layer broadcasts it over time. Backward passes sum gradients
back onto the static axis.

Layers keep their forward caches on ``self`` so a module object can serve only
one forward/backward at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nc
from .neuron import MembraneState, NeuronConfig, neuron_backward, neuron_step, plif_decay


@dataclass
class RunContext:
    """Per-call options threaded through ``forward``/``backward``."""

    timesteps: int = 1
    training: bool = False
    ledger: object = None  # SpikeLedger or None
    spike_reg_grad: float = 0.0  # d(reg term)/d(spike), added at every recorded site
    extras: dict = field(default_factory=dict)


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    # -- tree traversal -----------------------------------------------------

    def children(self):
        return []

    def modules(self, prefix: str = ""):
        yield prefix, self
        for name, child in self.children():
            yield from child.modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = ""):
        for path, m in self.modules(prefix):
            for k, v in m.params.items():
                yield (f"{path}.{k}" if path else k), v

    def named_buffers(self, prefix: str = ""):
        for path, m in self.modules(prefix):
            for k, v in m.buffers.items():
                yield (f"{path}.{k}" if path else k), v

    def named_grads(self, prefix: str = ""):
        for path, m in self.modules(prefix):
            for k, v in m.grads.items():
                yield (f"{path}.{k}" if path else k), v

    def zero_grad(self):
        for _, m in self.modules():
            m.grads = {}

    def _accumulate(self, name: str, g: np.ndarray):
        if name in self.grads:
            self.grads[name] = self.grads[name] + g
        else:
            self.grads[name] = g

    def spiking_sites(self, prefix: str = ""):
        """Yield ``(site_id, neurons_per_sample)`` for every spike-emitting layer."""
        for _, m in self.modules(prefix):
            sid = getattr(m, "site_id", None)
            if sid is not None:
                yield sid, m.sites

    def parameter_count(self) -> int:
        return sum(v.size for _, v in self.named_parameters())

    def forward(self, x, ctx: RunContext):
        raise NotImplementedError

    def backward(self, g, ctx: RunContext):
        raise NotImplementedError


def _merge_tn(x):
    return x.reshape((x.shape[0] * x.shape[1],) + x.shape[2:])


def _split_tn(y, t):
    return y.reshape((t, y.shape[0] // t) + y.shape[1:])


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, groups=1, bias=True, dtype=np.float32):
        super().__init__()
        fan_in = (c_in // groups) * k * k
        bound = 1.0 / math.sqrt(fan_in)
        self.params["weight"] = _uniform(rng, bound, (c_out, c_in // groups, k, k), dtype)
        if bias:
            self.params["bias"] = _uniform(rng, bound, (c_out,), dtype)
        self.stride, self.padding, self.groups = stride, (k - 1) // 2, groups

    def conv_params(self) -> nc.ConvParams:
        return nc.ConvParams(self.params["weight"], self.params.get("bias"), self.stride, self.padding, self.groups)

    def forward(self, x, ctx):
        t = x.shape[0]
        xb = _merge_tn(x)
        y, cols = nc.conv2d_forward(xb, self.conv_params(), return_cols=True)
        self._cache = (xb, cols, t)
        return _split_tn(y, t)

    def backward(self, g, ctx):
        xb, cols, t = self._cache
        gx, gw, gb = nc.conv2d_backward(xb, self.conv_params(), _merge_tn(g), cols=cols)
        self._accumulate("weight", gw)
        if gb is not None:
            self._accumulate("bias", gb)
        self._cache = None
        return _split_tn(gx, t)


class BatchNorm(Module):
    """BN whose statistics pool batch, time and space jointly (one parameter set for all timesteps)."""

    def __init__(self, channels, dtype=np.float32, eps=1e-5, momentum=0.1):
        super().__init__()
        bn = nc.BatchNormParams.create(channels, dtype=dtype, eps=eps, momentum=momentum)
        self.bn = bn
        self.params["gamma"], self.params["beta"] = bn.gamma, bn.beta
        self.buffers["running_mean"], self.buffers["running_var"] = bn.running_mean, bn.running_var

    def forward(self, x, ctx):
        t = x.shape[0]
        y, cache = nc.batchnorm_forward(_merge_tn(x), self.bn, training=ctx.training)
        self._cache = (cache, t)
        return _split_tn(y, t)

    def backward(self, g, ctx):
        cache, t = self._cache
        gx, gg, gb = nc.batchnorm_backward(_merge_tn(g), self.bn, cache)
        self._accumulate("gamma", gg)
        self._accumulate("beta", gb)
        self._cache = None
        return _split_tn(gx, t)


class PLIF(Module):
    """Layer of PLIF neurons sharing one trainable ``alpha``."""

    def __init__(self, shape, cfg: NeuronConfig | None = None, site_id: str | None = None, dtype=np.float32):
        super().__init__()
        self.cfg = cfg or NeuronConfig()
        self.shape = tuple(shape)
        self.sites = int(np.prod(self.shape))
        self.site_id = site_id
        self.params["alpha"] = np.array([self.cfg.alpha_init], dtype=dtype)

    def forward(self, z, ctx):
        if z.shape[2:] != self.shape:
            raise nc.DimensionError(f"neuron layer {self.site_id} expects {self.shape}, got {z.shape[2:]}")
        steps = ctx.timesteps
        static = z.shape[0] == 1 and steps > 1
        alpha = float(self.params["alpha"][0])
        state = MembraneState.initial(z.shape[1:], self.cfg, dtype=z.dtype)
        out = np.empty((steps,) + z.shape[1:], dtype=z.dtype)
        for t in range(steps):
            out[t] = neuron_step(z[0] if static else z[t], state, self.cfg, alpha)
            if ctx.ledger is not None and self.site_id is not None:
                ctx.ledger.record(self.site_id, out[t], t)
        self._cache = (state, static)
        return out

    def backward(self, g, ctx):
        state, static = self._cache
        d = plif_decay(float(self.params["alpha"][0]))
        steps = len(state.h)
        grad_h = np.zeros_like(g[0])
        grad_z = np.zeros_like(g[:1] if static else g)
        grad_d = 0.0
        for t in reversed(range(steps)):
            gs = g[t] + ctx.spike_reg_grad if (ctx.spike_reg_grad and self.site_id) else g[t]
            caches = (state.h[t], state.spikes[t], state.v_prev[t], state.z[t])
            gz, grad_h, gd = neuron_backward(gs, grad_h, caches, self.cfg, d)
            if static:
                grad_z[0] += gz
            else:
                grad_z[t] = gz
            grad_d += float(np.sum(gd, dtype=np.float64))
        self._accumulate("alpha", np.array([grad_d * d * (1 - d)], dtype=self.params["alpha"].dtype))
        self._cache = None
        return grad_z


class ReLU(Module):
    """Drop-in replacement for :class:`PLIF` in ANN mode."""

    def __init__(self, shape=None):
        super().__init__()
        self.shape = shape

    def forward(self, x, ctx):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g, ctx):
        out = g * self._mask
        self._mask = None
        return out


class MaxPool(Module):
    """2x2 max pooling; on spike input its outputs are spikes and are ledgered."""

    def __init__(self, out_shape=None, site_id: str | None = None):
        super().__init__()
        self.site_id = site_id
        self.sites = int(np.prod(out_shape)) if out_shape is not None else 0

    def forward(self, x, ctx):
        t = x.shape[0]
        y, idx = nc.maxpool2d(_merge_tn(x))
        y = _split_tn(y, t)
        self._cache = (idx, t)
        if ctx.ledger is not None and self.site_id is not None:
            for s in range(t):
                ctx.ledger.record(self.site_id, y[s], s)
        return y

    def backward(self, g, ctx):
        idx, t = self._cache
        if ctx.spike_reg_grad and self.site_id:
            g = g + ctx.spike_reg_grad
        gx = nc.maxpool2d_backward(_merge_tn(g), idx)
        self._cache = None
        return _split_tn(gx, t)


class AvgPool(Module):
    def forward(self, x, ctx):
        self._t = x.shape[0]
        return _split_tn(nc.avgpool2d(_merge_tn(x)), self._t)

    def backward(self, g, ctx):
        return _split_tn(nc.avgpool2d_backward(_merge_tn(g)), self._t)


class GlobalAvgPool(Module):
    def forward(self, x, ctx):
        self._hw = x.shape[3:]
        return x.mean(axis=(3, 4))

    def backward(self, g, ctx):
        h, w = self._hw
        return np.broadcast_to(g[..., None, None] / (h * w), g.shape + (h, w)).copy()


class Flatten(Module):
    def forward(self, x, ctx):
        self._shape = x.shape
        return x.reshape(x.shape[0], x.shape[1], -1)

    def backward(self, g, ctx):
        return g.reshape(self._shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, dtype=np.float32):
        super().__init__()
        bound = 1.0 / math.sqrt(n_in)
        self.params["weight"] = _uniform(rng, bound, (n_out, n_in), dtype)
        if bias:
            self.params["bias"] = _uniform(rng, bound, (n_out,), dtype)

    def forward(self, x, ctx):
        t = x.shape[0]
        xb = _merge_tn(x)
        self._cache = (xb, t)
        return _split_tn(nc.linear_forward(xb, self.params["weight"], self.params.get("bias")), t)

    def backward(self, g, ctx):
        xb, t = self._cache
        gx, gw, gb = nc.linear_backward(xb, self.params["weight"], _merge_tn(g), "bias" in self.params)
        self._accumulate("weight", gw)
        if gb is not None:
            self._accumulate("bias", gb)
        self._cache = None
        return _split_tn(gx, t)


def voting_forward(x: np.ndarray, k: int) -> np.ndarray:
    """Mean over consecutive groups of ``k`` features: (..., classes*k) -> (..., classes)."""
    if x.shape[-1] % k:
        raise nc.DimensionError(f"voting width {x.shape[-1]} not divisible by K={k}")
    return x.reshape(x.shape[:-1] + (x.shape[-1] // k, k)).mean(axis=-1)


class Voting(Module):
    def __init__(self, k: int = 10):
        super().__init__()
        self.k = k

    def forward(self, x, ctx):
        return voting_forward(x, self.k)

    def backward(self, g, ctx):
        return np.repeat(g / self.k, self.k, axis=-1)


class ChannelRepeat(Module):
    """Parameter-free channel widening: every channel is repeated ``factor`` times."""

    def __init__(self, factor: int):
        super().__init__()
        self.factor = factor

    def forward(self, x, ctx):
        return np.repeat(x, self.factor, axis=2)

    def backward(self, g, ctx):
        s = g.shape
        return g.reshape(s[:2] + (s[2] // self.factor, self.factor) + s[3:]).sum(axis=3)


class Identity(Module):
    def forward(self, x, ctx):
        return x

    def backward(self, g, ctx):
        return g


class Sequential(Module):
    def __init__(self, *layers, names=None):
        super().__init__()
        self.layers = list(layers)
        self.names = list(names) if names else [str(i) for i in range(len(layers))]

    def children(self):
        return list(zip(self.names, self.layers))

    def forward(self, x, ctx):
        for layer in self.layers:
            x = layer.forward(x, ctx)
        return x

    def backward(self, g, ctx):
        for layer in reversed(self.layers):
            g = layer.backward(g, ctx)
        return g
