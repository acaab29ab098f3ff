"""Dense numeric kernels with hand-written backward passes.

All kernels take and return plain ``numpy`` arrays in NCHW (or NC) layout.
They are pure functions: identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Raised when tensor shapes do not agree with a kernel's contract."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where finite values are required."""


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


@dataclass
class ConvParams:
    weight: np.ndarray  # (c_out, c_in // groups, k, k)
    bias: np.ndarray | None = None  # (c_out,)
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise DimensionError(f"conv weight must be (c_out, c_in, k, k), got {self.weight.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be positive and padding non-negative")
        if self.weight.shape[0] % self.groups:
            raise DimensionError("c_out must be divisible by groups")

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Unfold ``x`` (B, C, H, W) into rows of shape (B*Ho*Wo, C*k*k)."""
    b, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, c * k * k)


def col2im(cols: np.ndarray, x_shape, k: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`; overlapping windows are summed."""
    b, c, h, w = x_shape
    ho = _out_size(h, k, stride, padding)
    wo = _out_size(w, k, stride, padding)
    g = cols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g[:, :, i, j]
    if padding:
        return xp[:, :, padding:-padding, padding:-padding]
    return xp


def _check_conv_input(x: np.ndarray, params: ConvParams):
    if x.ndim != 4:
        raise DimensionError(f"conv input must be 4-D (batch, channels, h, w), got {x.shape}")
    if x.shape[1] != params.in_channels:
        raise DimensionError(f"input has {x.shape[1]} channels, weight expects {params.in_channels}")
    k, p = params.kernel_size, params.padding
    if x.shape[2] + 2 * p < k or x.shape[3] + 2 * p < k:
        raise DimensionError(f"spatial dims {x.shape[2:]} too small for kernel {k} with padding {p}")


def _grouped_matmul(cols: np.ndarray, weight: np.ndarray, groups: int) -> np.ndarray:
    """cols (M, C*k*k) times weight (c_out, C/g, k, k) -> (M, c_out)."""
    m = cols.shape[0]
    c_out = weight.shape[0]
    if groups == 1:
        return cols @ weight.reshape(c_out, -1).T
    j = cols.shape[1] // groups
    cg = cols.reshape(m, groups, j).transpose(1, 0, 2)
    wg = weight.reshape(groups, c_out // groups, j).transpose(0, 2, 1)
    return (cg @ wg).transpose(1, 0, 2).reshape(m, c_out)


def conv2d_forward(x: np.ndarray, params: ConvParams, return_cols: bool = False):
    """2-D cross-correlation. Output is (B, c_out, Ho, Wo)."""
    _check_conv_input(x, params)
    b, _, h, w = x.shape
    k, s, p = params.kernel_size, params.stride, params.padding
    ho, wo = _out_size(h, k, s, p), _out_size(w, k, s, p)
    cols = im2col(x, k, s, p)
    out = _grouped_matmul(cols, params.weight, params.groups)
    if params.bias is not None:
        out += params.bias
    out = np.ascontiguousarray(out.reshape(b, ho, wo, -1).transpose(0, 3, 1, 2))
    if return_cols:
        return out, cols
    return out


def conv2d_backward(x: np.ndarray, params: ConvParams, grad_out: np.ndarray, cols: np.ndarray | None = None):
    """Gradients of :func:`conv2d_forward`.

    Returns ``(grad_input, grad_weight, grad_bias)``; ``grad_bias`` is None when
    the conv has no bias. ``cols`` may be passed to skip re-unfolding ``x``.
    """
    _check_conv_input(x, params)
    b, _, h, w = x.shape
    k, s, p, groups = params.kernel_size, params.stride, params.padding, params.groups
    ho, wo = _out_size(h, k, s, p), _out_size(w, k, s, p)
    c_out = params.weight.shape[0]
    if grad_out.shape != (b, c_out, ho, wo):
        raise DimensionError(f"grad_out shape {grad_out.shape} != forward output {(b, c_out, ho, wo)}")
    if cols is None:
        cols = im2col(x, k, s, p)
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, c_out)
    if groups == 1:
        wmat = params.weight.reshape(c_out, -1)
        grad_w = (g.T @ cols).reshape(params.weight.shape)
        grad_cols = g @ wmat
    else:
        m = g.shape[0]
        j = cols.shape[1] // groups
        og = c_out // groups
        gg = g.reshape(m, groups, og).transpose(1, 0, 2)  # (G, M, og)
        cg = cols.reshape(m, groups, j).transpose(1, 0, 2)  # (G, M, j)
        wg = params.weight.reshape(groups, og, j)
        grad_w = (gg.transpose(0, 2, 1) @ cg).reshape(params.weight.shape)
        grad_cols = (gg @ wg).transpose(1, 0, 2).reshape(m, groups * j)
    grad_b = g.sum(axis=0) if params.bias is not None else None
    grad_x = col2im(grad_cols, x.shape, k, s, p)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def _pool_windows(x: np.ndarray) -> np.ndarray:
    if x.ndim != 4:
        raise DimensionError(f"pooling input must be 4-D, got {x.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"2x2 pooling needs even spatial dims, got {h}x{w}")
    return x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)


def maxpool2d(x: np.ndarray):
    """2x2/stride-2 max pooling.

    Returns ``(out, argmax)`` where ``argmax`` holds the window-local index
    (0..3, row-major) of the first maximal element.
    """
    win = _pool_windows(x)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int8)


def maxpool2d_backward(grad_out: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    b, c, h2, w2 = grad_out.shape
    onehot = (np.arange(4, dtype=np.int8) == argmax[..., None])
    g = onehot * grad_out[..., None]
    return g.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)


def avgpool2d(x: np.ndarray) -> np.ndarray:
    """2x2/stride-2 average pooling."""
    return _pool_windows(x).mean(axis=-1)


def avgpool2d_backward(grad_out: np.ndarray) -> np.ndarray:
    g = np.repeat(np.repeat(grad_out, 2, axis=2), 2, axis=3)
    return g * 0.25


# ---------------------------------------------------------------------------
# fully connected
# ---------------------------------------------------------------------------


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """``x`` (B, in) times ``weight`` (out, in) transposed, plus ``bias``."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear input {x.shape} incompatible with weight {weight.shape}")
    out = x @ weight.T
    if bias is not None:
        out += bias
    return out


def linear_backward(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray, has_bias: bool = True):
    grad_x = grad_out @ weight
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0) if has_bias else None
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, dtype=np.float32, eps: float = 1e-5, momentum: float = 0.1):
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            eps=eps,
            momentum=momentum,
        )

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("batch norm eps must be positive")
        if not 0 < self.momentum <= 1:
            raise ValueError("batch norm momentum must lie in (0, 1]")


def _bn_axes(x: np.ndarray):
    if x.ndim < 2:
        raise DimensionError("batch norm input needs a channel axis")
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    return axes, shape


def batchnorm_forward(x: np.ndarray, params: BatchNormParams, training: bool = True):
    """Per-channel batch normalization over every axis except axis 1.

    Returns ``(y, cache)``. In training mode the running statistics of
    ``params`` are updated in place (unbiased variance, PyTorch convention).
    """
    if x.shape[0] == 0:
        raise DimensionError("batch norm on an empty batch")
    if x.shape[1] != params.gamma.shape[0]:
        raise DimensionError(f"batch norm expects {params.gamma.shape[0]} channels, got {x.shape[1]}")
    axes, shape = _bn_axes(x)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        n = x.size // x.shape[1]
        m = params.momentum
        params.running_mean *= 1 - m
        params.running_mean += m * mean
        params.running_var *= 1 - m
        params.running_var += m * var * (n / max(n - 1, 1))
    else:
        mean, var = params.running_mean, params.running_var
    inv_std = 1.0 / np.sqrt(var + params.eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = xhat * params.gamma.reshape(shape) + params.beta.reshape(shape)
    return y, (xhat, inv_std, training)


def batchnorm_backward(grad_out: np.ndarray, params: BatchNormParams, cache):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    xhat, inv_std, training = cache
    axes, shape = _bn_axes(grad_out)
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    g = grad_out * params.gamma.reshape(shape)
    if not training:
        return g * inv_std.reshape(shape), grad_gamma, grad_beta
    n = grad_out.size // grad_out.shape[1]
    grad_x = (inv_std.reshape(shape) / n) * (
        n * g - g.sum(axis=axes).reshape(shape) - xhat * (g * xhat).sum(axis=axes).reshape(shape)
    )
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: dict[str, int] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, in place.

    Only parameters present in ``grads`` are touched; each parameter keeps
    its own step counter so sparsely-updated parameters stay correctly
    bias-corrected.
    """
    b1, b2 = state.betas
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.step[name] = 0
        state.step[name] += 1
        t = state.step[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype, copy=False)
