"""Parametric leaky integrate-and-fire (PLIF) neuron dynamics.

Discrete-time update for one layer::

    H[t]     = V[t-1] + d * (-(V[t-1] - V_reset) + z[t])      d = sigmoid(alpha)
    phi[t]   = step(H[t] - V_th)
    V[t]     = H[t] * (1 - phi[t]) + V_reset * phi[t]

The backward pass uses the inverse-tangent surrogate ``a / (1 + x**2)`` for the
derivative of the step. A *relaxed* forward, where the step is replaced by
``0.5 + arctan(x) / pi``, pairs exactly with the same backward code when
``a = 1/pi``; gradient checks use that pairing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numeric import NonFiniteError

RELAXED_AMPLITUDE = 1.0 / math.pi


@dataclass
class NeuronConfig:
    v_threshold: float = 1.0
    v_reset: float = 0.0
    alpha_init: float = 0.0  # sigmoid(0) = 0.5, i.e. tau = 2
    surrogate_amplitude: float = 1.0
    surrogate_width: float = math.pi  # amplitude / (1 + (width * x)^2); width 1 gives 1 / (1 + x^2)
    relaxed: bool = False  # soft spike forward, for gradient checks only

    def __post_init__(self):
        if not self.v_threshold > self.v_reset:
            raise ValueError("v_threshold must exceed v_reset")

    @classmethod
    def relaxed_pair(cls, surrogate_width: float = 1.0, **kwargs) -> "NeuronConfig":
        """Soft-spike forward and its exact derivative as the surrogate."""
        return cls(surrogate_amplitude=surrogate_width * RELAXED_AMPLITUDE, surrogate_width=surrogate_width,
                   relaxed=True, **kwargs)


def plif_decay(alpha):
    """Decay factor ``1 / (1 + exp(-alpha))``, numerically stable for large |alpha|."""
    out = np.exp(-np.logaddexp(0.0, -np.asarray(alpha, dtype=float)))
    return out.item() if out.ndim == 0 else out


def surrogate_derivative(x, amplitude: float = 1.0, width: float = 1.0):
    """Inverse-tangent surrogate for the step derivative: ``amplitude / (1 + (width * x)^2)``."""
    return amplitude / (1.0 + np.square(width * x))


def soft_spike(x, width: float = 1.0):
    return 0.5 + np.arctan(width * x) / math.pi


def heaviside(x):
    # step(0) = 1: a neuron at exactly threshold fires
    return (x >= 0).astype(np.result_type(x, np.float32))


@dataclass
class MembraneState:
    v_mem: np.ndarray
    h: list = field(default_factory=list)
    spikes: list = field(default_factory=list)
    v_prev: list = field(default_factory=list)
    z: list = field(default_factory=list)

    @classmethod
    def initial(cls, shape, cfg: NeuronConfig, dtype=np.float64) -> "MembraneState":
        return cls(v_mem=np.full(shape, cfg.v_reset, dtype=dtype))


def neuron_step(z: np.ndarray, state: MembraneState, cfg: NeuronConfig, alpha: float = None) -> np.ndarray:
    """Advance ``state`` by one timestep with input current ``z``; returns spikes."""
    z = np.asarray(z)
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("non-finite synaptic input to neuron")
    d = plif_decay(cfg.alpha_init if alpha is None else alpha)
    v = state.v_mem
    h = v + d * (-(v - cfg.v_reset) + z)
    if cfg.relaxed:
        phi = soft_spike(h - cfg.v_threshold, cfg.surrogate_width)
    else:
        phi = heaviside(h - cfg.v_threshold)
    state.v_prev.append(v)
    state.z.append(z)
    state.h.append(h)
    state.spikes.append(phi)
    state.v_mem = h * (1 - phi) + cfg.v_reset * phi
    return phi


def neuron_backward(grad_spikes, grad_h_next, caches, cfg: NeuronConfig, decay: float):
    """One reverse-time step of BPTT through a PLIF neuron.

    ``caches`` is ``(h, phi, v_prev, z)`` for timestep t and ``grad_h_next`` is
    dL/dH[t+1] (zero at the last step). Returns ``(grad_z, grad_h, grad_decay)``
    where ``grad_h`` = dL/dH[t] feeds the step before and ``grad_decay`` is the
    elementwise contribution to dL/dd; multiply its sum by ``d * (1 - d)`` for
    dL/dalpha.
    """
    if caches is None:
        raise KeyError("no forward cache for this timestep")
    h, phi, v_prev, z = caches
    dphi_dh = surrogate_derivative(h - cfg.v_threshold, cfg.surrogate_amplitude, cfg.surrogate_width)
    grad_v = grad_h_next * (1.0 - decay)
    # V = H(1 - phi) + V_reset*phi  ->  dV/dH = 1 - phi + (V_reset - H) dphi/dH
    dv_dh = (1.0 - phi) + (cfg.v_reset - h) * dphi_dh
    grad_h = grad_spikes * dphi_dh + grad_v * dv_dh
    grad_z = grad_h * decay
    grad_decay = grad_h * (z - (v_prev - cfg.v_reset))
    return grad_z, grad_h, grad_decay
