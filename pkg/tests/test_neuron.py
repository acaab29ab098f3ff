import math

import numpy as np
import pytest

from spikenas.layers import PLIF, RunContext
from spikenas.neuron import (
    RELAXED_AMPLITUDE,
    MembraneState,
    NeuronConfig,
    neuron_backward,
    neuron_step,
    plif_decay,
    soft_spike,
    surrogate_derivative,
)
from spikenas.numeric import NonFiniteError

from conftest import check_snn_case, numeric_grad, rel_err

CFG = NeuronConfig()  # V_th = 1, V_reset = 0, decay 0.5


def test_decay_values():
    assert plif_decay(0.0) == 0.5
    assert plif_decay(800.0) == 1.0
    for a in (-3.0, -0.2, 1.7, 40.0):
        assert plif_decay(a) + plif_decay(-a) == pytest.approx(1.0)


def test_surrogate_values():
    assert surrogate_derivative(0.0) == 1.0
    assert surrogate_derivative(1.0) == 0.5
    assert surrogate_derivative(3.0) == pytest.approx(0.1)


def test_relaxed_pair_is_consistent():
    x = np.linspace(-4, 4, 41)
    eps = 1e-6
    fd = (soft_spike(x + eps) - soft_spike(x - eps)) / (2 * eps)
    np.testing.assert_allclose(surrogate_derivative(x, RELAXED_AMPLITUDE), fd, rtol=1e-7)


def test_config_requires_threshold_above_reset():
    with pytest.raises(ValueError):
        NeuronConfig(v_threshold=0.0, v_reset=0.0)


class TestStep:
    def test_fires_and_resets(self):
        s = MembraneState.initial((1,), CFG)
        phi = neuron_step(np.array([2.4]), s, CFG)
        assert s.h[0].item() == pytest.approx(1.2)
        assert phi.item() == 1 and s.v_mem.item() == 0.0

    def test_subthreshold(self):
        s = MembraneState.initial((1,), CFG)
        phi = neuron_step(np.array([0.8]), s, CFG)
        assert s.h[0].item() == pytest.approx(0.4) and phi.item() == 0 and s.v_mem.item() == pytest.approx(0.4)

    def test_two_steps(self):
        s = MembraneState.initial((1,), CFG)
        neuron_step(np.array([0.8]), s, CFG)
        phi = neuron_step(np.array([0.8]), s, CFG)
        assert s.h[1].item() == pytest.approx(0.6) and phi.item() == 0

    def test_threshold_is_inclusive(self):
        s = MembraneState.initial((1,), CFG)
        assert neuron_step(np.array([2.0]), s, CFG).item() == 1

    def test_silent_without_input(self):
        s = MembraneState.initial((3, 4), CFG)
        for _ in range(10):
            assert not neuron_step(np.zeros((3, 4)), s, CFG).any()

    def test_binary_and_hard_reset(self, rng):
        s = MembraneState.initial((50,), CFG)
        for _ in range(6):
            phi = neuron_step(rng.normal(1.0, 1.5, 50), s, CFG)
            assert set(np.unique(phi)) <= {0.0, 1.0}
            assert np.all(s.v_mem[phi == 1] == CFG.v_reset)
            assert np.all(s.h[-1][phi == 1] >= CFG.v_threshold)

    def test_non_finite_input(self):
        with pytest.raises(NonFiniteError):
            neuron_step(np.array([np.inf]), MembraneState.initial((1,), CFG), CFG)


class TestBackward:
    def test_zero_paths(self):
        caches = (np.array([0.3]), np.array([0.0]), np.array([0.1]), np.array([0.4]))
        gz, gh, gd = neuron_backward(np.zeros(1), np.zeros(1), caches, CFG, 0.5)
        assert not gz.any() and not gh.any() and not gd.any()

    def test_at_threshold(self):
        # H = V_th: dphi/dH = 1, dV/dH = 1 - phi - H
        h = np.array([1.0])
        caches = (h, np.array([1.0]), np.array([0.0]), np.array([2.0]))
        _, gh, _ = neuron_backward(np.zeros(1), np.ones(1) / 0.5, caches, CFG, 0.5)
        assert gh.item() == pytest.approx(1 - 1 - 1.0)
        _, gh, _ = neuron_backward(np.ones(1), np.zeros(1), caches, CFG, 0.5)
        assert gh.item() == 1.0

    def test_missing_cache(self):
        with pytest.raises(KeyError):
            neuron_backward(np.zeros(1), np.zeros(1), None, CFG, 0.5)

    def test_single_neuron_chain_t4(self):
        cfg = NeuronConfig.relaxed_pair()
        z = np.array([[1.3], [0.2], [2.5], [-0.4]])[:, None]
        weights = np.array([0.7, -1.1, 0.4, 2.0])[:, None, None]
        layer = PLIF((1,), cfg, dtype=np.float64)
        ctx = lambda: RunContext(timesteps=4)
        loss = lambda: float(np.sum(layer.forward(z, ctx()) * weights))
        c = ctx()
        layer.forward(z, c)
        gz = layer.backward(weights.copy(), c)
        assert rel_err(gz, numeric_grad(loss, z)) < 1e-4
        assert rel_err(layer.grads["alpha"], numeric_grad(loss, layer.params["alpha"])) < 1e-4

    @pytest.mark.parametrize("seed", range(8))
    def test_multi_layer_relaxed_bptt(self, seed):
        assert check_snn_case(seed) < 1e-4

    def test_alpha_gradient_nonzero_when_spiking(self, rng):
        layer = PLIF((6,), CFG, dtype=np.float64)
        z = rng.normal(1.5, 1.0, (4, 2, 6))
        c = RunContext(timesteps=4)
        out = layer.forward(z, c)
        assert out.any()
        layer.backward(np.ones_like(out), c)
        assert layer.grads["alpha"].item() != 0

    def test_production_and_relaxed_share_backward(self, rng):
        # same caches, same amplitude -> identical gradients whichever forward produced them
        h = rng.standard_normal(5)
        caches = (h, (h >= 1).astype(float), rng.standard_normal(5), rng.standard_normal(5))
        for width in (1.0, math.pi):
            prod = NeuronConfig(surrogate_amplitude=width / math.pi, surrogate_width=width)
            a = neuron_backward(np.ones(5), np.ones(5), caches, prod, 0.5)
            b = neuron_backward(np.ones(5), np.ones(5), caches, NeuronConfig.relaxed_pair(width), 0.5)
            for x, y in zip(a, b):
                np.testing.assert_array_equal(x, y)

    def test_default_surrogate_width(self):
        cfg = NeuronConfig()
        assert cfg.surrogate_amplitude == 1.0 and cfg.surrogate_width == pytest.approx(math.pi)
        caches = (np.array([0.0]), np.array([0.0]), np.array([0.0]), np.array([0.0]))
        _, gh, _ = neuron_backward(np.ones(1), np.zeros(1), caches, cfg, 0.5)
        assert gh.item() == pytest.approx(1 / (1 + math.pi**2))

    def test_static_input_broadcast_sums_over_time(self, rng):
        cfg = NeuronConfig.relaxed_pair()
        layer = PLIF((3,), cfg, dtype=np.float64)
        z = rng.normal(1.0, 1.0, (1, 2, 3))
        w = rng.standard_normal((3, 2, 3))
        ctx = lambda: RunContext(timesteps=3)
        loss = lambda: float(np.sum(layer.forward(z, ctx()) * w))
        c = ctx()
        layer.forward(z, c)
        gz = layer.backward(w.copy(), c)
        assert gz.shape == z.shape
        assert rel_err(gz, numeric_grad(loss, z)) < 1e-4
