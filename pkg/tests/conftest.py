import numpy as np
import pytest


def numeric_grad(f, x, eps=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b, floor=1e-12):
    """Max abs difference over the larger magnitude; ``floor`` guards structurally zero gradients."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_snn_case(seed: int):
    """A random Linear+PLIF stack (1-3 layers, <= 8 neurons each, T <= 4) on the relaxed forward, float64.

    Returns ``(net, x, ctx_factory, loss)`` where ``loss()`` runs a fresh forward
    and contracts the output with a fixed random tensor.
    """
    from spikenas.layers import PLIF, Linear, RunContext, Sequential
    from spikenas.neuron import NeuronConfig

    r = np.random.default_rng(seed)
    layers_n = int(r.integers(1, 4))
    t = int(r.integers(1, 5))
    batch = int(r.integers(1, 4))
    widths = [int(r.integers(1, 9)) for _ in range(layers_n + 1)]
    v_reset = float(r.uniform(-0.3, 0.2))
    cfg = NeuronConfig.relaxed_pair(v_threshold=float(r.uniform(0.5, 1.2)), v_reset=v_reset,
                                    alpha_init=float(r.uniform(-1, 1)))
    mods = []
    for i in range(layers_n):
        lin = Linear(widths[i], widths[i + 1], r, dtype=np.float64)
        lin.params["weight"] *= 3.0
        mods += [lin, PLIF((widths[i + 1],), cfg, dtype=np.float64)]
    net = Sequential(*mods)
    x = r.standard_normal((t, batch, widths[0]))
    weights = r.standard_normal((t, batch, widths[-1]))
    ctx = lambda: RunContext(timesteps=t, training=True)

    def loss():
        return float(np.sum(net.forward(x, ctx()) * weights))

    def grads():
        c = ctx()
        net.forward(x, c)
        net.zero_grad()
        gx = net.backward(weights.copy(), c)
        return dict(net.named_grads()), gx

    return net, x, loss, grads


def check_snn_case(seed: int) -> float:
    """Max relative error between manual BPTT and central differences for ``random_snn_case(seed)``."""
    net, x, loss, grads = random_snn_case(seed)
    g, gx = grads()
    errs = [rel_err(gx, numeric_grad(loss, x))]
    for name, p in net.named_parameters():
        errs.append(rel_err(g[name], numeric_grad(loss, p)))
    return max(errs)


def toy_fitness_table(seed):
    """Deterministic (accuracy, spikes) lookup over the 25-genotype, 2-slot space."""
    from spikenas.archspace import enumerate_space
    r = np.random.default_rng(1000 + seed)
    space = list(enumerate_space(2))
    table = {g: (float(r.uniform(0.1, 0.95)), float(r.uniform(50, 500))) for g in space}
    return space, table
