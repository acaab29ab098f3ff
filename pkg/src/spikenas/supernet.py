"""One-shot weight-sharing super-network with single-path uniform sampling."""

from __future__ import annotations

import json
import logging
import warnings

import numpy as np

from .archspace import Genotype, MacroArch, SpikingNetwork, assemble, build_network, random_genotype
from .blocks import CANDIDATES, SCB_K3
from .layers import Module
from .neuron import NeuronConfig
from .training import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    make_optimizer,
    save_checkpoint,
    train_step,
)

log = logging.getLogger(__name__)


class SuperNet:
    """Every candidate block's weights at every TBD slot, plus shared stem/DS/FC.

    BN statistics live inside each candidate, so they are per candidate per slot.
    """

    def __init__(self, macro: MacroArch, rng: np.random.Generator | None = None, cfg: NeuronConfig | None = None,
                 candidates=CANDIDATES, dtype=np.float32, seed: int = 0):
        self.macro = macro
        self.candidates = tuple(candidates)
        rng = rng if rng is not None else np.random.default_rng(seed)
        # the layout is genotype-independent; any filler will do
        plan = assemble(macro, Genotype((SCB_K3,) * macro.num_slots))
        self.network: SpikingNetwork = build_network(plan, rng, cfg, dtype, supernet_candidates=self.candidates)
        self.spike_sum = 0.0
        self.samples_seen = 0  # sampled paths (one per mini-batch)
        self.path_counts = {i: {str(k): 0 for k in self.candidates} for i in range(macro.num_slots)}

    @property
    def num_slots(self) -> int:
        return self.macro.num_slots

    @property
    def n_avg(self) -> float:
        """Average per-sample spike count over the sampled training paths."""
        if self.samples_seen == 0:
            raise ValueError("N_avg is undefined before any path was trained")
        return self.spike_sum / self.samples_seen

    def record_path_spikes(self, per_sample_spikes: float):
        self.spike_sum += float(per_sample_spikes)
        self.samples_seen += 1

    def sample_path(self, rng: np.random.Generator) -> Genotype:
        return random_genotype(rng, self.num_slots, self.candidates)

    def set_path(self, genotype: Genotype):
        self.network.set_path(genotype)

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.network.named_parameters())

    def untrained_candidates(self) -> list[tuple[int, str]]:
        return [(i, k) for i, counts in self.path_counts.items() for k, c in counts.items() if c == 0]

    # -- checkpoints --------------------------------------------------------

    def meta(self) -> dict:
        return {
            "kind": "supernet",
            "macro": {"variant": self.macro.variant, "stem": self.macro.stem, "channels": self.macro.channels,
                      "num_classes": self.macro.num_classes, "voting_k": self.macro.voting_k,
                      "in_channels": self.macro.in_channels},
            "candidates": [str(k) for k in self.candidates],
            "spike_sum": self.spike_sum,
            "samples_seen": self.samples_seen,
            "path_counts": {str(i): c for i, c in self.path_counts.items()},
        }

    def save(self, path, rng=None):
        save_checkpoint(self.network, path, self.meta(), rng)

    @classmethod
    def load(cls, path, cfg: NeuronConfig | None = None, dtype=np.float32) -> "SuperNet":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("kind") != "supernet":
            raise ValueError(f"{path} is not a super-network checkpoint")
        from .blocks import BlockKind
        macro = MacroArch(**meta["macro"])
        sn = cls(macro, np.random.default_rng(0), cfg, tuple(BlockKind.parse(k) for k in meta["candidates"]), dtype)
        load_checkpoint(sn.network, path)
        sn.spike_sum = meta["spike_sum"]
        sn.samples_seen = meta["samples_seen"]
        sn.path_counts = {int(i): c for i, c in meta["path_counts"].items()}
        return sn


def train_supernet(supernet: SuperNet, train_set, cfg: TrainConfig, augment_fn=None, on_epoch=None) -> list[dict]:
    """Single-path uniform sampling: one random path per mini-batch.

    Each step updates the shared layers and only the sampled candidates.
    The batch's per-sample spike count feeds ``N_avg``.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    net = supernet.network
    history = []
    for epoch in range(1, cfg.epochs + 1):
        total_loss, seen, correct = 0.0, 0, 0
        order = rng.permutation(len(train_set))
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            path = supernet.sample_path(rng)
            supernet.set_path(path)
            for slot, kind in enumerate(path):
                supernet.path_counts[slot][str(kind)] += 1
            images = train_set.images[idx]
            if augment_fn is not None:
                images = augment_fn(images, rng)
            loss, c, spikes = train_step(net, images, train_set.labels[idx], cfg, opt, supernet.macro.num_classes)
            supernet.record_path_spikes(spikes / len(idx))
            total_loss += loss * len(idx)
            correct += c
            seen += len(idx)
        row = {"epoch": epoch, "loss": total_loss / seen, "train_acc": correct / seen, "n_avg": supernet.n_avg}
        log.info("supernet epoch %d loss %.4f acc %.3f N_avg %.0f", epoch, row["loss"], row["train_acc"], row["n_avg"])
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    missing = supernet.untrained_candidates()
    if missing:
        warnings.warn(f"{len(missing)} slot candidates were never sampled, e.g. {missing[:3]}", RuntimeWarning)
    return history


class SubnetView(Module):
    """A single path of a super-network; shares (does not copy) its weights."""

    def __init__(self, supernet: SuperNet, genotype: Genotype):
        super().__init__()
        from .archspace import ChoiceSlot, GenotypeError
        if len(genotype) != supernet.num_slots:
            raise GenotypeError(f"genotype has {len(genotype)} slots, super-network has {supernet.num_slots}")
        self.genotype = genotype
        self.plan = assemble(supernet.macro, genotype)
        self.dtype = supernet.network.dtype
        mods, names = [], []
        slot_iter = iter(genotype)
        for name, m in zip(supernet.network.layer_names, supernet.network.layer_modules):
            if isinstance(m, ChoiceSlot):
                kind = str(next(slot_iter))
                if kind not in m.candidates:
                    raise GenotypeError(f"{kind} is not a candidate at {m.label}")
                m = m.candidates[kind]
            mods.append(m)
            names.append(name)
        self.layer_modules, self.layer_names = mods, names

    def children(self):
        return list(zip(self.layer_names, self.layer_modules))

    def spiking_sites(self, prefix: str = ""):
        for m in self.layer_modules:
            yield from m.spiking_sites()

    def forward(self, x, ctx):
        for m in self.layer_modules:
            x = m.forward(x, ctx)
        return x

    def backward(self, g, ctx):
        for m in reversed(self.layer_modules):
            g = m.backward(g, ctx)
        return g


def extract_subnet(supernet: SuperNet, genotype: Genotype | str) -> SubnetView:
    if isinstance(genotype, str):
        genotype = Genotype.parse(genotype)
    return SubnetView(supernet, genotype)


def make_evaluator(supernet: SuperNet, val_set, timesteps: int, batch_size: int = 256):
    """``genotype -> (accuracy, per-sample spikes)`` using inherited weights and eval-mode BN."""
    if len(val_set) == 0:
        raise ValueError("validation set is empty")

    def evaluate_genotype(genotype: Genotype):
        acc, ledger = evaluate(extract_subnet(supernet, genotype), val_set, timesteps, batch_size)
        return acc, ledger.spikes_per_sample()

    return evaluate_genotype
