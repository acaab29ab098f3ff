"""Macro backbones, genotype encoding and network assembly.

Channel schedule of the 5-slot backbone (input ``H x W``, initial width ``C``)::

    Stem(3->C) TBD1(C->C) DS1 TBD2(C->2C) TBD3(2C->2C) DS2
    TBD4(2C->4C) TBD5(4C->4C) DS3 FC(4C*H/8*W/8 -> classes*K) Voting

With SCB_k3 in every slot this census is ``6.4375 * H*W*C`` excluding the FC
head; SIB_k3_e1 gives ``8.1875`` and SIB_k3_e3 ``16.6875`` (times ``H*W*C``).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .blocks import CANDIDATES, SCB_K3, BlockError, BlockKind, build_block, neuron_count
from .layers import (
    AvgPool,
    BatchNorm,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Linear,
    MaxPool,
    Module,
    PLIF,
    ReLU,
    Sequential,
    Voting,
)
from .neuron import NeuronConfig

VARIANTS = ("SNN_1", "SNN_2", "SNN_3", "SNN_4", "SNN_1_8slot_replaceDS", "SNN_1_8slot_extraTBD")
STEMS = {"standard32": 32, "deep64": 64, "deep128": 128}


class GenotypeError(ValueError):
    pass


@dataclass(frozen=True)
class Genotype:
    blocks: tuple[BlockKind, ...]

    def __str__(self):
        return ",".join(str(b) for b in self.blocks)

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    @classmethod
    def parse(cls, text: str) -> "Genotype":
        try:
            return cls(tuple(BlockKind.parse(t) for t in text.split(",")))
        except BlockError as exc:
            raise GenotypeError(str(exc)) from exc

    @classmethod
    def uniform(cls, kind: BlockKind | str, length: int = 5) -> "Genotype":
        if isinstance(kind, str):
            kind = BlockKind.parse(kind)
        return cls((kind,) * length)


@dataclass(frozen=True)
class MacroArch:
    variant: str = "SNN_1"
    stem: str = "standard32"
    channels: int = 16
    num_classes: int = 10
    voting_k: int = 10
    in_channels: int = 3
    ds_block: BlockKind = SCB_K3  # trainable down-sampler of SNN_3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown macro variant {self.variant!r}; choose from {VARIANTS}")
        if self.stem not in STEMS:
            raise ValueError(f"unknown stem {self.stem!r}; choose from {tuple(STEMS)}")

    @property
    def num_slots(self) -> int:
        return 8 if "8slot" in self.variant else 5

    @property
    def input_size(self) -> int:
        return STEMS[self.stem]


@dataclass(frozen=True)
class LayerSpec:
    """One entry of a network plan.

    ``role`` is one of stem, tbd, ds_max, ds_avg, ds_block, gap, fc, voting.
    ``slot`` indexes the genotype for searchable (tbd) positions.
    """

    label: str
    role: str
    c_in: int
    c_out: int
    h: int
    w: int
    stride: int = 1
    kind: BlockKind | None = None
    slot: int | None = None
    extra: tuple = ()

    @property
    def h_out(self):
        return self.h // self.stride

    @property
    def w_out(self):
        return self.w // self.stride

    def neurons(self) -> int:
        if self.role == "stem":
            # stem convs are (c_in, c_out, h_out, w_out) stages, pools in between
            return sum(c * ho * wo for c, ho, wo in self.extra)
        if self.role in ("tbd", "ds_block"):
            return neuron_count(self.kind, self.h, self.w, self.c_in, self.c_out, self.stride)
        if self.role == "ds_max":
            return self.h_out * self.w_out * self.c_out
        if self.role == "gap":
            return self.c_out
        if self.role == "fc":
            return self.c_out
        return 0


@dataclass
class NetworkPlan:
    macro: MacroArch
    genotype: Genotype
    layers: list[LayerSpec]
    ann: bool = False

    def census(self, include_head: bool = False) -> int:
        if self.ann:
            return 0
        return sum(l.neurons() for l in self.layers if include_head or l.role != "fc")

    def census_table(self) -> list[dict]:
        return [{"layer": l.label, "neurons": 0 if self.ann else l.neurons()} for l in self.layers if l.role != "voting"]

    def slots(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.role == "tbd"]

    def parameter_count(self) -> int:
        return build_network(self, np.random.default_rng(0)).parameter_count()

    def to_dict(self) -> dict:
        return {
            "macro": {**asdict(self.macro), "ds_block": str(self.macro.ds_block)},
            "genotype": str(self.genotype),
            "ann": self.ann,
            "layers": [
                {
                    "label": l.label, "role": l.role, "kind": str(l.kind) if l.kind else None,
                    "c_in": l.c_in, "c_out": l.c_out, "h": l.h, "w": l.w, "stride": l.stride,
                    "neurons": 0 if self.ann else l.neurons(),
                }
                for l in self.layers
            ],
            "census": self.census(),
            "census_with_head": self.census(include_head=True),
            "parameters": self.parameter_count(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _stem_stages(stem: str, size: int, c_in: int, c: int):
    """(channels, h_out, w_out) of each conv stage of the stem."""
    if stem == "standard32":
        return ((c, size, size),)
    if stem == "deep64":
        return ((c, size, size), (c, size // 2, size // 2))
    return ((c, size, size), (c, size // 2, size // 2), (c, size // 4, size // 4))


def assemble(macro: MacroArch, genotype: Genotype | str) -> NetworkPlan:
    """Lay out every layer of ``macro`` with ``genotype`` filling its TBD slots."""
    if isinstance(genotype, str):
        genotype = Genotype.parse(genotype)
    if len(genotype) != macro.num_slots:
        raise GenotypeError(f"{macro.variant} has {macro.num_slots} TBD slots, genotype has {len(genotype)}")
    for kind in genotype:
        kind.validate()
    c = macro.channels
    size = macro.input_size
    stages = _stem_stages(macro.stem, size, macro.in_channels, c)
    layers = [LayerSpec("Stem", "stem", macro.in_channels, c, size, size, extra=stages)]
    h = stages[-1][1]
    slot = 0
    ds_idx = 0
    tbd_idx = 0

    def tbd(c_in, c_out, stride=1, label=None):
        nonlocal slot, tbd_idx, h
        if label is None:
            tbd_idx += 1
            label = f"TBD{tbd_idx}"
        layers.append(LayerSpec(label, "tbd", c_in, c_out, h, h, stride, genotype[slot], slot))
        slot += 1
        h //= stride

    def ds(width):
        nonlocal ds_idx, h
        ds_idx += 1
        label = f"DS{ds_idx}"
        if macro.variant == "SNN_1_8slot_replaceDS":
            tbd(width, width, stride=2, label=label)
            return
        if macro.variant == "SNN_1_8slot_extraTBD":
            tbd(width, width)
        if macro.variant == "SNN_3":
            layers.append(LayerSpec(label, "ds_block", width, width, h, h, 2, macro.ds_block))
        elif macro.variant == "SNN_4":
            layers.append(LayerSpec(label, "ds_avg", width, width, h, h, 2))
        else:
            layers.append(LayerSpec(label, "ds_max", width, width, h, h, 2))
        h //= 2

    tbd(c, c)
    ds(c)
    tbd(c, 2 * c)
    tbd(2 * c, 2 * c)
    ds(2 * c)
    tbd(2 * c, 4 * c)
    tbd(4 * c, 4 * c)
    ds(4 * c)
    width = 4 * c
    if macro.variant == "SNN_2":
        layers.append(LayerSpec("GAP", "gap", width, width, h, h))
        fc_in = width
    else:
        fc_in = width * h * h
    n_out = macro.num_classes * macro.voting_k
    layers.append(LayerSpec("FC", "fc", fc_in, n_out, 1, 1))
    layers.append(LayerSpec("Voting", "voting", n_out, macro.num_classes, 1, 1))
    return NetworkPlan(macro, genotype, layers)


def space_cardinality(macro: MacroArch | None = None, candidates=CANDIDATES, slots: int | None = None) -> int:
    if slots is None:
        slots = (macro or MacroArch()).num_slots
    return len(candidates) ** slots


def enumerate_space(slots: int = 5, candidates=CANDIDATES):
    for combo in itertools.product(candidates, repeat=slots):
        yield Genotype(combo)


def random_genotype(rng: np.random.Generator, slots: int = 5, candidates=CANDIDATES) -> Genotype:
    idx = rng.integers(0, len(candidates), size=slots)
    return Genotype(tuple(candidates[i] for i in idx))


def ann_variant(plan: NetworkPlan) -> NetworkPlan:
    """Same layout with every spiking neuron replaced by ReLU (run with T=1)."""
    return NetworkPlan(plan.macro, plan.genotype, list(plan.layers), ann=True)


# ---------------------------------------------------------------------------
# runtime construction
# ---------------------------------------------------------------------------


class ChoiceSlot(Module):
    """All candidate blocks of one TBD slot; ``active`` selects the path."""

    def __init__(self, spec: LayerSpec, candidates, rng, cfg, ann, dtype):
        super().__init__()
        self.label = spec.label
        self.candidates = {
            str(k): build_block(k, spec.c_in, spec.c_out, spec.h, spec.w, rng, f"{spec.label}[{k}]", cfg,
                                spec.stride, ann, dtype)
            for k in candidates
        }
        self.active = next(iter(self.candidates))

    def children(self):
        return list(self.candidates.items())

    def active_block(self) -> Module:
        return self.candidates[self.active]

    def forward(self, x, ctx):
        return self.active_block().forward(x, ctx)

    def backward(self, g, ctx):
        return self.active_block().backward(g, ctx)

    def spiking_sites(self, prefix: str = ""):
        return self.active_block().spiking_sites(prefix)


class SpikingNetwork(Module):
    """Runtime network built from a :class:`NetworkPlan`."""

    def __init__(self, plan: NetworkPlan, layers: list[tuple[str, Module]], cfg: NeuronConfig, dtype):
        super().__init__()
        self.plan = plan
        self.layer_names = [n for n, _ in layers]
        self.layer_modules = [m for _, m in layers]
        self.cfg = cfg
        self.dtype = dtype
        self.ann = plan.ann

    def children(self):
        return list(zip(self.layer_names, self.layer_modules))

    def spiking_sites(self, prefix: str = ""):
        for m in self.layer_modules:
            yield from m.spiking_sites()

    def runtime_census(self, include_head: bool = False) -> int:
        return sum(k for sid, k in self.spiking_sites() if include_head or not sid.startswith("FC"))

    def set_path(self, genotype: Genotype):
        slots = [m for m in self.layer_modules if isinstance(m, ChoiceSlot)]
        if len(slots) != len(genotype):
            raise GenotypeError(f"network has {len(slots)} choice slots, genotype has {len(genotype)}")
        for s, kind in zip(slots, genotype):
            if str(kind) not in s.candidates:
                raise GenotypeError(f"{kind} is not a candidate at {s.label}")
            s.active = str(kind)

    def forward(self, x, ctx):
        for m in self.layer_modules:
            x = m.forward(x, ctx)
        return x

    def backward(self, g, ctx):
        for m in reversed(self.layer_modules):
            g = m.backward(g, ctx)
        return g


def _act(shape, cfg, site_id, ann, dtype):
    return ReLU(shape) if ann else PLIF(shape, cfg, site_id, dtype=dtype)


def _build_stem(spec: LayerSpec, rng, cfg, ann, dtype) -> Module:
    layers, names = [], []
    c_prev = spec.c_in
    for i, (c, ho, wo) in enumerate(spec.extra):
        if i > 0:
            layers.append(MaxPool())  # resolution reducer inside the stem; its output is not ledgered
            names.append(f"pool{i}")
        layers += [Conv2d(c_prev, c, 3, rng, dtype=dtype), BatchNorm(c, dtype=dtype),
                   _act((c, ho, wo), cfg, f"Stem.{i}", ann, dtype)]
        names += [f"conv{i}", f"bn{i}", f"neuron{i}"]
        c_prev = c
    return Sequential(*layers, names=names)


def build_network(plan: NetworkPlan, rng: np.random.Generator, cfg: NeuronConfig | None = None,
                  dtype=np.float32, supernet_candidates=None) -> SpikingNetwork:
    """Instantiate weights for ``plan``.

    With ``supernet_candidates`` every TBD slot holds all candidates
    (a weight-sharing super-network) instead of the plan's genotype.
    """
    cfg = cfg or NeuronConfig()
    ann = plan.ann
    built = []
    for spec in plan.layers:
        if spec.role == "stem":
            m = _build_stem(spec, rng, cfg, ann, dtype)
        elif spec.role == "tbd":
            if supernet_candidates is not None:
                m = ChoiceSlot(spec, supernet_candidates, rng, cfg, ann, dtype)
            else:
                m = build_block(spec.kind, spec.c_in, spec.c_out, spec.h, spec.w, rng, spec.label, cfg,
                                spec.stride, ann, dtype)
        elif spec.role == "ds_block":
            m = build_block(spec.kind, spec.c_in, spec.c_out, spec.h, spec.w, rng, spec.label, cfg,
                            spec.stride, ann, dtype)
        elif spec.role == "ds_max":
            m = MaxPool((spec.c_out, spec.h_out, spec.w_out), None if ann else f"{spec.label}.0")
        elif spec.role == "ds_avg":
            m = AvgPool()
        elif spec.role == "gap":
            m = Sequential(GlobalAvgPool(), _act((spec.c_out,), cfg, "GAP.0", ann, dtype), names=["pool", "neuron"])
        elif spec.role == "fc":
            m = Sequential(Flatten(), Linear(spec.c_in, spec.c_out, rng, dtype=dtype),
                           _act((spec.c_out,), cfg, "FC.0", ann, dtype), names=["flatten", "linear", "neuron"])
        elif spec.role == "voting":
            m = Voting(plan.macro.voting_k)
        else:
            raise ValueError(f"unknown layer role {spec.role!r}")
        built.append((spec.label, m))
    return SpikingNetwork(plan, built, cfg, dtype)
