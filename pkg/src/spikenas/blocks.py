"""Candidate spiking blocks and their closed-form neuron counts."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNorm,
    ChannelRepeat,
    Conv2d,
    GlobalAvgPool,
    Identity,
    MaxPool,
    Module,
    PLIF,
    ReLU,
    RunContext,
    Sequential,
    voting_forward,
)
from .neuron import NeuronConfig


class BlockError(ValueError):
    pass


@dataclass(frozen=True)
class BlockKind:
    tag: str  # skip | SCB | SRB | SIB
    k: int | None = None
    e: int | None = None

    def __str__(self):
        if self.tag == "skip":
            return "skip"
        if self.tag == "SIB":
            return f"SIB_k{self.k}_e{self.e}"
        return f"{self.tag}_k{self.k}"

    @property
    def has_neurons(self) -> bool:
        return self.tag != "skip"

    @classmethod
    def parse(cls, text: str) -> "BlockKind":
        text = text.strip()
        if text.lower() == "skip":
            return SKIP
        m = re.fullmatch(r"(SCB|SRB)_k(\d+)", text)
        if m:
            return cls(m.group(1), int(m.group(2)))
        m = re.fullmatch(r"SIB_k(\d+)_e(\d+)", text)
        if m:
            return cls("SIB", int(m.group(1)), int(m.group(2)))
        raise BlockError(f"unknown block tag {text!r}")

    def validate(self):
        if self.tag == "skip":
            return
        if self.tag not in ("SCB", "SRB", "SIB") or self.k not in (3, 5):
            raise BlockError(f"unsupported block kind {self}")
        if self.tag == "SIB" and self.e not in (1, 3):
            raise BlockError(f"unsupported SIB expansion {self.e}")


SKIP = BlockKind("skip")
SCB_K3 = BlockKind("SCB", 3)
SCB_K5 = BlockKind("SCB", 5)
SRB_K3 = BlockKind("SRB", 3)
SRB_K5 = BlockKind("SRB", 5)
SIB_K3_E1 = BlockKind("SIB", 3, 1)
SIB_K3_E3 = BlockKind("SIB", 3, 3)

CANDIDATES: tuple[BlockKind, ...] = (SKIP, SCB_K3, SCB_K5, SRB_K3, SRB_K5)


def neuron_count(kind: BlockKind, h: int, w: int, c_in: int, c_out: int, stride: int = 1) -> int:
    """Spiking neurons inside one block for an ``h x w x c_in`` input.

    SCB/SRB: ``2 * h' * w' * c_out``; SIB: ``h*w*e*c_in + h'*w'*(e*c_in + c_out)``
    where ``h', w'`` is the output resolution. Skip has none (a stride-2 skip is
    a max pool whose output sites count as spiking).
    """
    ho, wo = h // stride, w // stride
    if kind.tag == "skip":
        return ho * wo * c_in if stride > 1 else 0
    if kind.tag in ("SCB", "SRB"):
        return 2 * ho * wo * c_out
    if kind.tag == "SIB":
        hidden = kind.e * c_in
        return h * w * hidden + ho * wo * (hidden + c_out)
    raise BlockError(f"no neuron count for {kind}")


# ---------------------------------------------------------------------------
# runtime blocks
# ---------------------------------------------------------------------------


def _activation(shape, cfg, site_id, ann, dtype):
    return ReLU(shape) if ann else PLIF(shape, cfg, site_id, dtype=dtype)


def conv_bn_act(c_in, c_out, k, h_out, w_out, rng, site_id, cfg=None, stride=1, groups=1, ann=False, dtype=np.float32):
    """Conv -> BN -> spiking neuron (or ReLU in ANN mode)."""
    return Sequential(
        Conv2d(c_in, c_out, k, rng, stride=stride, groups=groups, dtype=dtype),
        BatchNorm(c_out, dtype=dtype),
        _activation((c_out, h_out, w_out), cfg, site_id, ann, dtype),
        names=["conv", "bn", "neuron"],
    )


class ResidualBlock(Module):
    """SRB: two conv stages; the shortcut joins the second stage before its neuron."""

    def __init__(self, c_in, c_out, k, h, w, rng, label, cfg=None, stride=1, ann=False, dtype=np.float32):
        super().__init__()
        ho, wo = h // stride, w // stride
        self.stage1 = conv_bn_act(c_in, c_out, k, ho, wo, rng, f"{label}.0", cfg, stride, ann=ann, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, k, rng, dtype=dtype)
        self.bn2 = BatchNorm(c_out, dtype=dtype)
        self.neuron2 = _activation((c_out, ho, wo), cfg, f"{label}.1", ann, dtype)
        if c_in != c_out or stride != 1:
            # projection adds parameters but no neurons
            self.shortcut = Conv2d(c_in, c_out, 1, rng, stride=stride, dtype=dtype)
        else:
            self.shortcut = Identity()

    def children(self):
        return [("stage1", self.stage1), ("conv2", self.conv2), ("bn2", self.bn2),
                ("neuron2", self.neuron2), ("shortcut", self.shortcut)]

    def forward(self, x, ctx):
        s1 = self.stage1.forward(x, ctx)
        z = self.bn2.forward(self.conv2.forward(s1, ctx), ctx)
        sc = self.shortcut.forward(x, ctx)
        if sc.shape[0] != z.shape[0]:  # static input broadcast over time
            sc = np.broadcast_to(sc, z.shape)
            self._static_sc = True
        else:
            self._static_sc = False
        return self.neuron2.forward(z + sc, ctx)

    def backward(self, g, ctx):
        gz = self.neuron2.backward(g, ctx)
        gsc = gz.sum(axis=0, keepdims=True) if self._static_sc else gz
        gx = self.shortcut.backward(gsc, ctx)
        gs1 = self.conv2.backward(self.bn2.backward(gz, ctx), ctx)
        gx1 = self.stage1.backward(gs1, ctx)
        if gx1.shape != gx.shape:
            gx1 = gx1.sum(axis=0, keepdims=True) if gx.shape[0] == 1 else gx1
            gx = gx.sum(axis=0, keepdims=True) if gx1.shape[0] == 1 else gx
        return gx1 + gx


def build_block(kind: BlockKind, c_in: int, c_out: int, h: int, w: int, rng=None, label: str = "block",
                cfg: NeuronConfig | None = None, stride: int = 1, ann: bool = False,
                dtype=np.float32) -> Module:
    """Instantiate a candidate block for an ``h x w x c_in`` input.

    Skip at equal widths is the identity; at a width change it repeats
    channels, and at stride 2 it max-pools. Neither adds parameters.
    """
    kind.validate()
    rng = rng if rng is not None else np.random.default_rng(0)
    ho, wo = h // stride, w // stride
    if kind.tag == "skip":
        if c_out % c_in:
            raise BlockError(f"skip cannot map {c_in} channels to {c_out}")
        layers = []
        if stride == 2:
            layers.append(MaxPool((c_in, ho, wo), None if ann else f"{label}.0"))
        elif stride != 1:
            raise BlockError("skip supports stride 1 or 2")
        if c_out != c_in:
            layers.append(ChannelRepeat(c_out // c_in))
        return Sequential(*layers) if layers else Identity()
    if kind.tag == "SCB":
        return Sequential(
            conv_bn_act(c_in, c_out, kind.k, ho, wo, rng, f"{label}.0", cfg, stride, ann=ann, dtype=dtype),
            conv_bn_act(c_out, c_out, kind.k, ho, wo, rng, f"{label}.1", cfg, ann=ann, dtype=dtype),
        )
    if kind.tag == "SRB":
        return ResidualBlock(c_in, c_out, kind.k, h, w, rng, label, cfg, stride, ann, dtype)
    hidden = kind.e * c_in
    return Sequential(
        conv_bn_act(c_in, hidden, 1, h, w, rng, f"{label}.0", cfg, ann=ann, dtype=dtype),
        conv_bn_act(hidden, hidden, kind.k, ho, wo, rng, f"{label}.1", cfg, stride, groups=hidden, ann=ann, dtype=dtype),
        conv_bn_act(hidden, c_out, 1, ho, wo, rng, f"{label}.2", cfg, ann=ann, dtype=dtype),
    )


def count_neuron_layers(block: Module) -> int:
    return sum(1 for _, m in block.modules() if isinstance(m, PLIF))


def count_conv_layers(block: Module) -> int:
    return sum(1 for _, m in block.modules() if isinstance(m, Conv2d))


def gap_forward(spikes: np.ndarray, cfg: NeuronConfig | None = None, timesteps: int | None = None):
    """GAP over a (T, N, C, H, W) spike tensor feeding a width-C neuron layer.

    Returns ``(currents, spikes_out)``.
    """
    cfg = cfg or NeuronConfig()
    currents = GlobalAvgPool().forward(spikes, RunContext())
    neuron = PLIF((spikes.shape[2],), cfg, dtype=spikes.dtype)
    out = neuron.forward(currents, RunContext(timesteps=timesteps or spikes.shape[0]))
    return currents, out


__all__ = [
    "BlockKind", "BlockError", "CANDIDATES", "SKIP", "SCB_K3", "SCB_K5", "SRB_K3", "SRB_K5",
    "SIB_K3_E1", "SIB_K3_E3", "build_block", "neuron_count", "voting_forward", "gap_forward",
    "conv_bn_act", "ResidualBlock",
]
