"""Spike accounting: per-layer, per-timestep spike counts and neuron censuses."""

from __future__ import annotations

import csv
import io
import json
import re
from collections import OrderedDict

import numpy as np


class LedgerError(KeyError):
    pass


class SpikeLedger:
    """Accumulates spike counts of every spiking site of a network.

    Layers are registered up front with their per-sample neuron count ``K_l``
    and a group label (the block they belong to, e.g. ``TBD3``). Counts are
    stored per timestep and summed across batches, so the per-sample total
    ``N`` does not depend on how the samples were batched.
    """

    def __init__(self, timesteps: int):
        if timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        self.timesteps = timesteps
        self.neurons: OrderedDict[str, int] = OrderedDict()
        self.groups: dict[str, str] = {}
        self.counts: dict[str, np.ndarray] = {}
        self.samples = 0

    def register(self, layer_id: str, neurons: int, group: str | None = None):
        self.neurons[layer_id] = int(neurons)
        self.groups[layer_id] = group or re.split(r"[.\[]", layer_id)[0]
        self.counts[layer_id] = np.zeros(self.timesteps, dtype=np.float64)

    def record(self, layer_id: str, spikes_t: np.ndarray, t: int = 0):
        if layer_id not in self.counts:
            raise LedgerError(f"layer {layer_id!r} was never registered")
        if spikes_t.dtype == bool or np.issubdtype(spikes_t.dtype, np.integer):
            n = np.count_nonzero(spikes_t)
        else:
            n = float(np.sum(spikes_t, dtype=np.float64))
        self.counts[layer_id][t] += n

    def add_samples(self, n: int):
        self.samples += int(n)

    def reset(self):
        for c in self.counts.values():
            c[:] = 0
        self.samples = 0

    # -- queries --------------------------------------------------------------

    @property
    def census(self) -> int:
        return sum(self.neurons.values())

    def layer_spikes(self, layer_id: str) -> float:
        return float(self.counts[layer_id].sum())

    def total_spikes(self) -> float:
        """Spikes summed over layers, timesteps and samples."""
        return float(sum(c.sum() for c in self.counts.values()))

    def spikes_per_sample(self) -> float:
        if self.samples == 0:
            raise LedgerError("ledger holds no samples")
        return self.total_spikes() / self.samples

    def firing_rate(self, layer_id: str) -> float:
        if self.samples == 0:
            raise LedgerError("ledger holds no samples")
        k = self.neurons[layer_id]
        return self.layer_spikes(layer_id) / (k * self.timesteps * self.samples)

    def group_names(self) -> list[str]:
        return list(OrderedDict.fromkeys(self.groups[i] for i in self.neurons))

    def group_neurons(self, group: str) -> int:
        return sum(k for i, k in self.neurons.items() if self.groups[i] == group)

    def group_spikes(self, group: str) -> float:
        return sum(self.layer_spikes(i) for i in self.neurons if self.groups[i] == group)

    def group_firing_rate(self, group: str) -> float:
        if self.samples == 0:
            raise LedgerError("ledger holds no samples")
        if group not in self.group_names():
            raise LedgerError(f"no spiking sites in group {group!r}")
        return self.group_spikes(group) / (self.group_neurons(group) * self.timesteps * self.samples)

    def merge(self, other: "SpikeLedger"):
        for i, c in other.counts.items():
            if i not in self.counts:
                self.register(i, other.neurons[i], other.groups[i])
            self.counts[i] += c
        self.samples += other.samples


def estimate_spikes(census: float, firing_rate: float) -> float:
    """Expected spikes per timestep from a neuron census and an average firing rate."""
    if census <= 0 or firing_rate <= 0:
        raise ValueError("census and firing rate must be positive")
    return census * firing_rate


def report(ledger: SpikeLedger) -> list[dict]:
    """Per-group table (layer, neurons, spikes_per_sample, firing_rate) plus a total row."""
    rows = []
    samples = max(ledger.samples, 1)
    for g in ledger.group_names():
        rows.append(
            {
                "layer": g,
                "neurons": ledger.group_neurons(g),
                "spikes_per_sample": ledger.group_spikes(g) / samples,
                "firing_rate": ledger.group_firing_rate(g) if ledger.samples else 0.0,
            }
        )
    total_rate = ledger.total_spikes() / (ledger.census * ledger.timesteps * samples) if ledger.census else 0.0
    rows.append(
        {
            "layer": "total",
            "neurons": ledger.census,
            "spikes_per_sample": ledger.total_spikes() / samples,
            "firing_rate": total_rate,
        }
    )
    return rows


REPORT_COLUMNS = ("layer", "neurons", "spikes_per_sample", "firing_rate")


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def report_json(rows: list[dict]) -> str:
    return json.dumps(rows, indent=2)
