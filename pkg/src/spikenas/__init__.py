"""Spiking-network architecture search with spike-aware fitness, in numpy."""

__version__ = "0.1.0"

from .archspace import Genotype, MacroArch, assemble, build_network, enumerate_space, space_cardinality
from .blocks import CANDIDATES, BlockKind
from .evosearch import SearchConfig, crossover, evolve, fitness, fitness_linear, mutate, random_search
from .neuron import NeuronConfig, neuron_step
from .spikeledger import SpikeLedger, estimate_spikes
from .supernet import SuperNet, train_supernet
from .training import TrainConfig, evaluate, train

__all__ = [
    "CANDIDATES", "BlockKind", "Genotype", "MacroArch", "NeuronConfig", "SearchConfig", "SpikeLedger",
    "SuperNet", "TrainConfig", "assemble", "build_network", "crossover", "enumerate_space", "estimate_spikes",
    "evaluate", "evolve", "fitness", "fitness_linear", "mutate", "neuron_step", "random_search",
    "space_cardinality", "train", "train_supernet",
]
