"""Spike-aware fitness and the evolutionary / random architecture search."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .archspace import Genotype, random_genotype
from .blocks import CANDIDATES

log = logging.getLogger(__name__)


def fitness(accuracy: float, n: float, n_avg: float, lam: float) -> float:
    """Exponentially discounted fitness ``accuracy * (n / n_avg) ** lam``."""
    if n <= 0 or n_avg <= 0:
        raise ValueError(f"spike counts must be positive (N={n}, N_avg={n_avg})")
    return accuracy * (n / n_avg) ** lam


def fitness_linear(accuracy: float, n: float, n_avg: float, lam: float) -> float:
    """Linearly discounted fitness ``accuracy - lam * n / n_avg``."""
    if n <= 0 or n_avg <= 0:
        raise ValueError(f"spike counts must be positive (N={n}, N_avg={n_avg})")
    return accuracy - lam * (n / n_avg)


FITNESS = {"exp": fitness, "linear": fitness_linear}


@dataclass
class SearchConfig:
    lam: float = -0.08
    rounds: int = 10
    mutation_ratio: float = 0.2
    num_mutation: int = 10
    num_crossover: int = 10
    top_k: int = 10
    pool_size: int = 20
    seed: int = 0
    fitness: str = "exp"
    max_draws: int = 10_000  # random top-up attempts before a round gives up

    def __post_init__(self):
        if self.num_mutation + self.num_crossover > self.pool_size:
            raise ValueError("p_m + p_c must not exceed the evaluation pool size")
        if self.fitness not in FITNESS:
            raise ValueError(f"fitness must be one of {tuple(FITNESS)}")

    @property
    def budget(self) -> int:
        return self.rounds * self.pool_size


@dataclass
class FitnessRecord:
    genotype: Genotype
    accuracy: float
    spikes: float
    fitness: float
    round: int = 0
    origin: str = "random"  # random | mutation | crossover

    def to_json(self) -> str:
        return json.dumps({
            "round": self.round, "genotype": str(self.genotype), "accuracy": self.accuracy,
            "spikes": self.spikes, "fitness": self.fitness, "origin": self.origin,
        })


def mutate(parent: Genotype, ratio: float, rng: np.random.Generator, candidates=CANDIDATES) -> Genotype:
    """Resample each slot uniformly (the same tag may come back) with probability ``ratio``."""
    blocks = list(parent)
    for i in range(len(blocks)):
        if rng.random() < ratio:
            blocks[i] = candidates[rng.integers(len(candidates))]
    return Genotype(tuple(blocks))


def crossover(m1: Genotype, m2: Genotype, rng: np.random.Generator, cut: int | None = None) -> Genotype:
    """First ``cut`` blocks of ``m1`` followed by the rest of ``m2``; ``cut`` ~ U{1..L-1}."""
    if len(m1) != len(m2):
        raise ValueError(f"crossover parents differ in length ({len(m1)} vs {len(m2)})")
    if cut is None:
        cut = int(rng.integers(1, len(m1)))
    return Genotype(tuple(m1.blocks[:cut]) + tuple(m2.blocks[cut:]))


@dataclass
class SearchResult:
    best: FitnessRecord
    top: list[FitnessRecord]
    log: list[FitnessRecord] = field(default_factory=list)

    @property
    def evaluations(self) -> int:
        return len(self.log)

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(rec.to_json() + "\n")


class _Scorer:
    def __init__(self, evaluate: Callable, n_avg: float, cfg: SearchConfig):
        self.evaluate, self.n_avg, self.cfg = evaluate, n_avg, cfg
        self.fn = FITNESS[cfg.fitness]
        self.seen: set[Genotype] = set()
        self.records: list[FitnessRecord] = []

    def score(self, genotype, rnd, origin) -> FitnessRecord:
        acc, n = self.evaluate(genotype)
        rec = FitnessRecord(genotype, float(acc), float(n), self.fn(acc, n, self.n_avg, self.cfg.lam), rnd, origin)
        self.records.append(rec)
        return rec


def _update_top(top: list[FitnessRecord], new: list[FitnessRecord], k: int) -> list[FitnessRecord]:
    # stable sort: earlier evaluations win ties
    return sorted(top + new, key=lambda r: -r.fitness)[:k]


def evolve(evaluate: Callable[[Genotype], tuple[float, float]], n_avg: float, cfg: SearchConfig,
           slots: int = 5, candidates=CANDIDATES) -> SearchResult:
    """Evolutionary search with a top-k pool and a per-round evaluation pool.

    Round 1 evaluates ``pool_size`` random genotypes. Later rounds build
    ``num_mutation`` mutants and ``num_crossover`` crossovers from parents drawn
    uniformly from the top-k pool, drop anything already evaluated, and top the
    pool up with fresh random genotypes. No genotype is evaluated twice, so at
    most ``rounds * pool_size`` evaluations happen.
    """
    rng = np.random.default_rng(cfg.seed)
    sc = _Scorer(evaluate, n_avg, cfg)
    space = len(candidates) ** slots
    top: list[FitnessRecord] = []

    def fresh(g, pool):
        return g not in sc.seen and all(g != p for p, _ in pool)

    for rnd in range(1, cfg.rounds + 1):
        pool: list[tuple[Genotype, str]] = []
        if rnd > 1 and top:
            for _ in range(cfg.num_mutation):
                parent = top[rng.integers(len(top))].genotype
                child = mutate(parent, cfg.mutation_ratio, rng, candidates)
                if fresh(child, pool):
                    pool.append((child, "mutation"))
            for _ in range(cfg.num_crossover):
                m1 = top[rng.integers(len(top))].genotype
                m2 = top[rng.integers(len(top))].genotype
                child = crossover(m1, m2, rng)
                if fresh(child, pool):
                    pool.append((child, "crossover"))
        draws = 0
        while len(pool) < cfg.pool_size and len(sc.seen) + len(pool) < space and draws < cfg.max_draws:
            g = random_genotype(rng, slots, candidates)
            draws += 1
            if fresh(g, pool):
                pool.append((g, "random"))
        new = []
        for g, origin in pool:
            sc.seen.add(g)
            new.append(sc.score(g, rnd, origin))
        top = _update_top(top, new, cfg.top_k)
        if top:
            log.info("round %d: %d evaluated, best %s fitness %.4f", rnd, len(new), top[0].genotype, top[0].fitness)
    if not top:
        raise ValueError("search evaluated no architectures")
    return SearchResult(top[0], top, sc.records)


def random_search(evaluate: Callable[[Genotype], tuple[float, float]], n_avg: float, budget: int, lam: float,
                  seed: int = 0, slots: int = 5, candidates=CANDIDATES, fitness_kind: str = "exp") -> SearchResult:
    """Evaluate ``budget`` distinct random genotypes; return the fittest."""
    if budget < 1:
        raise ValueError("budget must be positive")
    cfg = SearchConfig(lam=lam, seed=seed, fitness=fitness_kind)
    rng = np.random.default_rng(seed)
    sc = _Scorer(evaluate, n_avg, cfg)
    budget = min(budget, len(candidates) ** slots)
    while len(sc.seen) < budget:
        g = random_genotype(rng, slots, candidates)
        if g in sc.seen:
            continue
        sc.seen.add(g)
        sc.score(g, 1, "random")
    top = _update_top([], sc.records, cfg.top_k)
    return SearchResult(top[0], top, sc.records)


def search_supernet(supernet, val_set, cfg: SearchConfig, timesteps: int, batch_size: int = 256) -> SearchResult:
    """Run ``evolve`` on a trained super-network, scoring genotypes on ``val_set``."""
    from .supernet import make_evaluator
    if val_set is None or len(val_set) == 0:
        raise ValueError("validation set is empty")
    evaluate = make_evaluator(supernet, val_set, timesteps, batch_size)
    return evolve(evaluate, supernet.n_avg, cfg, supernet.num_slots, supernet.candidates)
