import itertools
import json

import numpy as np
import pytest

from spikenas.archspace import Genotype
from spikenas.blocks import CANDIDATES, SCB_K3, SKIP, SRB_K3, SRB_K5
from spikenas.evosearch import (
    SearchConfig,
    crossover,
    evolve,
    fitness,
    fitness_linear,
    mutate,
    random_search,
    search_supernet,
)

from conftest import toy_fitness_table

N_AVG = 200.0


def brute_force(table, lam, kind=fitness):
    return max(table, key=lambda g: kind(table[g][0], table[g][1], N_AVG, lam))


class TestFitness:
    def test_examples(self):
        assert fitness(0.7, 123.0, 50.0, 0.0) == 0.7
        assert fitness(0.7, 50.0, 50.0, -0.3) == 0.7
        assert fitness(0.8, 200.0, 100.0, -1.0) == pytest.approx(0.4)
        assert fitness_linear(0.9, 10.0, 10.0, 0.1) == pytest.approx(0.8)
        assert fitness_linear(0.9, 17.0, 10.0, 0.0) == 0.9

    @pytest.mark.parametrize("fn", [fitness, fitness_linear])
    @pytest.mark.parametrize("n,navg", [(0, 1), (-1, 1), (1, 0)])
    def test_nonpositive_spikes(self, fn, n, navg):
        with pytest.raises(ValueError):
            fn(0.5, n, navg, -0.1)

    def test_decreasing_in_spikes(self):
        for lam in (-0.01, -0.08, -1.0):
            vals = [fitness(0.6, n, 100.0, lam) for n in np.linspace(1, 1000, 50)]
            assert all(a > b for a, b in zip(vals, vals[1:]))


class TestOperators:
    def test_mutate(self):
        p = Genotype.uniform(SCB_K3)
        assert mutate(p, 0.0, np.random.default_rng(0)) == p
        kids = [mutate(p, 1.0, np.random.default_rng(s)) for s in range(200)]
        same = sum(a == b for k in kids for a, b in zip(k, p)) / 1000
        assert 0.15 < same < 0.25
        assert mutate(p, 0.5, np.random.default_rng(7)) == mutate(p, 0.5, np.random.default_rng(7))

    def test_crossover(self):
        a, b = Genotype.uniform(SRB_K3), Genotype.uniform(SRB_K5)
        assert crossover(a, b, None, cut=2) == Genotype((SRB_K3, SRB_K3, SRB_K5, SRB_K5, SRB_K5))
        assert crossover(a, a, np.random.default_rng(0)) == a
        cuts = {sum(x == SRB_K3 for x in crossover(a, b, np.random.default_rng(s))) for s in range(100)}
        assert cuts == {1, 2, 3, 4}
        assert crossover(a, b, np.random.default_rng(4)) == crossover(a, b, np.random.default_rng(4))
        with pytest.raises(ValueError):
            crossover(a, Genotype((SKIP,) * 4), np.random.default_rng(0))


class TestSearch:
    def test_config(self):
        assert SearchConfig().budget == 200
        with pytest.raises(ValueError):
            SearchConfig(num_mutation=15, num_crossover=10)

    @pytest.mark.parametrize("seed", range(3))
    def test_toy_argmax(self, seed):
        space, table = toy_fitness_table(seed)
        res = evolve(lambda g: table[g], N_AVG, SearchConfig(seed=seed), slots=2)
        assert res.best.genotype == brute_force(table, -0.08)
        rs = random_search(lambda g: table[g], N_AVG, 25, -0.08, seed=seed, slots=2)
        assert rs.best.genotype == brute_force(table, -0.08)
        assert rs.evaluations == 25

    def test_lambda_zero_ranks_by_accuracy(self):
        _, table = toy_fitness_table(4)
        res = evolve(lambda g: table[g], N_AVG, SearchConfig(lam=0.0, rounds=1), slots=2)
        assert [r.fitness for r in res.top] == sorted((r.accuracy for r in res.log), reverse=True)[:10]

    def test_budget_and_dedup(self):
        calls = []

        def ev(g):
            calls.append(g)
            return 0.5 + 0.01 * sum(CANDIDATES.index(b) for b in g), 100.0 + len(calls)

        res = evolve(ev, N_AVG, SearchConfig(seed=1))
        assert len(calls) == res.evaluations <= 200
        assert len(set(calls)) == len(calls)
        origins = {r.origin for r in res.log}
        assert {"random", "mutation", "crossover"} <= origins
        rounds = [r.round for r in res.log]
        assert all(rounds.count(k) <= 20 for k in range(1, 11))

    def test_top_pool_monotone(self):
        _, table = toy_fitness_table(2)
        mins = []
        for rounds in range(1, 5):
            res = evolve(lambda g: table[g], N_AVG, SearchConfig(seed=0, rounds=rounds, pool_size=6,
                                                                   num_mutation=3, num_crossover=3, top_k=4),
                         slots=2)
            fits = [r.fitness for r in res.top]
            assert fits == sorted(fits, reverse=True) and len(set(r.genotype for r in res.top)) == len(fits)
            mins.append(fits[-1])
        assert mins == sorted(mins)

    def test_small_space_exhausts(self):
        _, table = toy_fitness_table(0)
        res = evolve(lambda g: table[g], N_AVG, SearchConfig(), slots=2)
        assert res.evaluations == 25

    def test_random_search_single(self):
        res = random_search(lambda g: (0.3, 7.0), N_AVG, 1, -0.08, seed=3)
        assert res.evaluations == 1 and res.best.genotype == res.log[0].genotype

    def test_determinism_and_log(self, tmp_path):
        _, table = toy_fitness_table(1)
        a = evolve(lambda g: table[g], N_AVG, SearchConfig(seed=9, pool_size=5, num_mutation=2,
                                                           num_crossover=2, rounds=3), slots=2)
        b = evolve(lambda g: table[g], N_AVG, SearchConfig(seed=9, pool_size=5, num_mutation=2,
                                                           num_crossover=2, rounds=3), slots=2)
        a.write_log(tmp_path / "a.jsonl")
        b.write_log(tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        rec = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[0])
        assert set(rec) == {"round", "genotype", "accuracy", "spikes", "fitness", "origin"}

    def test_empty_validation(self):
        with pytest.raises(ValueError):
            search_supernet(None, None, SearchConfig(), 2)
