import math

import numpy as np
import pytest

from tnstruct.builders import layered_ertn, randomize, top_only
from tnstruct.contraction import energy
from tnstruct.models import XY, TwoSiteHamiltonian, build_random_xy
from tnstruct.moves import classify_pair
from tnstruct.network import fingerprint, validate
from tnstruct.optim import Schedule
from tnstruct.search import (ReplicaState, _train_candidates, SearchConfig, exchange_probability, heat_bath_select,
                             replica_exchange, run_search, sweep)

QUICK = dict(local=Schedule(60, 0.1, 1e-3, 1e-10), global_=Schedule(20, 0.05, 1e-3, 1e-12))


class TestHeatBath:
    def test_boltzmann_weights(self):
        rng = np.random.default_rng(0)
        picks = np.array([heat_bath_select([0.0, math.log(2)], 1.0, rng) for _ in range(30000)])
        assert np.mean(picks == 0) == pytest.approx(2 / 3, abs=0.01)

    def test_infinite_beta_is_argmin(self, rng):
        assert all(heat_bath_select([0.3, -0.1, 0.2], math.inf, rng) == 1 for _ in range(50))

    def test_clear_winner_shortcut(self, rng):
        # second best is 0.2 above the best, beyond delta_structure = 0.1
        assert all(heat_bath_select([0.0, 0.2, 0.3], 0.01, rng, 0.1) == 0 for _ in range(200))
        picks = {heat_bath_select([0.0, 0.2, 0.3], 0.01, rng, 0.5) for _ in range(200)}
        assert picks == {0, 1, 2}

    def test_rejects(self, rng):
        with pytest.raises(ValueError):
            heat_bath_select([], 1.0, rng)
        with pytest.raises(ValueError):
            heat_bath_select([0.0, 1.0], -1.0, rng)


class TestExchange:
    def test_probability(self):
        assert exchange_probability(1.0, 2.0, 0.0, 1.0) == pytest.approx(math.exp(-1))
        assert exchange_probability(1.0, 2.0, 1.0, 0.0) == 1.0
        assert exchange_probability(math.inf, math.inf, 0.0, 1.0) == 1.0

    def _replicas(self, energies, rng):
        net = top_only()
        return [ReplicaState(k, net.with_tensors({}), b, E, rng)
                for k, (b, E) in enumerate(zip([1.0, 2.0, 3.0], energies))]

    def test_downhill_swap(self, rng):
        reps = self._replicas([-3.0, -2.0, -1.0], rng)
        nets = [r.net for r in reps]
        reps, recs, pruning = replica_exchange(reps, rng)
        assert len(recs) == 2 and pruning is None
        # colder replica already lower: the first pair swaps with probability exp(-1)
        assert recs[0]["p"] == pytest.approx(math.exp(-1.0))
        assert {id(r.net) for r in reps} == {id(n) for n in nets}

    def test_uphill_always_swaps(self, rng):
        reps = self._replicas([-1.0, -2.0, -3.0], rng)
        first = reps[0].net
        reps, recs, _ = replica_exchange(reps, rng)
        assert all(r["accepted"] for r in recs)
        assert [r.energy for r in reps] == [-2.0, -3.0, -1.0]
        assert reps[2].net is first

    def test_broadcast(self, rng):
        reps = self._replicas([-1.0, -2.0, -1.5], rng)
        reps, _, pruning = replica_exchange(reps, rng, delta_replica=0.1)
        assert pruning is not None and pruning["gap"] == pytest.approx(0.5)
        assert all(r.energy == -2.0 for r in reps)
        assert len({fingerprint(r.net) for r in reps}) == 1
        assert len({id(r.net) for r in reps}) == 3

    def test_no_broadcast_when_close(self, rng):
        reps = self._replicas([-1.0, -1.05, -1.02], rng)
        _, _, pruning = replica_exchange(reps, rng, delta_replica=0.1)
        assert pruning is None

    def test_single_replica(self, rng):
        reps = self._replicas([-1.0], rng)[:1]
        assert replica_exchange(reps, rng) == (reps, [], None)


class TestConfig:
    def test_betas(self):
        assert SearchConfig(n_replicas=3, beta_min=2.0, beta_max=4.0).betas() == [2.0, 3.0, 4.0]
        assert SearchConfig(n_replicas=2).betas() == [math.inf, math.inf]

    @pytest.mark.parametrize("kw", [dict(n_replicas=0), dict(beta_min=3.0, beta_max=2.0),
                                    dict(repetitions=-1), dict(local_backend="lbfgs")])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SearchConfig(**kw)


class TestSweep:
    @pytest.mark.parametrize("backend", ["adam", "ev"])
    def test_energy_matches_network(self, rng, backend):
        H, _ = build_random_xy(8, 0)
        net = randomize(layered_ertn(8), rng)
        cfg = SearchConfig(local_backend=backend, **QUICK)
        rep = sweep(ReplicaState(0, net, math.inf, energy(net, H), rng), H, cfg)
        assert rep.moves
        assert validate(rep.net).ok
        assert rep.energy == pytest.approx(energy(rep.net, H), abs=1e-9)
        for m in rep.moves:
            assert m["adopted"] == int(np.argmin(m["energies"]))
            assert m["energy_after"] == min(m["energies"])
        # each edge is visited at most once
        edges = [m["edge"] for m in rep.moves]
        assert len(edges) == len(set(edges))

    def test_backends_agree_on_one_pair(self, rng):
        H, _ = build_random_xy(8, 3)
        net = randomize(layered_ertn(8), rng)
        sig = classify_pair(net, 10)
        out = {}
        for backend in ("adam", "ev"):
            cfg = SearchConfig(local_backend=backend, local=Schedule(3000, 0.1, 1e-4, 1e-13))
            out[backend] = [tr.best_energy for _, _, tr in _train_candidates(net, sig, H, cfg)]
        assert min(out["adam"]) == pytest.approx(min(out["ev"]), abs=1e-6)

    def test_nothing_selectable(self, rng):
        net = randomize(top_only(), rng)
        H = TwoSiteHamiltonian(2, ((0, 1, XY),))
        rep = sweep(ReplicaState(0, net, 1.0, energy(net, H), rng), H, SearchConfig(**QUICK))
        assert rep.moves == []
        assert fingerprint(rep.net) == fingerprint(net)


class TestRunSearch:
    def _run(self, seed, repetitions=1, n_replicas=2):
        H, _ = build_random_xy(8, 1)
        rng = np.random.default_rng(seed)
        nets = [randomize(layered_ertn(8), rng) for _ in range(n_replicas)]
        cfg = SearchConfig(n_replicas=n_replicas, beta_min=5.0, beta_max=10.0, repetitions=repetitions,
                           initial=Schedule(20, 0.05, 1e-3), delta_structure=0.05, delta_replica=0.01,
                           seed=seed, **QUICK)
        return H, run_search(H, nets, cfg)

    def test_zero_repetitions(self):
        H, res = self._run(0, repetitions=0)
        assert res.moves == [] and res.exchanges == []
        assert res.best_energy == min(res.initial_energies)
        assert energy(res.best_net, H) == pytest.approx(res.best_energy, abs=1e-10)

    def test_deterministic(self):
        _, a = self._run(4)
        _, b = self._run(4)
        assert a.traces == b.traces
        assert a.moves == b.moves
        assert fingerprint(a.best_net) == fingerprint(b.best_net)

    def test_best_is_tracked(self):
        H, res = self._run(2)
        assert res.best_energy <= min(res.initial_energies)
        assert energy(res.best_net, H) == pytest.approx(res.best_energy, abs=1e-9)
        assert all(r[2] in ("initial", "global") for r in res.traces)
        assert sum(1 for r in res.traces if r[6] == "retained") == 2 + 2

    def test_needs_one_network_per_replica(self):
        H, _ = build_random_xy(8, 1)
        with pytest.raises(ValueError):
            run_search(H, [layered_ertn(8)], SearchConfig(n_replicas=2, **QUICK))
