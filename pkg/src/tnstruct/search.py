"""Structural search: sweeps of local rewirings, global retraining and replica exchange."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .contraction import block_environment, energy
from .models import TwoSiteHamiltonian
from .moves import (MoveError, PairModel, SelectionState, classify_pair, enumerate_candidates,
                    initial_tensors, refresh_exclusions, select_edge, splice)
from .network import TensorNetwork, edge_metadata
from .optim import NumericalError, Schedule, ev_minimize, minimize, optimize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    n_replicas: int = 1
    beta_min: float = math.inf
    beta_max: float = math.inf
    repetitions: int = 1
    local: Schedule = Schedule(2500, 0.1, 1e-4, 1e-12)
    global_: Schedule = Schedule(2500, 0.1, 1e-4, 1e-12)
    initial: Schedule | None = None
    delta_structure: float = math.inf
    delta_replica: float = math.inf
    e_ref: float | None = None
    seed: int | tuple = 0
    local_backend: str = "adam"   # or "ev": alternating SVD updates

    def __post_init__(self):
        if self.n_replicas < 1:
            raise ValueError("need at least one replica")
        if not 0 < self.beta_min <= self.beta_max:
            raise ValueError("need 0 < beta_min <= beta_max")
        if self.repetitions < 0 or self.delta_structure < 0 or self.delta_replica < 0:
            raise ValueError("repetitions and thresholds must be >= 0")
        if self.local_backend not in ("adam", "ev"):
            raise ValueError(f"unknown local backend {self.local_backend!r}")

    def betas(self) -> list[float]:
        if self.n_replicas == 1 or self.beta_min == self.beta_max:
            return [self.beta_max] * self.n_replicas
        return [float(b) for b in np.linspace(self.beta_min, self.beta_max, self.n_replicas)]


@dataclass
class ReplicaState:
    index: int
    net: TensorNetwork
    beta: float
    energy: float
    rng: np.random.Generator
    moves: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)   # selection flags at the end of the last sweep


@dataclass
class SearchResult:
    traces: list            # (repetition, replica, stage, iteration, energy, eta, stop)
    moves: list             # one record per adopted move
    exchanges: list         # one record per attempted swap
    prunings: list          # broadcast events
    replicas: list          # final ReplicaState per slot
    best_net: TensorNetwork
    best_energy: float
    initial_nets: list = field(default_factory=list)      # after the initial optimization
    initial_energies: list = field(default_factory=list)


# ------------------------------------------------------------- heat bath
def heat_bath_select(energies, beta: float, rng: np.random.Generator, delta_structure: float = math.inf) -> int:
    """Boltzmann choice among ``energies``; argmin at beta = inf or when the best is clearly ahead."""
    e = np.asarray(energies, dtype=float)
    if e.size == 0:
        raise ValueError("empty ballot")
    best = int(np.argmin(e))
    if math.isinf(beta) or e.size == 1:
        return best
    if beta <= 0:
        raise ValueError("beta must be positive")
    second = np.partition(e, 1)[1]
    if second - e[best] > delta_structure:
        return best
    w = np.exp(-beta * (e - e[best]))
    return int(rng.choice(e.size, p=w / w.sum()))


def exchange_probability(beta_a: float, beta_b: float, e_a: float, e_b: float) -> float:
    if math.isinf(beta_a) and math.isinf(beta_b):
        return 1.0
    ds = (beta_b - beta_a) * (e_b - e_a)
    return 1.0 if ds <= 0 else math.exp(-ds)


def replica_exchange(replicas: list[ReplicaState], rng: np.random.Generator, delta_replica: float = math.inf):
    """One ascending pass of neighbor swaps, then broadcast of a clearly best structure.

    Replicas must be sorted by beta.  Returns ``(replicas, exchange records, pruning record or None)``.
    """
    records = []
    if len(replicas) < 2:
        return replicas, records, None
    for r in range(len(replicas) - 1):
        a, b = replicas[r], replicas[r + 1]
        p = exchange_probability(a.beta, b.beta, a.energy, b.energy)
        accept = bool(p >= 1.0 or rng.random() < p)
        records.append({"pair": [r, r + 1], "energies": [a.energy, b.energy], "p": p, "accepted": accept})
        if accept:
            a.net, b.net = b.net, a.net
            a.energy, b.energy = b.energy, a.energy
    order = sorted(range(len(replicas)), key=lambda k: (replicas[k].energy, k))
    best, second = replicas[order[0]], replicas[order[1]]
    pruning = None
    if second.energy - best.energy > delta_replica:
        pruning = {"source": order[0], "energy": best.energy, "gap": second.energy - best.energy}
        for rep in replicas:
            rep.net, rep.energy = best.net.copy(), best.energy
    return replicas, records, pruning


# ------------------------------------------------------------------ sweep
def _train_candidates(net, sig, H, cfg):
    M = block_environment(net, [sig.lower, sig.upper], H,
                          [a.edge for a in sig.in_anchors], [b.edge for b in sig.out_anchors])
    if cfg.local_backend == "ev":
        # an isometric theta has |theta|^2 = 2**n_out, so the shift is a constant
        gamma = float(np.linalg.norm(M, 2)) + 1.0
        M = M - gamma * np.eye(M.shape[0])
        shift = gamma * 2 ** len(sig.out_anchors)
    ballot = []
    for cand in enumerate_candidates(sig):
        A, B = initial_tensors(cand)
        params = {"lower": A.reshape(4, -1), "upper": B.reshape(4, -1)}
        model = PairModel(sig, cand, M)
        try:
            if cfg.local_backend == "ev":
                best, trace = ev_minimize(model, params, cfg.local, shift=shift)
            else:
                best, trace = minimize(model, params, cfg.local, cfg.e_ref)
        except NumericalError as exc:
            log.warning("dropping candidate %s on edge %s: %s", cand.describe(), sig.edge, exc)
            continue
        ballot.append((cand, best, trace))
    return ballot


def sweep(rep: ReplicaState, H: TwoSiteHamiltonian, cfg: SearchConfig) -> ReplicaState:
    """Visit every selectable edge once, adopting a heat-bath choice among retrained rewirings."""
    net = rep.net
    _, flags = edge_metadata(net)
    state = SelectionState.from_network(net, flags=flags)
    while any(f == 0 for e, f in state.flags.items() if e != state.previous):
        p = select_edge(state, rep.rng)
        try:
            sig = classify_pair(net, p, state.flags)
        except MoveError:
            state.flags[p] = 1
            state.previous = 0
            continue
        ballot = _train_candidates(net, sig, H, cfg)
        if not ballot:
            state.flags[p] = 1
            state.previous = 0
            continue
        energies = [tr.best_energy for _, _, tr in ballot]
        k = heat_bath_select(energies, rep.beta, rep.rng, cfg.delta_structure)
        cand, best, _ = ballot[k]
        before = rep.energy
        net = splice(net, sig, cand, (best["lower"], best["upper"]))
        rep.energy = energies[k]
        rep.moves.append({"edge": p, "pair_type": sig.pair_type, "signature": list(sig.shape),
                          "candidates": len(ballot), "adopted": k, "adopted_structure": cand.describe(),
                          "energies": energies, "energy_before": before, "energy_after": energies[k]})
        # ids and flags survive the splice; exclusions and distances are re-derived
        keep = dict(state.flags)
        for e, f in refresh_exclusions(net, {e: 0 for e in net.edges}).items():
            keep[e] = keep[e] or f
        state = SelectionState(p, {e: ed.ends for e, ed in net.edges.items()}, keep, net.distances())
    if state.previous:
        state.flags[state.previous] = 1
    rep.net, rep.flags = net, state.flags
    return rep


# ---------------------------------------------------------------- driver
def _replica_round(args):
    rep, H, cfg, rep_no = args
    rep = sweep(rep, H, cfg)
    rep.net, trace = optimize(rep.net, H, cfg.global_, E_ref=cfg.e_ref)
    rep.energy = trace.best_energy
    rows = [(rep_no, rep.index, "global", l, E, eta, stop) for l, E, eta, stop in trace.rows()]
    rows.append((rep_no, rep.index, "global", len(trace.energies) + 1, trace.best_energy, 0.0, "retained"))
    return rep, rows


def _spawn(seed, n: int):
    ss = np.random.SeedSequence(seed)
    master, *children = ss.spawn(n + 1)
    return np.random.default_rng(master), [np.random.default_rng(c) for c in children]


def run_search(H: TwoSiteHamiltonian, init_nets, cfg: SearchConfig, threads: int = 1,
               progress=None) -> SearchResult:
    """Initial optimization, then ``cfg.repetitions`` rounds of sweep, global retraining and exchange."""
    if isinstance(init_nets, TensorNetwork):
        init_nets = [init_nets] * cfg.n_replicas
    if len(init_nets) != cfg.n_replicas:
        raise ValueError("need one initial network per replica")
    master, streams = _spawn(cfg.seed, cfg.n_replicas)
    traces, moves, exchanges, prunings = [], [], [], []
    replicas = []
    for k, (net, beta, rng) in enumerate(zip(init_nets, cfg.betas(), streams)):
        net = net.copy()
        if cfg.initial is not None:
            net, tr = optimize(net, H, cfg.initial)
            traces += [(0, k, "initial", l, E, eta, stop) for l, E, eta, stop in tr.rows()]
            E = tr.best_energy
        else:
            E = energy(net, H)
        traces.append((0, k, "initial", 0 if cfg.initial is None else len(tr.energies) + 1, E, 0.0, "retained"))
        replicas.append(ReplicaState(k, net, beta, E, rng))
    initial = ([r.net.copy() for r in replicas], [r.energy for r in replicas])
    best_net, best_E = min(((r.net, r.energy) for r in replicas), key=lambda x: x[1])
    pool = ProcessPoolExecutor(threads) if threads > 1 and cfg.n_replicas > 1 else None
    try:
        for rep_no in range(1, cfg.repetitions + 1):
            jobs = [(r, H, cfg, rep_no) for r in replicas]
            done = list(pool.map(_replica_round, jobs)) if pool else [_replica_round(j) for j in jobs]
            replicas = []
            for r, rows in done:
                traces += rows
                moves += [dict(m, repetition=rep_no, replica=r.index) for m in r.moves]
                r.moves = []
                replicas.append(r)
            for r in replicas:
                if r.energy < best_E:
                    best_net, best_E = r.net.copy(), r.energy
            replicas, recs, pruning = replica_exchange(replicas, master, cfg.delta_replica)
            exchanges += [dict(x, repetition=rep_no) for x in recs]
            if pruning:
                prunings.append(dict(pruning, repetition=rep_no))
            if progress:
                progress(rep_no, replicas)
    finally:
        if pool:
            pool.shutdown()
    return SearchResult(traces, moves, exchanges, prunings, replicas, best_net, best_E, *initial)
