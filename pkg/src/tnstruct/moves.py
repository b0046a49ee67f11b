"""Two-tensor local moves: classification, candidate rewirings, splicing and edge selection."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .network import (CHI, SITE, T, U, V, Edge, Node, NodeKind, TensorNetwork, detour_edges,
                      excluded_edges, identity_tensor, parallel_edges)


class MoveError(ValueError):
    pass


@dataclass(frozen=True)
class Anchor:
    """External leg of a pair: the edge and the neighbor (node, slot) on its far side."""

    edge: int
    node: int
    slot: int


@dataclass(frozen=True)
class PairSignature:
    edge: int
    lower: int
    upper: int
    lower_kind: NodeKind
    upper_kind: NodeKind
    in_anchors: tuple   # edges entering the pair from below
    out_anchors: tuple  # edges leaving the pair upward

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.in_anchors), len(self.out_anchors)

    @property
    def pair_type(self) -> str:
        return "".join(sorted(self.lower_kind.value + self.upper_kind.value))


@dataclass(frozen=True)
class CandidateStructure:
    """Two tensors joined by one bond; ``lower`` feeds ``upper``.

    Anchor indices refer to the signature.  New tensor legs are laid out as
    lower: ins = lower_in, outs = lower_out + [bond]; upper: ins = [bond, upper_in],
    outs = upper_out.
    """

    lower_kind: NodeKind
    upper_kind: NodeKind
    lower_in: tuple
    upper_in: int
    lower_out: tuple
    upper_out: tuple

    @property
    def kinds(self) -> str:
        return self.lower_kind.value + self.upper_kind.value

    def describe(self) -> str:
        return (f"{self.lower_kind.value}{list(self.lower_in)}->{list(self.lower_out)} | "
                f"{self.upper_kind.value}[{self.upper_in}]->{list(self.upper_out)}")


def classify_pair(net: TensorNetwork, p: int, flags: dict | None = None) -> PairSignature:
    flags = net.flags if flags is None else flags
    if flags.get(p, 0):
        raise MoveError(f"edge {p} is flagged")
    edge = net.edges[p]
    lower, upper = edge.ends
    if net.is_site(lower) or net.is_site(upper):
        raise MoveError(f"edge {p} touches a site")
    if p in parallel_edges(net):
        raise MoveError(f"edge {p} joins a pair connected by several edges")
    if p in detour_edges(net):
        raise MoveError(f"edge {p} closes a directed loop through other tensors")
    lo, up = net.nodes[lower], net.nodes[upper]
    ins = [e for e in lo.ins] + [e for e in up.ins if e != p]
    outs = [e for e in lo.outs if e != p] + [e for e in up.outs]
    in_anchors = tuple(Anchor(e, net.edges[e].src, net.edges[e].src_slot) for e in ins)
    out_anchors = tuple(Anchor(e, net.edges[e].dst, net.edges[e].dst_slot) for e in outs)
    return PairSignature(p, lower, upper, lo.kind, up.kind, in_anchors, out_anchors)


def enumerate_candidates(sig: PairSignature) -> list[CandidateStructure]:
    """Every {u, v, t} pair with one internal bond matching the signature.

    Wirings that differ only by exchanging a tensor's two inputs (or its
    outputs) are identified, which fixes where the internal bond sits.
    """
    n_in, n_out = sig.shape
    out = []
    for lk in (U, V):
        for uk in (U, V, T):
            if lk.n_in + uk.n_in - 1 != n_in or lk.n_out - 1 + uk.n_out != n_out:
                continue
            for upper_in in range(n_in):
                lower_in = tuple(a for a in range(n_in) if a != upper_in)
                for lower_out in combinations(range(n_out), lk.n_out - 1):
                    upper_out = tuple(b for b in range(n_out) if b not in lower_out)
                    out.append(CandidateStructure(lk, uk, lower_in, upper_in, tuple(lower_out), upper_out))
    return out


def incumbent(sig: PairSignature) -> CandidateStructure:
    k = sig.lower_kind.n_out - 1
    return CandidateStructure(sig.lower_kind, sig.upper_kind, (0, 1), 2, tuple(range(k)),
                              tuple(range(k, len(sig.out_anchors))))


def initial_tensors(cand: CandidateStructure) -> tuple[np.ndarray, np.ndarray]:
    return identity_tensor(cand.lower_kind), identity_tensor(cand.upper_kind)


# -------------------------------------------------------------- contraction
_LETTERS = "abcdefghijklmnopqrstuvwxy"


def _subscripts(sig: PairSignature, cand: CandidateStructure):
    n_in, n_out = sig.shape
    ins, outs = _LETTERS[:n_in], _LETTERS[n_in:n_in + n_out]
    lower = "".join(ins[a] for a in cand.lower_in) + "".join(outs[b] for b in cand.lower_out) + "z"
    upper = "z" + ins[cand.upper_in] + "".join(outs[b] for b in cand.upper_out)
    return lower, upper, ins + outs


class PairModel:
    """Energy of a candidate as a function of its two tensors.

    ``M`` is the effective Hamiltonian of the merged pair, laid out over
    ``(in anchors..., out anchors...)``.
    """

    def __init__(self, sig: PairSignature, cand: CandidateStructure, M: np.ndarray):
        self.sig, self.cand, self.M = sig, cand, M
        self.lo_sub, self.up_sub, self.theta_sub = _subscripts(sig, cand)
        self.lo_shape = (CHI,) * (cand.lower_kind.n_in + cand.lower_kind.n_out)
        self.up_shape = (CHI,) * (cand.upper_kind.n_in + cand.upper_kind.n_out)
        self.theta_shape = (CHI,) * len(self.theta_sub)

    def theta(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return np.einsum(f"{self.lo_sub},{self.up_sub}->{self.theta_sub}",
                         A.reshape(self.lo_shape), B.reshape(self.up_shape))

    def __call__(self, params: dict):
        A = params["lower"].reshape(self.lo_shape)
        B = params["upper"].reshape(self.up_shape)
        th = self.theta(A, B).reshape(-1)
        g = (self.M @ th)
        E = float(np.vdot(th, g).real)
        g = g.reshape(self.theta_shape)
        gA = np.einsum(f"{self.theta_sub},{self.up_sub}->{self.lo_sub}", g, B.conj())
        gB = np.einsum(f"{self.theta_sub},{self.lo_sub}->{self.up_sub}", g, A.conj())
        return E, {"lower": 2.0 * gA.reshape(params["lower"].shape),
                   "upper": 2.0 * gB.reshape(params["upper"].shape)}


# ------------------------------------------------------------------ splice
def splice(net: TensorNetwork, sig: PairSignature, cand: CandidateStructure,
           tensors: tuple[np.ndarray, np.ndarray] | None = None) -> TensorNetwork:
    """Replace the pair by ``cand``; node and edge ids are kept.

    New tensors default to the fixed identity-like starting matrices.
    Existing flags are kept and exclusions are refreshed.
    """
    for a in sig.in_anchors:
        e = net.edges.get(a.edge)
        if e is None or (e.src, e.src_slot) != (a.node, a.slot) or e.dst not in (sig.lower, sig.upper):
            raise MoveError(f"in anchor {a} no longer matches the network")
    for b in sig.out_anchors:
        e = net.edges.get(b.edge)
        if e is None or (e.dst, e.dst_slot) != (b.node, b.slot) or e.src not in (sig.lower, sig.upper):
            raise MoveError(f"out anchor {b} no longer matches the network")
    A, B = initial_tensors(cand) if tensors is None else tensors
    new = net.copy()
    lo, up, p = sig.lower, sig.upper, sig.edge
    lo_ins = [sig.in_anchors[a].edge for a in cand.lower_in]
    lo_outs = [sig.out_anchors[b].edge for b in cand.lower_out] + [p]
    up_ins = [p, sig.in_anchors[cand.upper_in].edge]
    up_outs = [sig.out_anchors[b].edge for b in cand.upper_out]
    new.nodes[lo] = Node(cand.lower_kind, lo_ins, lo_outs,
                         np.asarray(A, dtype=complex).reshape((CHI,) * (len(lo_ins) + len(lo_outs))))
    new.nodes[up] = Node(cand.upper_kind, up_ins, up_outs,
                         np.asarray(B, dtype=complex).reshape((CHI,) * (len(up_ins) + len(up_outs))))
    for nid, ins, outs in ((lo, lo_ins, lo_outs), (up, up_ins, up_outs)):
        for slot, e in enumerate(ins):
            old = new.edges[e]
            src, src_slot = (old.src, old.src_slot) if e != p else (lo, len(lo_outs) - 1)
            new.edges[e] = Edge(src, src_slot, nid, slot)
        for slot, e in enumerate(outs):
            if e == p:
                continue
            old = new.edges[e]
            new.edges[e] = Edge(nid, slot, old.dst, old.dst_slot)
    new.flags = refresh_exclusions(new, dict(net.flags))
    return new


# --------------------------------------------------------------- selection
def refresh_exclusions(net: TensorNetwork, flags: dict | None = None) -> dict:
    """Flags with every site edge, parallel edge and loop-closing edge set to 1."""
    flags = dict(net.flags if flags is None else flags)
    for e in net.edges:
        flags.setdefault(e, 0)
    for e in excluded_edges(net):
        flags[e] = 1
    return flags


@dataclass
class SelectionState:
    previous: int             # 0 means no previous selection
    edges: dict               # p -> (n, n')
    flags: dict               # p -> 0/1
    distances: dict           # p -> d_p

    @classmethod
    def from_network(cls, net: TensorNetwork, previous: int = 0, flags: dict | None = None):
        return cls(previous, {e: ed.ends for e, ed in net.edges.items()},
                   dict(net.flags if flags is None else flags), net.distances())


def adjacent_edge_indices(j: int, edges: dict) -> list[int]:
    ends = set(edges[j])
    return sorted(p for p, e in edges.items() if p != j and ends & set(e))


def select_edge(state: SelectionState, rng: np.random.Generator) -> int:
    """Choose the next edge: near the previous one if possible, deepest first."""
    def deepest(pool):
        d_max = max(state.distances[q] for q in pool)
        return sorted(q for q in pool if state.distances[q] == d_max)

    pool = []
    if state.previous:
        state.flags[state.previous] = 1
        pool = [p for p in adjacent_edge_indices(state.previous, state.edges) if state.flags[p] == 0]
    if not pool:
        pool = [p for p in sorted(state.edges) if state.flags[p] == 0]
    if not pool:
        raise MoveError("no unflagged edge left")
    candidates = deepest(pool)
    if len(candidates) == 1:
        return candidates[0]
    return int(candidates[rng.integers(len(candidates))])
