"""Constructors for the standard network layouts and tensor initializers."""
from __future__ import annotations

import numpy as np

from .network import CHI, SITE, T, U, V, Edge, Node, NodeKind, TensorNetwork, identity_tensor
from .tensor import haar_isometry

Handle = tuple  # (node id, out slot) of a leg that still needs a consumer


class NetworkBuilder:
    """Grow a network bottom-up by feeding open legs into new tensors."""

    def __init__(self, n_sites: int):
        self.nodes: dict[int, Node] = {}
        self.edges: dict[int, Edge] = {}
        self._next_edge = 1
        for s in range(n_sites):
            self.nodes[s] = Node(SITE, [], [None], None, site=s)
        self.leaves = list(range(n_sites))

    def site(self, s: int) -> Handle:
        return (s, 0)

    def add(self, kind: NodeKind, inputs: list[Handle]) -> list[Handle]:
        if len(inputs) != kind.n_in:
            raise ValueError(f"{kind.value} takes {kind.n_in} inputs")
        nid = len(self.nodes)
        node = Node(kind, [], [None] * kind.n_out, identity_tensor(kind))
        self.nodes[nid] = node
        for slot, (src, src_slot) in enumerate(inputs):
            if self.nodes[src].outs[src_slot] is not None:
                raise ValueError(f"leg {(src, src_slot)} already consumed")
            e = self._next_edge
            self._next_edge += 1
            self.edges[e] = Edge(src, src_slot, nid, slot)
            self.nodes[src].outs[src_slot] = e
            node.ins.append(e)
        return [(nid, k) for k in range(kind.n_out)]

    def build(self) -> TensorNetwork:
        for i, n in self.nodes.items():
            if None in n.outs:
                raise ValueError(f"node {i} has an unconsumed out leg")
        return TensorNetwork(self.nodes, self.edges, self.leaves)


def _mera_layer(b: NetworkBuilder, legs: list[Handle]) -> list[Handle]:
    n = len(legs)
    legs = list(legs)
    if n % 2 == 0:
        for k in range(n // 2):
            i, j = 2 * k + 1, (2 * k + 2) % n
            legs[i], legs[j] = b.add(U, [legs[i], legs[j]])
        return [b.add(V, [legs[2 * k], legs[2 * k + 1]])[0] for k in range(n // 2)]
    # odd layer: open boundary, the last leg passes through
    for k in range((n - 1) // 2):
        i, j = 2 * k + 1, 2 * k + 2
        legs[i], legs[j] = b.add(U, [legs[i], legs[j]])
    out = [b.add(V, [legs[2 * k], legs[2 * k + 1]])[0] for k in range(n // 2)]
    return out + [legs[-1]]


def layered_ertn(n_sites: int) -> TensorNetwork:
    """Binary-MERA-style layering for any ``n_sites >= 2``.

    Even layers are periodic (disentanglers on bonds (1,2), (3,4), ...,
    (n-1, 0), then isometries on (0,1), (2,3), ...).  Odd layers use open
    boundaries and pass their last leg up unchanged.  A power-of-two size
    gives the periodic binary MERA; 14 sites gives a 14 -> 7 -> 4 -> 2 ER network.
    """
    if n_sites < 2:
        raise ValueError("need at least two sites")
    b = NetworkBuilder(n_sites)
    legs = [b.site(s) for s in range(n_sites)]
    while len(legs) > 2:
        legs = _mera_layer(b, legs)
    b.add(T, legs)
    return b.build()


def binary_mera(n_sites: int) -> TensorNetwork:
    if n_sites < 2 or n_sites & (n_sites - 1):
        raise ValueError("binary MERA needs a power-of-two number of sites")
    return layered_ertn(n_sites)


def top_only() -> TensorNetwork:
    b = NetworkBuilder(2)
    b.add(T, [b.site(0), b.site(1)])
    return b.build()


def tetramer_singlet(n_tetramers: int) -> TensorNetwork:
    """One four-site MERA block per tetramer; blocks share no bonds.

    Site order is lexicographic in (x, y) with y fastest, so tetramer x
    owns sites 4x..4x+3 in ring order.
    """
    b = NetworkBuilder(4 * n_tetramers)
    for x in range(n_tetramers):
        legs = [b.site(4 * x + y) for y in range(4)]
        legs = _mera_layer(b, legs)
        b.add(T, legs)
    return b.build()


def randomize(net: TensorNetwork, rng: np.random.Generator, nodes=None) -> TensorNetwork:
    """Replace tensors with Haar-random isometries (in generation order, for reproducibility)."""
    targets = net.generation_order() if nodes is None else [i for i in net.generation_order() if i in set(nodes)]
    tensors = {}
    for i in targets:
        n = net.nodes[i]
        m = haar_isometry(CHI ** len(n.ins), CHI ** len(n.outs), rng)
        tensors[i] = m.reshape((CHI,) * (len(n.ins) + len(n.outs)))
    return net.with_tensors(tensors)


def reset_identity(net: TensorNetwork, nodes=None) -> TensorNetwork:
    targets = net.tensor_ids() if nodes is None else nodes
    return net.with_tensors({i: identity_tensor(net.nodes[i].kind) for i in targets})
