"""Contractions of isometric networks: state vectors, energies and environments.

Two independent routes are provided.  :func:`energy` contracts each term
``<Psi|h_ij|Psi>`` as a double-layer network restricted to the causal cone
of sites i and j (everything outside the cone cancels against its
conjugate by the isometric conditions).  :func:`to_state_vector` builds the
dense amplitude vector top-down; :func:`energy_and_gradients` reuses the
stored intermediate states to contract the ``<Psi|H|Psi>`` network with one
tensor removed at a time, which yields every environment in one sweep.
"""
from __future__ import annotations

import numpy as np

from .models import CapExceeded, TwoSiteHamiltonian
from .network import CHI, StructureError, TensorNetwork
from .tensor import DenseTensor

STATE_CAP = 20
CONE_WIDTH_CAP = 10


class _Frontier:
    """An array whose axes are labelled by open edges (or the batch label)."""

    __slots__ = ("data", "axes")

    def __init__(self, data: np.ndarray, axes: list):
        self.data = data
        self.axes = axes

    def apply(self, tensor: np.ndarray, ins: list[int], outs: list[int]) -> _Frontier:
        n_in = len(ins)
        pos = [self.axes.index(e) for e in outs]
        data = np.tensordot(self.data, tensor, axes=(pos, list(range(n_in, n_in + len(outs)))))
        axes = [a for a in self.axes if a not in outs] + list(ins)
        return _Frontier(data, axes)


def _sites_order(net: TensorNetwork, fr: _Frontier, lead: list = ()) -> np.ndarray:
    order = [fr.axes.index(a) for a in lead] + [fr.axes.index(net.site_edge(s)) for s in range(net.n_sites)]
    if len(order) != len(fr.axes):
        raise StructureError("final frontier does not match the site legs")
    return fr.data.transpose(order)


def _check_cap(net: TensorNetwork, cap: int):
    if net.n_sites > cap:
        raise CapExceeded(f"{net.n_sites} sites exceeds the state-vector cap of {cap}")


def forward(net: TensorNetwork, keep: bool = False):
    """Top-down contraction.  Returns the final frontier and, if ``keep``, the list
    of ``(node, frontier before node)`` pairs."""
    fr = _Frontier(np.ones((), dtype=complex), [])
    history = []
    for i in net.generation_order():
        node = net.nodes[i]
        if keep:
            history.append((i, fr))
        fr = fr.apply(node.tensor, node.ins, node.outs)
    return fr, history


def to_state_vector(net: TensorNetwork, cap: int = STATE_CAP) -> np.ndarray:
    """Amplitudes in the computational basis, site 0 most significant."""
    _check_cap(net, cap)
    fr, _ = forward(net)
    return _sites_order(net, fr).reshape(-1)


def _state_energy(psi: np.ndarray, H: TwoSiteHamiltonian) -> tuple[float, np.ndarray]:
    hpsi = H.apply(psi)
    return float(np.vdot(psi, hpsi).real), hpsi


def energy_and_gradients(net: TensorNetwork, H: TwoSiteHamiltonian, targets=None, cap: int = STATE_CAP):
    """Energy and Euclidean gradients ``G = 2 dE/dT*`` of the requested tensors.

    ``dE = Re sum(conj(G) * dT)`` to first order for every target tensor T.
    """
    _check_cap(net, cap)
    targets = set(net.tensor_ids() if targets is None else targets)
    fr, history = forward(net, keep=True)
    psi_t = _sites_order(net, fr)
    psi = psi_t.reshape(-1)
    E, hpsi = _state_energy(psi, H)
    # pulled-back H|psi>, laid out like the final frontier
    site_axes = [net.site_edge(s) for s in range(net.n_sites)]
    phi = _Frontier(hpsi.reshape(psi_t.shape), site_axes)
    grads = {}
    for i, before in reversed(history):
        node = net.nodes[i]
        n_in = len(node.ins)
        if i in targets:
            rest = [a for a in before.axes if a not in node.outs]
            g = np.tensordot(before.data.conj(), phi.data,
                             axes=([before.axes.index(a) for a in rest], [phi.axes.index(a) for a in rest]))
            labels = [a for a in before.axes if a in node.outs] + [a for a in phi.axes if a in node.ins]
            g = g.transpose([labels.index(a) for a in node.ins + node.outs])
            grads[i] = 2.0 * g
        # adjoint of the node: phi <- T^dag phi
        pos = [phi.axes.index(e) for e in node.ins]
        data = np.tensordot(phi.data, node.tensor.conj(), axes=(pos, list(range(n_in))))
        phi = _Frontier(data, [a for a in phi.axes if a not in node.ins] + list(node.outs))
    return E, grads


def environment(net: TensorNetwork, node_id: int, H: TwoSiteHamiltonian, cone_only: bool = False) -> DenseTensor:
    """Environment tensor of one node: ``<Psi|H|Psi>`` with the ket copy of the node removed.

    Contracting it with the node tensor reproduces the energy
    (``sum(env * T) == E``).  With ``cone_only`` the Hamiltonian terms whose
    causal cone misses the node are dropped; they are constant in the node
    and leave the result unchanged up to their (zero) derivative.
    """
    if node_id not in net.nodes:
        raise KeyError(f"unknown node {node_id}")
    if net.is_site(node_id):
        raise ValueError("sites have no environment")
    if cone_only:
        H = H.subset({k for k, (i, j, _) in enumerate(H.terms) if node_id in causal_cone(net, (i, j))})
    _, grads = energy_and_gradients(net, H, [node_id])
    return DenseTensor(0.5 * grads[node_id].conj(), net.nodes[node_id].dense(node_id).legs)


# ---------------------------------------------------------------- cone route
def causal_cone(net: TensorNetwork, sites) -> set[int]:
    return net.upward_closure(net.leaves[s] for s in sites)


def _trace_pair(data: np.ndarray, axes: list, label) -> tuple[np.ndarray, list]:
    a, b = axes.index(("k", label)), axes.index(("b", label))
    data = np.trace(data, axis1=a, axis2=b)
    axes = [x for k, x in enumerate(axes) if k not in (a, b)]
    return data, axes


def term_energy(net: TensorNetwork, i: int, j: int, block: np.ndarray) -> complex:
    """``<Psi|h_ij|Psi>`` from the double-layer causal-cone contraction."""
    cone = causal_cone(net, (i, j))
    keep_sites = {net.leaves[i], net.leaves[j]}
    rho = np.ones((), dtype=complex)
    axes: list = []
    for n in net.generation_order(cone):
        node = net.nodes[n]
        n_in = len(node.ins)
        outs_k = [axes.index(("k", e)) for e in node.outs]
        rho = np.tensordot(rho, node.tensor, axes=(outs_k, list(range(n_in, n_in + len(node.outs)))))
        axes = [a for a in axes if a not in [("k", e) for e in node.outs]] + [("k", e) for e in node.ins]
        outs_b = [axes.index(("b", e)) for e in node.outs]
        rho = np.tensordot(rho, node.tensor.conj(), axes=(outs_b, list(range(n_in, n_in + len(node.outs)))))
        axes = [a for a in axes if a not in [("b", e) for e in node.outs]] + [("b", e) for e in node.ins]
        for e in node.ins:
            src = net.edges[e].src
            if src not in cone and src not in keep_sites:
                rho, axes = _trace_pair(rho, axes, e)
        if len(axes) > 2 * CONE_WIDTH_CAP:
            raise CapExceeded(f"causal cone of sites ({i}, {j}) is wider than {CONE_WIDTH_CAP} legs")
    ei, ej = net.site_edge(i), net.site_edge(j)
    rho = rho.transpose([axes.index(a) for a in [("k", ei), ("k", ej), ("b", ei), ("b", ej)]]).reshape(4, 4)
    # rho[k, b] = psi_k conj(psi_b); <h> = sum_kb rho[k, b] h[b, k]
    return complex(np.sum(rho * block.T))


def energy(net: TensorNetwork, H: TwoSiteHamiltonian) -> float:
    """``<Psi|H|Psi>`` term by term over causal cones.

    Networks whose cones exceed the width cap fall back to the dense state
    vector when that is within its own cap.
    """
    if H.n_sites != net.n_sites:
        raise ValueError(f"Hamiltonian has {H.n_sites} sites, network has {net.n_sites}")
    try:
        total = H.constant + sum(term_energy(net, i, j, b) for i, j, b in H.nonzero_terms())
    except CapExceeded:
        if net.n_sites > STATE_CAP:
            raise
        return state_energy(net, H)
    total = complex(total)
    if abs(total.imag) > 1e-10 * max(1.0, abs(total.real)):
        raise ArithmeticError(f"energy has imaginary part {total.imag:.3e}")
    return float(total.real)


def state_energy(net: TensorNetwork, H: TwoSiteHamiltonian) -> float:
    """Energy from the dense state vector (the oracle route)."""
    return _state_energy(to_state_vector(net), H)[0]


# ---------------------------------------------------------- block environment
def block_boundary(net: TensorNetwork, block) -> tuple[list[int], list[int]]:
    """External in and out edges of a set of tensors, in a fixed order."""
    block = list(block)
    bset = set(block)
    ins, outs = [], []
    for n in block:
        node = net.nodes[n]
        ins += [e for e in node.ins if net.edges[e].src not in bset]
        outs += [e for e in node.outs if net.edges[e].dst not in bset]
    return ins, outs


def block_environment(net: TensorNetwork, block, H: TwoSiteHamiltonian, ins=None, outs=None,
                      cap: int = STATE_CAP) -> np.ndarray:
    """Effective Hamiltonian ``M`` of a block of tensors treated as one merged tensor.

    With the block replaced by a tensor ``theta`` of layout ``(ins..., outs...)``
    the energy is ``vdot(theta, M @ theta)`` (flattened row-major), for every
    theta that keeps the block isometric from its out legs to its in legs.
    """
    _check_cap(net, cap)
    bset = set(block)
    if ins is None or outs is None:
        ins, outs = block_boundary(net, block)
    # contracted graph: the block is a single pseudo-node
    pseudo = min(bset)
    order = _order_with_block(net, bset, ins, outs)
    dims_in, dims_out = CHI ** len(ins), CHI ** len(outs)
    nb = dims_in * dims_out
    basis = np.eye(nb, dtype=complex).reshape((nb,) + (CHI,) * (len(ins) + len(outs)))
    fr = _Frontier(np.ones((), dtype=complex), [])
    for i in order:
        if i == pseudo:
            pos = [fr.axes.index(e) for e in outs]
            data = np.tensordot(fr.data, basis, axes=(pos, list(range(1 + len(ins), 1 + len(ins) + len(outs)))))
            fr = _Frontier(data, [a for a in fr.axes if a not in outs] + ["batch"] + list(ins))
        else:
            node = net.nodes[i]
            fr = fr.apply(node.tensor, node.ins, node.outs)
    psi_b = _sites_order(net, fr, lead=["batch"]).reshape(nb, -1)
    hpsi = (H.matrix @ psi_b.T).T
    return psi_b.conj() @ hpsi.T


def _order_with_block(net: TensorNetwork, bset: set, ins, outs) -> list[int]:
    pseudo = min(bset)
    rep = {i: (pseudo if i in bset else i) for i in net.tensor_ids()}
    rep.update({i: i for i in net.leaves})
    nodes = set(rep[i] for i in net.tensor_ids())
    consumers: dict[int, set] = {n: set() for n in nodes}
    producers: dict[int, set] = {n: set() for n in nodes}
    for e, edge in net.edges.items():
        a, b = rep[edge.src], rep[edge.dst]
        if a == b or net.is_site(edge.src):
            continue
        consumers[a].add(b)
        producers[b].add(a)
    waiting = {n: len(consumers[n]) for n in nodes}
    queue = sorted(n for n, k in waiting.items() if k == 0)
    order = []
    while queue:
        n = queue.pop(0)
        order.append(n)
        released = []
        for m in producers[n]:
            waiting[m] -= 1
            if waiting[m] == 0:
                released.append(m)
        queue.extend(sorted(released))
    if len(order) != len(nodes):
        raise StructureError("block cannot be merged without creating a directed cycle")
    return order
