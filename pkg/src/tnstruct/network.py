"""Isometric tensor-network graphs.

A network is a directed acyclic graph.  Every edge points along the
renormalization direction: from the node whose *out* leg it is (lower,
closer to the physical spins) to the node whose *in* leg it is (upper,
closer to a top tensor).  Sites are leaves with a single out leg.

Tensor layout for every non-site node is ``(in..., out...)`` with all legs
of dimension ``CHI``; reshaped to a ``(2**n_in, 2**n_out)`` matrix it has
orthonormal columns (the isometric condition).
"""
from __future__ import annotations

import base64
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .tensor import DenseTensor, MatrixView, isometry_deviation

CHI = 2
SCHEMA_VERSION = 1


class NodeKind(str, Enum):
    DISENTANGLER = "u"
    ISOMETRY = "v"
    TOP = "t"
    SITE = "site"

    @property
    def n_in(self) -> int:
        return 0 if self is NodeKind.SITE else 2

    @property
    def n_out(self) -> int:
        return {"u": 2, "v": 1, "t": 0, "site": 1}[self.value]

    @property
    def stiefel_dim(self) -> int:
        """Real dimension ``2np - p^2`` of the complex Stiefel manifold St(n, p)."""
        if self is NodeKind.SITE:
            raise ValueError("sites carry no tensor")
        n, p = CHI ** self.n_in, CHI ** self.n_out
        return 2 * n * p - p * p


U, V, T, SITE = NodeKind.DISENTANGLER, NodeKind.ISOMETRY, NodeKind.TOP, NodeKind.SITE


class StructureError(ValueError):
    """The graph itself is malformed (arity, dangling legs, cycles)."""


class SerializationError(ValueError):
    pass


@dataclass
class Node:
    kind: NodeKind
    ins: list[int]
    outs: list[int]
    tensor: np.ndarray | None = None
    site: int | None = None

    def matrix(self) -> np.ndarray:
        return self.tensor.reshape(CHI ** len(self.ins), CHI ** len(self.outs))

    def dense(self, node_id: int) -> DenseTensor:
        legs = [("in", node_id, k) for k in range(len(self.ins))] + \
               [("out", node_id, k) for k in range(len(self.outs))]
        return DenseTensor(self.tensor, legs)

    def view(self, node_id: int) -> MatrixView:
        legs = self.dense(node_id).legs
        return MatrixView(legs[:len(self.ins)], legs[len(self.ins):])


@dataclass(frozen=True)
class Edge:
    src: int       # node whose out leg this is
    src_slot: int
    dst: int       # node whose in leg this is
    dst_slot: int

    @property
    def ends(self) -> tuple[int, int]:
        return (self.src, self.dst)


def identity_tensor(kind: NodeKind) -> np.ndarray:
    """The fixed starting matrices used when a pair is re-initialized."""
    m = np.eye(CHI ** kind.n_in, CHI ** kind.n_out, dtype=complex)
    return m.reshape((CHI,) * (kind.n_in + kind.n_out))


@dataclass
class TensorNetwork:
    nodes: dict[int, Node]
    edges: dict[int, Edge]
    leaves: list[int]
    flags: dict[int, int] = field(default_factory=dict)

    # ------------------------------------------------------------------ basics
    @property
    def n_sites(self) -> int:
        return len(self.leaves)

    def copy(self) -> TensorNetwork:
        nodes = {i: Node(n.kind, list(n.ins), list(n.outs), n.tensor, n.site)
                 for i, n in self.nodes.items()}
        return TensorNetwork(nodes, dict(self.edges), list(self.leaves), dict(self.flags))

    def tensor_ids(self) -> list[int]:
        return [i for i, n in self.nodes.items() if n.kind is not SITE]

    def tops(self) -> list[int]:
        return [i for i, n in self.nodes.items() if n.kind is T]

    def kind_counts(self) -> dict[str, int]:
        counts = {"u": 0, "v": 0, "t": 0}
        for i in self.tensor_ids():
            counts[self.nodes[i].kind.value] += 1
        return counts

    def site_edge(self, site: int) -> int:
        return self.nodes[self.leaves[site]].outs[0]

    def is_site(self, node_id: int) -> bool:
        return self.nodes[node_id].kind is SITE

    def with_tensors(self, tensors: dict[int, np.ndarray]) -> TensorNetwork:
        net = self.copy()
        for i, t in tensors.items():
            node = net.nodes[i]
            t = np.asarray(t, dtype=complex).reshape((CHI,) * (len(node.ins) + len(node.outs)))
            node.tensor = t
        return net

    def tensors(self) -> dict[int, np.ndarray]:
        return {i: self.nodes[i].tensor for i in self.tensor_ids()}

    def neighbors(self, node_id: int) -> list[int]:
        n = self.nodes[node_id]
        return [self.edges[e].src for e in n.ins] + [self.edges[e].dst for e in n.outs]

    def edges_between(self, a: int, b: int) -> list[int]:
        n = self.nodes[a]
        return [e for e in n.ins + n.outs if set(self.edges[e].ends) == {a, b}]

    # ---------------------------------------------------------------- ordering
    def generation_order(self, nodes=None) -> list[int]:
        """Tensor nodes ordered top-down: a node comes after every node consuming its outputs."""
        pool = set(self.tensor_ids() if nodes is None else nodes)
        waiting = {i: sum(1 for e in self.nodes[i].outs if self.edges[e].dst in pool) for i in pool}
        ready = sorted(i for i, k in waiting.items() if k == 0)
        order = []
        queue = deque(ready)
        while queue:
            i = queue.popleft()
            order.append(i)
            released = []
            for e in self.nodes[i].ins:
                j = self.edges[e].src
                if j in pool:
                    waiting[j] -= 1
                    if waiting[j] == 0:
                        released.append(j)
            queue.extend(sorted(released))
        if len(order) != len(pool):
            raise StructureError("network contains a directed cycle")
        return order

    def upward_closure(self, starts) -> set[int]:
        """All tensor nodes reachable from ``starts`` by following out legs."""
        seen = set()
        stack = list(starts)
        while stack:
            i = stack.pop()
            for e in self.nodes[i].outs:
                j = self.edges[e].dst
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return seen

    # ------------------------------------------------------------- validation
    def check_structure(self):
        if not self.leaves:
            raise StructureError("network has no sites")
        site_nodes = sorted(i for i, n in self.nodes.items() if n.kind is SITE)
        if sorted(self.leaves) != site_nodes:
            raise StructureError("leaves must list every site node exactly once")
        for k, leaf in enumerate(self.leaves):
            if self.nodes[leaf].site != k:
                raise StructureError(f"leaf {leaf} is not labelled as site {k}")
        for i, n in self.nodes.items():
            if len(n.ins) != n.kind.n_in or len(n.outs) != n.kind.n_out:
                raise StructureError(f"node {i} ({n.kind.value}) has wrong arity")
            for slot, e in enumerate(n.outs):
                if e not in self.edges:
                    raise StructureError(f"out leg {slot} of node {i} is dangling")
                if (self.edges[e].src, self.edges[e].src_slot) != (i, slot):
                    raise StructureError(f"edge {e} disagrees with node {i}")
            for slot, e in enumerate(n.ins):
                if e not in self.edges:
                    raise StructureError(f"in leg {slot} of node {i} is dangling")
                if (self.edges[e].dst, self.edges[e].dst_slot) != (i, slot):
                    raise StructureError(f"edge {e} disagrees with node {i}")
            if n.kind is not SITE:
                shape = (CHI,) * (n.kind.n_in + n.kind.n_out)
                if n.tensor is None or n.tensor.shape != shape:
                    raise StructureError(f"node {i} tensor must have shape {shape}")
        for e, edge in self.edges.items():
            if edge.src not in self.nodes or edge.dst not in self.nodes:
                raise StructureError(f"edge {e} references a missing node")
            if self.nodes[edge.dst].kind is SITE:
                raise StructureError(f"edge {e} feeds into a site")
        self.generation_order()
        unreached = set(self.nodes) - self._reachable_from_tops()
        if unreached:
            raise StructureError(f"nodes {sorted(unreached)} are not connected to any top tensor")

    def _reachable_from_tops(self) -> set[int]:
        seen = set(self.tops())
        stack = list(seen)
        while stack:
            i = stack.pop()
            for j in self.neighbors(i):
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return seen

    # ---------------------------------------------------------- edge metadata
    def node_depths(self) -> dict[int, int]:
        """Breadth-first distance from the nearest top, counting tensors (top = 1)."""
        depth = {i: 1 for i in self.tops()}
        queue = deque(sorted(depth))
        while queue:
            i = queue.popleft()
            for j in self.neighbors(i):
                if j not in depth and not self.is_site(j):
                    depth[j] = depth[i] + 1
                    queue.append(j)
        return depth

    def distances(self) -> dict[int, int]:
        depth = self.node_depths()
        out = {}
        for e, edge in self.edges.items():
            ds = [depth[k] for k in edge.ends if k in depth]
            if not ds:
                raise StructureError(f"edge {e} is disconnected from every top tensor")
            out[e] = min(ds)
        return out


@dataclass
class ValidationReport:
    deviations: dict[int, float]
    tol: float
    norm_deviation: float | None

    @property
    def failing(self) -> list[int]:
        return sorted(i for i, d in self.deviations.items() if d > self.tol)

    @property
    def max_deviation(self) -> float:
        return max(self.deviations.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return not self.failing and (self.norm_deviation is None or self.norm_deviation <= 1e-10)


def node_deviation(node: Node) -> float:
    m = node.matrix()
    dev = isometry_deviation(m)
    if m.shape[0] == m.shape[1]:
        dev = max(dev, isometry_deviation(m.conj().T))
    return dev


def validate(net: TensorNetwork, tol: float = 1e-10, norm_cap: int = 20) -> ValidationReport:
    """Check structure (raising :class:`StructureError`) and the isometric conditions.

    The state norm is recomputed from the dense state vector when the
    network has at most ``norm_cap`` sites.
    """
    net.check_structure()
    deviations = {i: node_deviation(net.nodes[i]) for i in net.tensor_ids()}
    norm_dev = None
    if net.n_sites <= norm_cap:
        from .contraction import to_state_vector
        psi = to_state_vector(net, cap=norm_cap)
        norm_dev = abs(float(np.vdot(psi, psi).real) - 1.0)
    return ValidationReport(deviations, tol, norm_dev)


def dof_count(net: TensorNetwork) -> int:
    return sum(net.nodes[i].kind.stiefel_dim for i in net.tensor_ids())


def parallel_edges(net: TensorNetwork) -> set[int]:
    seen: dict[frozenset, list[int]] = {}
    for e, edge in net.edges.items():
        seen.setdefault(frozenset(edge.ends), []).append(e)
    return {e for es in seen.values() if len(es) > 1 for e in es}


def detour_edges(net: TensorNetwork) -> set[int]:
    """Edges whose two tensors are also joined by a directed path through other tensors.

    Such a pair cannot be treated as one local block: merging it would
    create a directed cycle.
    """
    out = set()
    for e, edge in net.edges.items():
        lower, upper = edge.ends
        if net.is_site(lower):
            continue
        starts = [net.edges[f].dst for f in net.nodes[lower].outs if f != e]
        reach = set(starts) | net.upward_closure(starts)
        if upper in reach:
            out.add(e)
    return out


def excluded_edges(net: TensorNetwork) -> set[int]:
    site_edges = {e for e, edge in net.edges.items() if net.is_site(edge.src)}
    return site_edges | parallel_edges(net) | detour_edges(net)


def edge_metadata(net: TensorNetwork) -> tuple[dict[int, int], dict[int, int]]:
    """Distances ``d_p`` and the initial flags ``f_p`` of a fresh sweep."""
    net.check_structure()
    dist = net.distances()
    excluded = excluded_edges(net)
    flags = {e: int(e in excluded) for e in net.edges}
    return dist, flags


# ------------------------------------------------------------ serialization
def _encode_tensor(t: np.ndarray) -> list[float]:
    flat = np.ascontiguousarray(t, dtype=complex).reshape(-1)
    return [float(x) for x in flat.view(np.float64)]


def _decode_tensor(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).view(complex)
    return arr.reshape(shape)


def _payload(net: TensorNetwork) -> dict:
    nodes = []
    for i in sorted(net.nodes):
        n = net.nodes[i]
        rec = {"id": i, "kind": n.kind.value, "ins": n.ins, "outs": n.outs}
        if n.kind is SITE:
            rec["site"] = n.site
        else:
            rec["shape"] = list(n.tensor.shape)
            rec["elements"] = _encode_tensor(n.tensor)
        nodes.append(rec)
    edges = [{"id": e, "src": ed.src, "src_slot": ed.src_slot, "dst": ed.dst, "dst_slot": ed.dst_slot}
             for e, ed in sorted(net.edges.items())]
    return {"nodes": nodes, "edges": edges, "leaves": net.leaves,
            "flags": {str(e): f for e, f in sorted(net.flags.items())}}


def _digest(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def serialize(net: TensorNetwork) -> bytes:
    payload = _payload(net)
    doc = {"schema": "tnstruct.network", "version": SCHEMA_VERSION,
           "checksum": _digest(payload), "network": payload}
    return (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode()


def deserialize(data: bytes | str) -> TensorNetwork:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SerializationError(f"not a network document: {exc}") from exc
    if doc.get("schema") != "tnstruct.network":
        raise SerializationError("not a network document")
    if doc.get("version") != SCHEMA_VERSION:
        raise SerializationError(f"schema version {doc.get('version')} != {SCHEMA_VERSION}")
    payload = doc["network"]
    if _digest(payload) != doc.get("checksum"):
        raise SerializationError("checksum mismatch")
    nodes = {}
    for rec in payload["nodes"]:
        kind = NodeKind(rec["kind"])
        tensor = None
        if kind is not SITE:
            tensor = _decode_tensor(rec["elements"], rec["shape"])
        nodes[rec["id"]] = Node(kind, list(rec["ins"]), list(rec["outs"]), tensor, rec.get("site"))
    edges = {r["id"]: Edge(r["src"], r["src_slot"], r["dst"], r["dst_slot"]) for r in payload["edges"]}
    flags = {int(e): f for e, f in payload["flags"].items()}
    return TensorNetwork(nodes, edges, list(payload["leaves"]), flags)


def fingerprint(net: TensorNetwork) -> str:
    """Short content hash of a network (structure and tensor elements)."""
    return base64.b32encode(bytes.fromhex(_digest(_payload(net)))[:10]).decode().lower()
