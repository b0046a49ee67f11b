"""ER-SDRG initial networks for random XY chains.

Each decimation of the strongest bond (i, i+1) with neighbors a and b adds
a disentangler on (a, i), one on (i+1, b), a third one bridging the two
outer outputs, and a top tensor closing i and i+1.  The neighbors then
interact through ``J_left * J_right / J_mid``.  The last two effective
sites are closed by a bare top tensor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .builders import NetworkBuilder, randomize
from .models import DisorderInstance
from .network import T, U, TensorNetwork

log = logging.getLogger(__name__)


def effective_coupling(j_left: float, j_mid: float, j_right: float) -> float:
    if j_mid == 0:
        raise ZeroDivisionError("decimated coupling must be nonzero")
    return j_left * j_right / j_mid


@dataclass(frozen=True)
class SdrgEvent:
    bond: int                  # index in the current effective chain
    pair: tuple                # original labels of the two decimated sites
    coupling: float
    neighbors: tuple | None    # labels of the sites that become coupled
    effective: float | None
    tie: bool = False

    def to_record(self) -> dict:
        return {"bond": self.bond, "pair": list(self.pair), "coupling": self.coupling,
                "neighbors": None if self.neighbors is None else list(self.neighbors),
                "effective": self.effective, "tie": self.tie}


@dataclass
class SdrgTrace:
    events: list = field(default_factory=list)
    net: TensorNetwork | None = None

    def records(self) -> list[dict]:
        return [e.to_record() for e in self.events]


def build_er_sdrg(instance: DisorderInstance, rng: np.random.Generator | None = None):
    """Network and decimation history for ``instance``; Haar-random tensors if ``rng`` is given."""
    n = instance.n_sites
    couplings = [float(j) for j in instance.couplings]
    if n < 2 or n % 2:
        raise ValueError("ER-SDRG needs an even number of sites >= 2")
    if len(couplings) != n:
        raise ValueError("need one coupling per periodic bond")
    if min(couplings) <= 0:
        raise ValueError("ER-SDRG needs strictly positive couplings")
    b = NetworkBuilder(n)
    legs = [b.site(s) for s in range(n)]
    labels = list(range(n))
    trace = SdrgTrace()
    while len(legs) > 2:
        m = len(legs)
        k = int(np.argmax(couplings))
        tie = couplings.count(couplings[k]) > 1
        if tie:
            log.info("tie for the strongest bond; taking index %d", k)
        i, j, a, c = k, (k + 1) % m, (k - 1) % m, (k + 2) % m
        j_new = effective_coupling(couplings[a], couplings[k], couplings[j])
        la, li = b.add(U, [legs[a], legs[i]])
        rj, rc = b.add(U, [legs[j], legs[c]])
        b.add(T, [li, rj])
        na, nc = b.add(U, [la, rc])
        trace.events.append(SdrgEvent(k, (labels[i], labels[j]), couplings[k], (labels[a], labels[c]),
                                      j_new, tie))
        legs[a], legs[c] = na, nc
        # bond a-c replaces bonds a-i, i-j, j-c; drop sites i and j
        couplings[a] = j_new
        keep = [s for s in range(m) if s not in (i, j)]
        legs = [legs[s] for s in keep]
        labels = [labels[s] for s in keep]
        couplings = [couplings[s] for s in keep]
    k = int(np.argmax(couplings))
    b.add(T, legs)
    trace.events.append(SdrgEvent(k, tuple(labels), couplings[k], None, None, couplings.count(couplings[k]) > 1))
    net = b.build()
    if rng is not None:
        net = randomize(net, rng)
    trace.net = net
    return net, trace
