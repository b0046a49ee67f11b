"""Variational updates of isometric tensors.

Every tensor is handled as a matrix with orthonormal columns (rows = in
legs, columns = out legs), i.e. a point on a complex Stiefel manifold.
Gradients are Euclidean gradients ``G = 2 dE/dT*``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .contraction import energy_and_gradients
from .models import TwoSiteHamiltonian
from .network import CHI, TensorNetwork
from .tensor import DenseTensor, MatrixView, polar

log = logging.getLogger(__name__)

FALLBACK_RATES = (1e-3, 1e-5)


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Schedule:
    n_iter: int
    eta_init: float = 0.1
    eta_end: float = 1e-4
    delta: float = 0.0

    def __post_init__(self):
        if self.n_iter < 0:
            raise ValueError("n_iter must be >= 0")
        if not self.eta_init >= self.eta_end > 0:
            raise ValueError("need eta_init >= eta_end > 0")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")

    def eta(self, l: int) -> float:
        """Learning rate at iteration ``l`` (1-based), linear from eta_init to eta_end."""
        if self.n_iter <= 1:
            return self.eta_init
        return self.eta_init - (l - 1) * (self.eta_init - self.eta_end) / (self.n_iter - 1)

    def referenced(self, E: float, E_ref: float | None) -> Schedule:
        """Rates rescaled by the distance to a reference energy."""
        if E_ref is None:
            return self
        gap = E - E_ref
        lo_hi = (gap * 1e-1, gap * 1e-4) if gap > 0 and gap * 1e-4 > 0 else FALLBACK_RATES
        return Schedule(self.n_iter, lo_hi[0], lo_hi[1], self.delta)


# --------------------------------------------------------------- manifold ops
def herm(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def project_tangent(x: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Tangent component ``d - x herm(x^dag d)`` at the Stiefel point ``x``."""
    return d - x @ herm(x.conj().T @ d)


def retract(x: np.ndarray) -> np.ndarray:
    return polar(x)


def riemannian_grad(v: DenseTensor, D: DenseTensor, view: MatrixView) -> DenseTensor:
    if v.dims != D.transpose(v.legs).dims:
        raise ValueError("gradient and tensor shapes differ")
    x = v.matrix(view)
    d = D.matrix(view)
    dims = dict(zip(v.legs, v.dims))
    return DenseTensor.from_matrix(project_tangent(x, d), view, dims)


# ----------------------------------------------------------------------- Adam
@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict, grads: dict, eta: float) -> dict:
        """One Riemannian Adam step on every matrix in ``params``."""
        self.step += 1
        t = self.step
        out = {}
        for k, x in params.items():
            xi = project_tangent(x, grads[k])
            m = self.m.get(k, 0.0) * self.beta1 + (1 - self.beta1) * xi
            s = self.v.get(k, 0.0) * self.beta2 + (1 - self.beta2) * (xi.real ** 2 + xi.imag ** 2)
            self.m[k], self.v[k] = m, s
            if eta == 0:
                out[k] = x
                continue
            mhat = m / (1 - self.beta1 ** t)
            shat = s / (1 - self.beta2 ** t)
            direction = project_tangent(x, mhat / (np.sqrt(shat) + self.eps))
            out[k] = retract(x - eta * direction)
        return out


@dataclass
class Trace:
    energies: list = field(default_factory=list)
    etas: list = field(default_factory=list)
    stop_reason: str = "exhausted"
    initial_energy: float = math.nan
    final_energy: float = math.nan
    best_energy: float = math.nan

    def rows(self):
        last = len(self.energies)
        for l, (E, eta) in enumerate(zip(self.energies, self.etas), start=1):
            yield l, E, eta, (self.stop_reason if l == last else "")


Objective = Callable[[dict], tuple]


def minimize(objective: Objective, params: dict, schedule: Schedule, E_ref: float | None = None,
             state: AdamState | None = None):
    """Riemannian Adam with the linear learning-rate ramp and the |dE| < delta stop rule.

    ``objective(params) -> (E, grads)``; params are Stiefel matrices.
    Returns ``(best params, Trace)``.
    """
    state = state or AdamState()
    E, grads = objective(params)
    _check_finite(E, grads)
    sched = schedule.referenced(E, E_ref)
    trace = Trace(initial_energy=E)
    best_E, best = E, params
    for l in range(1, sched.n_iter + 1):
        eta = sched.eta(l)
        trace.energies.append(E)
        trace.etas.append(eta)
        if l >= 2 and abs(trace.energies[-1] - trace.energies[-2]) < sched.delta:
            trace.stop_reason = "converged"
            break
        params = state.update(params, grads, eta)
        E, grads = objective(params)
        _check_finite(E, grads)
        if E < best_E:
            best_E, best = E, params
    trace.final_energy = E
    trace.best_energy = best_E
    return best, trace


def _check_finite(E, grads):
    if not np.isfinite(E) or any(not np.all(np.isfinite(g)) for g in grads.values()):
        raise NumericalError("non-finite energy or gradient")


# ----------------------------------------------------------- network drivers
def _as_matrix(net: TensorNetwork, i: int, t: np.ndarray) -> np.ndarray:
    node = net.nodes[i]
    return t.reshape(CHI ** len(node.ins), CHI ** len(node.outs))


def network_objective(net: TensorNetwork, H: TwoSiteHamiltonian) -> Objective:
    def objective(params):
        trial = net.with_tensors(params)
        E, grads = energy_and_gradients(trial, H, params.keys())
        return E, {i: _as_matrix(net, i, g) for i, g in grads.items()}
    return objective


def adam_step(net: TensorNetwork, H: TwoSiteHamiltonian, state: AdamState, eta: float, targets=None):
    targets = net.tensor_ids() if targets is None else list(targets)
    params = {i: net.nodes[i].matrix() for i in targets}
    _, grads = network_objective(net, H)(params)
    _check_finite(0.0, grads)
    new = state.update(params, grads, eta)
    if eta == 0:
        return net, state
    return net.with_tensors(new), state


def optimize(net: TensorNetwork, H: TwoSiteHamiltonian, schedule: Schedule, targets=None,
             E_ref: float | None = None):
    """Fixed-structure optimization of ``targets`` (default: every tensor)."""
    targets = net.tensor_ids() if targets is None else list(targets)
    if not targets:
        raise ValueError("nothing to optimize")
    params = {i: net.nodes[i].matrix() for i in targets}
    best, trace = minimize(network_objective(net, H), params, schedule, E_ref)
    return net.with_tensors(best), trace


def ev_polar(env: np.ndarray) -> np.ndarray:
    """Minimizer of ``Re sum(env * X)`` over isometries X, in matrix form."""
    return -polar(env.conj())


def ev_minimize(objective: Objective, params: dict, schedule: Schedule, shift: float = 0.0):
    """Alternating single-tensor SVD updates on a negative-definite (shifted) objective.

    Reported energies have ``shift`` added back.  Rates in ``schedule`` are unused.
    """
    params = dict(params)
    E, grads = objective(params)
    _check_finite(E, grads)
    trace = Trace(initial_energy=E + shift)
    best_E, best = E, dict(params)
    for l in range(1, schedule.n_iter + 1):
        trace.energies.append(E + shift)
        trace.etas.append(0.0)
        if l >= 2 and abs(trace.energies[-1] - trace.energies[-2]) < schedule.delta:
            trace.stop_reason = "converged"
            break
        for k in params:
            params[k] = ev_polar(0.5 * grads[k].conj())
            E, grads = objective(params)
            _check_finite(E, grads)
        if E < best_E:
            best_E, best = E, dict(params)
    trace.final_energy = E + shift
    trace.best_energy = best_E + shift
    return best, trace


def default_gamma(H: TwoSiteHamiltonian) -> float:
    return H.spectral_bound() + H.constant + 1.0


def ev_update(net: TensorNetwork, node_id: int, H: TwoSiteHamiltonian, gamma: float | None = None):
    """Single-tensor SVD update on the shifted Hamiltonian ``H - gamma I``."""
    gamma = default_gamma(H) if gamma is None else gamma
    _, grads = energy_and_gradients(net, H.shifted(gamma), [node_id])
    env = 0.5 * _as_matrix(net, node_id, grads[node_id]).conj()
    if np.linalg.norm(env) < 1e-300:
        log.warning("environment of node %s vanishes; leaving it unchanged", node_id)
        return net
    return net.with_tensors({node_id: ev_polar(env)})
