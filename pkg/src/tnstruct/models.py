"""Spin-1/2 Hamiltonians, an exact-diagonalization oracle and accuracy metrics.

Sites are 0-based.  A two-site block acts on ``site i (x) site j`` with
``i < j`` and basis index ``2*s_i + s_j`` (0 = up).
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

SX = np.array([[0, 1], [1, 0]], dtype=complex) / 2
SY = np.array([[0, -1j], [1j, 0]], dtype=complex) / 2
SZ = np.array([[1, 0], [0, -1]], dtype=complex) / 2

HEISENBERG = (np.kron(SX, SX) + np.kron(SY, SY) + np.kron(SZ, SZ)).real.astype(complex)
XY = (np.kron(SX, SX) + np.kron(SY, SY)).real.astype(complex)

DENSE_CAP = 20


class CapExceeded(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TwoSiteHamiltonian:
    n_sites: int
    terms: tuple  # ((i, j, 4x4 block), ...)
    constant: float = 0.0

    def __post_init__(self):
        clean = []
        for i, j, block in self.terms:
            block = np.asarray(block, dtype=complex)
            if not 0 <= i < j < self.n_sites:
                raise ValueError(f"term ({i}, {j}) out of range or not ordered")
            if block.shape != (4, 4):
                raise ValueError("term blocks must be 4x4")
            if np.max(np.abs(block - block.conj().T)) > 1e-12:
                raise ValueError(f"term ({i}, {j}) is not Hermitian")
            block.setflags(write=False)
            clean.append((int(i), int(j), block))
        object.__setattr__(self, "terms", tuple(clean))

    def nonzero_terms(self):
        return [(i, j, b) for i, j, b in self.terms if np.any(b)]

    def shifted(self, gamma: float) -> TwoSiteHamiltonian:
        """``H - gamma * I``."""
        return TwoSiteHamiltonian(self.n_sites, self.terms, self.constant - gamma)

    def scaled(self, factor: float) -> TwoSiteHamiltonian:
        return TwoSiteHamiltonian(self.n_sites, tuple((i, j, factor * b) for i, j, b in self.terms),
                                  factor * self.constant)

    def subset(self, keep) -> TwoSiteHamiltonian:
        return TwoSiteHamiltonian(self.n_sites, tuple(t for k, t in enumerate(self.terms) if k in keep),
                                  self.constant)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.n_sites}:{self.constant!r}".encode())
        for i, j, b in self.terms:
            h.update(f"|{i},{j}|".encode())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Sparse ``2**N x 2**N`` matrix; site 0 is the most significant bit."""
        n = self.n_sites
        if n > DENSE_CAP:
            raise CapExceeded(f"{n} sites exceeds the dense cap of {DENSE_CAP}")
        dim = 2 ** n
        states = np.arange(dim, dtype=np.int64)
        total = sp.csr_matrix((dim, dim), dtype=complex)
        if self.constant:
            total = total + self.constant * sp.identity(dim, dtype=complex, format="csr")
        for i, j, block in self.nonzero_terms():
            bi = (states >> (n - 1 - i)) & 1
            bj = (states >> (n - 1 - j)) & 1
            col_local = 2 * bi + bj
            base = states - (bi << (n - 1 - i)) - (bj << (n - 1 - j))
            rows, cols, vals = [], [], []
            for new in range(4):
                amp = block[new, col_local]
                mask = amp != 0
                if not mask.any():
                    continue
                ni, nj = new >> 1, new & 1
                rows.append(base[mask] + (ni << (n - 1 - i)) + (nj << (n - 1 - j)))
                cols.append(states[mask])
                vals.append(amp[mask])
            if rows:
                total = total + sp.csr_matrix(
                    (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim))
        return total.tocsr()

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.matrix @ psi

    def spectral_bound(self) -> float:
        """Sum of the largest singular values of the blocks (bounds ``||H - constant||``)."""
        return float(sum(np.linalg.norm(b, 2) for _, _, b in self.terms))


@dataclass(frozen=True)
class DisorderInstance:
    n_sites: int
    couplings: tuple
    seed: int | None = None

    def to_record(self) -> dict:
        return {"n_sites": self.n_sites, "seed": self.seed, "couplings": list(self.couplings)}

    @classmethod
    def from_record(cls, rec: dict) -> DisorderInstance:
        return cls(int(rec["n_sites"]), tuple(float(x) for x in rec["couplings"]), rec.get("seed"))


def _bond(i: int, j: int, block: np.ndarray) -> tuple:
    return (i, j, block) if i < j else (j, i, _swap_sites(block))


def _swap_sites(block: np.ndarray) -> np.ndarray:
    return block.reshape(2, 2, 2, 2).transpose(1, 0, 3, 2).reshape(4, 4)


def tetramer_site(x: int, y: int) -> int:
    return 4 * x + y


def build_tetramer(L: int, J: float, Jp: float) -> TwoSiteHamiltonian:
    """Four-leg tetramer ladder on a torus; 4L intra-ring and 16L inter-tetramer bonds."""
    if L < 2:
        raise ValueError("tetramer model needs L >= 2")
    terms = []
    for x in range(L):
        for y in range(4):
            terms.append(_bond(tetramer_site(x, y), tetramer_site(x, (y + 1) % 4), J * HEISENBERG))
    for x in range(L):
        for y in range(4):
            for yp in range(4):
                terms.append(_bond(tetramer_site(x, y), tetramer_site((x + 1) % L, yp), Jp * HEISENBERG))
    return TwoSiteHamiltonian(4 * L, tuple(terms))


def xy_hamiltonian(couplings) -> TwoSiteHamiltonian:
    """Periodic XY chain; coupling k joins sites k and k+1 (mod N)."""
    n = len(couplings)
    return TwoSiteHamiltonian(n, tuple(_bond(k, (k + 1) % n, J * XY) for k, J in enumerate(couplings)))


def build_random_xy(n_sites: int, seed: int) -> tuple[TwoSiteHamiltonian, DisorderInstance]:
    if n_sites < 2 or n_sites % 2:
        raise ValueError("random XY chain needs an even number of sites >= 2")
    rng = np.random.default_rng(seed)
    couplings = tuple(float(x) for x in rng.uniform(0.0, 1.0, size=n_sites))
    inst = DisorderInstance(n_sites, couplings, seed)
    return xy_hamiltonian(couplings), inst


def heisenberg_ring(n_sites: int, J: float = 1.0) -> TwoSiteHamiltonian:
    return TwoSiteHamiltonian(n_sites, tuple(_bond(k, (k + 1) % n_sites, J * HEISENBERG)
                                             for k in range(n_sites)))


# --------------------------------------------------------------------- oracle
@dataclass
class GroundTruth:
    energy: float
    state: np.ndarray | None
    residual: float
    gap: float | None = None
    method: str = "lanczos"
    extra: dict = field(default_factory=dict)


def lanczos(matvec, dim: int, rng: np.random.Generator, krylov: int = 200, tol: float = 1e-12,
            max_restarts: int = 20, start: np.ndarray | None = None):
    """Lowest eigenpair by Lanczos with full reorthogonalization and explicit restarts.

    Returns ``(energy, vector, residual, second_ritz_value)``.
    """
    v = start if start is not None else rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    v = v / np.linalg.norm(v)
    krylov = min(krylov, dim)
    for _ in range(max_restarts + 1):
        basis = np.zeros((krylov, dim), dtype=complex)
        alpha, beta = [], []
        basis[0] = v
        m = krylov
        for k in range(krylov):
            w = matvec(basis[k])
            a = np.vdot(basis[k], w).real
            alpha.append(a)
            w = w - basis[: k + 1].T @ (basis[: k + 1].conj() @ w)
            w = w - basis[: k + 1].T @ (basis[: k + 1].conj() @ w)
            b = np.linalg.norm(w)
            if k + 1 == krylov or b < 1e-13:
                m = k + 1
                break
            beta.append(b)
            basis[k + 1] = w / b
        tri = np.diag(alpha) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
        evals, evecs = np.linalg.eigh(tri)
        v = evecs[:, 0] @ basis[:m]
        v = v / np.linalg.norm(v)
        hv = matvec(v)
        e = np.vdot(v, hv).real
        res = float(np.linalg.norm(hv - e * v))
        second = float(evals[1]) if m > 1 else None
        if res <= tol * max(1.0, abs(e)):
            return float(e), v, res, second
    raise ConvergenceError(f"Lanczos residual {res:.2e} after {max_restarts} restarts")


def exact_ground(H: TwoSiteHamiltonian, seed: int = 0, dense_cap: int = 10, krylov: int = 200,
                 max_restarts: int = 20, cap: int = DENSE_CAP) -> GroundTruth:
    """Ground state of ``H``: dense diagonalization up to ``dense_cap`` sites, Lanczos beyond."""
    if H.n_sites > cap:
        raise CapExceeded(f"{H.n_sites} sites exceeds the cap of {cap}")
    mat = H.matrix
    if H.n_sites <= dense_cap:
        evals, evecs = np.linalg.eigh(mat.toarray())
        psi = evecs[:, 0]
        res = float(np.linalg.norm(mat @ psi - evals[0] * psi))
        gap = float(evals[1] - evals[0]) if len(evals) > 1 else None
        return GroundTruth(float(evals[0]), psi, res, gap, "dense")
    rng = np.random.default_rng(seed)
    e, psi, res, second = lanczos(lambda x: mat @ x, mat.shape[0], rng, krylov=krylov,
                                  max_restarts=max_restarts)
    log.debug("lanczos converged: E=%.12f residual=%.2e", e, res)
    return GroundTruth(e, psi, res, None if second is None else second - e, "lanczos")


# -------------------------------------------------------------------- metrics
def relative_error(E: float, E_gs: float) -> float:
    if E_gs == 0:
        raise ZeroDivisionError("relative error undefined for zero ground energy")
    return (E - E_gs) / E_gs


def infidelity_per_site(psi: np.ndarray, psi_gs: np.ndarray, n_sites: int) -> float:
    if psi.shape != psi_gs.shape or psi.shape[0] != 2 ** n_sites:
        raise ValueError("state vectors must both have length 2**N")
    overlap = abs(np.vdot(psi, psi_gs))
    return float(1.0 - min(overlap, 1.0) ** (1.0 / n_sites))


def block_entropy(psi: np.ndarray, n_sites: int, block) -> float:
    """Von Neumann entropy (bits) of the reduced state on ``block``."""
    block = list(block)
    rest = [s for s in range(n_sites) if s not in block]
    t = psi.reshape((2,) * n_sites).transpose(block + rest).reshape(2 ** len(block), -1)
    s = np.linalg.svd(t, compute_uv=False)
    p = s ** 2
    p = p[p > 1e-300]
    return float(-(p * np.log2(p)).sum())


def entanglement_profile(psi: np.ndarray, n_sites: int, cap: int = 16) -> list[float]:
    """Average entropy of contiguous periodic blocks of length L = 1..N-1."""
    if n_sites > cap:
        raise CapExceeded(f"{n_sites} sites exceeds the entanglement cap of {cap}")
    prof = []
    for L in range(1, n_sites):
        vals = [block_entropy(psi, n_sites, [(s + k) % n_sites for k in range(L)]) for s in range(n_sites)]
        prof.append(float(np.mean(vals)))
    return prof


def decrease_ratio(before: float, after: float) -> float:
    if before == 0:
        raise ZeroDivisionError("decrease ratio undefined for zero initial error")
    return (1.0 - after / before) * 100.0
