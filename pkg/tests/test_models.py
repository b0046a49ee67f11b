import math

import numpy as np
import pytest
import scipy.sparse as sp

from tnstruct.models import (HEISENBERG, SZ, XY, CapExceeded, DisorderInstance, TwoSiteHamiltonian,
                             block_entropy, build_random_xy, build_tetramer, decrease_ratio, entanglement_profile,
                             exact_ground, heisenberg_ring, infidelity_per_site, lanczos, relative_error,
                             tetramer_site, xy_hamiltonian)


def _kron_dense(H: TwoSiteHamiltonian) -> np.ndarray:
    """Independent dense assembly by Kronecker products."""
    n = H.n_sites
    out = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for i, j, block in H.terms:
        # bring (i, j) next to each other via a permutation of the tensor factors
        op = np.kron(block, np.eye(2 ** (n - 2)))
        order = [i, j] + [k for k in range(n) if k not in (i, j)]
        op = op.reshape((2,) * (2 * n))
        inv = np.argsort(order)
        op = op.transpose(list(inv) + [n + k for k in inv])
        out += op.reshape(2 ** n, 2 ** n)
    return out + H.constant * np.eye(2 ** n)


class TestHamiltonian:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            TwoSiteHamiltonian(2, ((0, 1, np.triu(np.ones((4, 4)))),))

    def test_rejects_unordered(self):
        with pytest.raises(ValueError):
            TwoSiteHamiltonian(3, ((2, 1, XY),))

    @pytest.mark.parametrize("seed", [0, 1])
    def test_sparse_matches_kron(self, seed):
        H, _ = build_random_xy(6, seed)
        assert np.allclose(H.matrix.toarray(), _kron_dense(H), atol=1e-14)
        T = build_tetramer(2, 1.0, 0.3)
        assert np.allclose(T.matrix.toarray(), _kron_dense(T), atol=1e-14)

    def test_hermitian(self):
        m = build_tetramer(2, 1.0, 0.7).matrix
        assert abs(m - m.conj().T).max() <= 1e-12

    def test_xy_conserves_magnetization(self):
        H, _ = build_random_xy(8, 4)
        sz = sum(sp.kron(sp.kron(sp.identity(2 ** k), SZ), sp.identity(2 ** (7 - k))) for k in range(8))
        comm = H.matrix @ sz - sz @ H.matrix
        assert abs(comm).max() <= 1e-10

    def test_content_hash(self):
        a, _ = build_random_xy(8, 1)
        b, _ = build_random_xy(8, 1)
        c, _ = build_random_xy(8, 2)
        assert a.content_hash() == b.content_hash() != c.content_hash()


class TestBuilders:
    def test_tetramer_terms(self):
        H = build_tetramer(4, 1.0, 0.0)
        assert H.n_sites == 16
        assert len(H.terms) == 16 + 64
        assert len(H.nonzero_terms()) == 16

    def test_tetramer_inter_diagonal(self):
        Jp = 0.37
        H = build_tetramer(2, 1.0, Jp)
        inter = [b for i, j, b in H.terms if i // 4 != j // 4]
        assert all(b[0, 0].real == pytest.approx(Jp / 4) for b in inter)

    def test_tetramer_site_order(self):
        assert tetramer_site(2, 3) == 11

    def test_tetramer_needs_two(self):
        with pytest.raises(ValueError):
            build_tetramer(1, 1.0, 0.0)

    def test_random_xy_seeded(self):
        _, a = build_random_xy(8, 11)
        _, b = build_random_xy(8, 11)
        assert a == b
        assert all(0 <= j <= 1 for j in a.couplings)
        assert DisorderInstance.from_record(a.to_record()) == a

    def test_random_xy_zero_diagonal(self):
        H, _ = build_random_xy(8, 0)
        assert all(np.all(np.diag(b) == 0) for _, _, b in H.terms)

    def test_random_xy_odd_rejected(self):
        with pytest.raises(ValueError):
            build_random_xy(7, 0)


class TestOracle:
    def test_single_bond(self):
        H = TwoSiteHamiltonian(2, ((0, 1, XY),))
        assert exact_ground(H).energy == pytest.approx(-0.5, abs=1e-12)

    def test_two_site_ring(self):
        assert exact_ground(xy_hamiltonian([1.0, 1.0])).energy == pytest.approx(-1.0, abs=1e-12)

    def test_heisenberg_ring(self):
        assert exact_ground(heisenberg_ring(4)).energy == pytest.approx(-2.0, abs=1e-9)

    def test_decoupled_tetramers(self):
        gt = exact_ground(build_tetramer(4, 1.0, 0.0))
        assert gt.energy == pytest.approx(-8.0, abs=1e-9)
        assert gt.method == "lanczos"

    @pytest.mark.parametrize("seed", [0, 5])
    def test_lanczos_matches_dense(self, seed):
        H, _ = build_random_xy(10, seed)
        dense = exact_ground(H, dense_cap=10)
        krylov = exact_ground(H, dense_cap=0)
        assert krylov.energy == pytest.approx(dense.energy, abs=1e-9)
        assert krylov.residual <= 1e-8 * H.spectral_bound()

    def test_tetramer_transition(self):
        # singlet product at weak coupling; by J' = 0.741 a high-spin state with
        # E = 4 - 20 J' (S = 2 per tetramer, Neel order between tetramers) is lower
        weak = exact_ground(build_tetramer(4, 1.0, 0.55)).energy
        strong = exact_ground(build_tetramer(4, 1.0, 0.741)).energy
        assert weak == pytest.approx(-8.0, abs=1e-8)
        assert strong <= 4.0 - 20 * 0.741 + 1e-8
        assert strong < -8.0 - 1.0

    def test_cap(self):
        with pytest.raises(CapExceeded):
            exact_ground(TwoSiteHamiltonian(22, ()), cap=20)

    def test_lanczos_small_operator(self, rng):
        a = rng.standard_normal((30, 30))
        a = a + a.T
        e, v, res, _ = lanczos(lambda x: a @ x, 30, rng)
        assert e == pytest.approx(np.linalg.eigvalsh(a)[0], abs=1e-10)


class TestMetrics:
    def test_relative_error(self):
        assert relative_error(-8.0, -8.0) == 0
        assert relative_error(-7.9, -8.0) == pytest.approx(-0.0125)
        with pytest.raises(ZeroDivisionError):
            relative_error(1.0, 0.0)

    def test_infidelity(self, rng):
        psi = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        psi /= np.linalg.norm(psi)
        assert infidelity_per_site(psi, psi, 4) == pytest.approx(0, abs=1e-12)
        assert infidelity_per_site(np.exp(0.7j) * psi, psi, 4) == pytest.approx(0, abs=1e-12)
        e0, e1 = np.eye(16)[0].astype(complex), np.eye(16)[1].astype(complex)
        assert infidelity_per_site(e0, e1, 4) == 1.0
        with pytest.raises(ValueError):
            infidelity_per_site(psi, psi[:8], 4)

    def test_product_state_profile(self):
        psi = np.zeros(2 ** 6, dtype=complex)
        psi[0] = 1
        assert entanglement_profile(psi, 6) == [0.0] * 5

    def test_singlet(self):
        singlet = np.array([0, 1, -1, 0], dtype=complex) / math.sqrt(2)
        assert block_entropy(singlet, 2, [0]) == pytest.approx(1.0, abs=1e-12)

    def test_profile_symmetric(self):
        gt = exact_ground(build_random_xy(8, 3)[0])
        prof = entanglement_profile(gt.state, 8)
        for L in range(1, 8):
            assert abs(prof[L - 1] - prof[8 - L - 1]) < 1e-10

    def test_profile_cap(self):
        with pytest.raises(CapExceeded):
            entanglement_profile(np.zeros(2 ** 17), 17)

    def test_decrease_ratio(self):
        assert decrease_ratio(0.1, 0.1) == 0
        assert decrease_ratio(0.1, 0.0) == 100
        with pytest.raises(ZeroDivisionError):
            decrease_ratio(0.0, 0.1)
