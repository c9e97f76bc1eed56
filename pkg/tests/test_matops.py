import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lqrpi import matops
from lqrpi.matops import ConvergenceError, MatrixError

from conftest import random_stabilizable

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)


def square(max_n=8):
    return st.integers(1, max_n).flatmap(lambda n: arrays(float, (n, n), elements=finite))


def _match(ours, ref):
    """Greedy nearest matching; returns the worst relative distance."""
    ref = list(ref)
    worst = 0.0
    scale = max(1.0, max(abs(z) for z in ref))
    for z in ours:
        j = int(np.argmin([abs(z - w) for w in ref]))
        worst = max(worst, abs(z - ref[j]) / scale)
        ref.pop(j)
    return worst


class TestEigenvalues:
    def test_diagonal(self):
        ev = matops.eigenvalues(np.diag([3.0, -1.0, 2.0]))
        assert sorted(ev.real) == pytest.approx([-1.0, 2.0, 3.0])

    def test_rotation_pair(self):
        ev = matops.eigenvalues(np.array([[0.0, 1.0], [-1.0, 0.0]]))
        assert sorted(ev.imag) == pytest.approx([-1.0, 1.0])
        assert np.allclose(ev.real, 0.0)

    def test_filter_inductor_pair(self):
        a = np.array([[-100.0, 314.0], [-314.0, -100.0]])
        ev = matops.eigenvalues(a)
        assert _match(ev, [-100 + 314j, -100 - 314j]) < 1e-12

    @given(square())
    def test_backward_error(self, m):
        ours = matops.eigenvalues(m)
        assert len(ours) == m.shape[0]
        scale = max(np.linalg.norm(m, 2), np.finfo(float).tiny)
        for lam in ours:
            smin = np.linalg.svd(m - lam * np.eye(m.shape[0]), compute_uv=False)[-1]
            assert smin <= 1e-10 * scale

    @pytest.mark.parametrize("seed", range(25))
    def test_against_numpy(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 17))
        m = rng.normal(size=(n, n)) * 10.0 ** rng.uniform(0, 3)
        assert _match(matops.eigenvalues(m), np.linalg.eigvals(m)) < 1e-8

    @given(square())
    def test_conjugate_symmetry_and_trace(self, m):
        ev = matops.eigenvalues(m)
        assert abs(np.sum(ev).imag) < 1e-8 * max(1.0, np.abs(ev).max())
        assert np.sum(ev).real == pytest.approx(np.trace(m), abs=1e-7 * max(1.0, np.abs(m).sum()))

    def test_badly_scaled(self):
        rng = np.random.default_rng(3)
        d = np.diag(10.0 ** rng.uniform(-3, 3, 10))
        m = d @ rng.normal(size=(10, 10)) @ np.linalg.inv(d)
        assert _match(matops.eigenvalues(m), np.linalg.eigvals(m)) < 1e-8

    def test_empty_and_errors(self):
        assert matops.eigenvalues(np.zeros((0, 0))).size == 0
        with pytest.raises(MatrixError):
            matops.eigenvalues(np.ones((2, 3)))
        with pytest.raises(MatrixError):
            matops.eigenvalues(np.array([[np.nan]]))


class TestHessenberg:
    @given(square())
    def test_structure_and_similarity(self, m):
        h = matops.hessenberg(m)
        assert np.allclose(np.tril(h, -2), 0.0)
        assert np.trace(h) == pytest.approx(np.trace(m), abs=1e-9 * max(1.0, np.abs(m).sum()))
        assert np.linalg.norm(h) == pytest.approx(np.linalg.norm(m), rel=1e-9, abs=1e-12)


class TestRank:
    def test_full_and_deficient(self):
        assert matops.rank(np.eye(4)) == 4
        assert matops.rank(np.ones((3, 5))) == 1
        assert matops.rank(np.zeros((3, 3))) == 0

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_product_rank(self, n, k, seed):
        rng = np.random.default_rng(seed)
        k = min(k, n)
        m = rng.normal(size=(n, k)) @ rng.normal(size=(k, n))
        assert matops.rank(m) == k


class TestLyapunov:
    @given(st.integers(0, 2**31 - 1), st.integers(1, 8))
    def test_residual(self, seed, n):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(n, n))
        a -= (max(np.linalg.eigvals(a).real) + 1.0) * np.eye(n)
        q = rng.normal(size=(n, n))
        q = q @ q.T
        x = matops.solve_lyapunov(a, q)
        assert matops.lyapunov_residual(a, q, x) <= 1e-9 * max(1.0, np.abs(q).max())
        assert np.allclose(x, x.T, atol=1e-9 * max(1.0, np.abs(x).max()))

    def test_scalar_closed_form(self):
        # a x + x a + q = 0 with a = -2, q = 4 gives x = 1
        assert matops.solve_lyapunov(np.array([[-2.0]]), np.array([[4.0]]))[0, 0] == pytest.approx(1.0)

    def test_rejects_unstable(self):
        with pytest.raises(MatrixError):
            matops.solve_lyapunov(np.array([[1.0]]), np.array([[1.0]]))

    def test_rejects_large(self):
        with pytest.raises(MatrixError):
            matops.solve_lyapunov(-np.eye(matops.LYAP_MAX_DIM + 1), np.eye(matops.LYAP_MAX_DIM + 1))


class TestCare:
    def test_scalar_closed_form(self):
        # p^2 - 2 a p - q = 0 with b = r = 1: p = a + sqrt(a^2 + q)
        a, q = 1.5, 2.0
        p = matops.solve_care(np.array([[a]]), np.eye(1), np.array([[q]]), np.eye(1))
        assert p[0, 0] == pytest.approx(a + np.sqrt(a * a + q), rel=1e-12)

    def test_double_integrator(self):
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        b = np.array([[0.0], [1.0]])
        p = matops.solve_care(a, b, np.eye(2), np.eye(1))
        expected = np.array([[np.sqrt(3.0), 1.0], [1.0, np.sqrt(3.0)]])
        assert np.allclose(p, expected, atol=1e-10)

    @given(st.integers(0, 2**31 - 1))
    def test_kleinman_matches_hamiltonian(self, seed):
        a, b, q, r = random_stabilizable(np.random.default_rng(seed))
        pk = matops.care_kleinman(a, b, q, r)
        ph = matops.care_hamiltonian(a, b, q, r)
        assert np.linalg.norm(pk - ph) <= 1e-6 * max(1.0, np.linalg.norm(ph))
        assert matops.care_residual(a, b, q, r, pk) <= 1e-8 * max(1.0, np.linalg.norm(pk))
        k = np.linalg.solve(r, b.T @ pk)
        assert matops.is_hurwitz(a - b @ k)

    @pytest.mark.parametrize("eps", [1e-3, 1e-4, 1e-6])
    def test_weakly_controllable_unstable_mode(self, eps):
        """The initial Gramian has condition number above 1e19 here; the
        slow unstable mode must still be moved into the left half-plane."""
        a = np.diag([0.7, -1.0, -2.0, -3.0, -4.0, 30.0])
        b = np.array([[eps], [1.0], [1.0], [1.0], [1.0], [1.0]])
        k0 = matops.initial_stabilizing_gain(a, b, np.eye(1))
        assert matops.is_hurwitz(a - b @ k0)
        if eps >= 1e-4:  # beyond this the CARE itself is too ill-conditioned to cross-check
            p = matops.solve_care(a, b, np.eye(6), np.eye(1))
            assert matops.is_hurwitz(a - b @ b.T @ p)

    def test_zero_weight_on_stable_plant(self):
        a = np.array([[-1.0, 2.0], [0.0, -3.0]])
        p = matops.solve_care(a, np.eye(2), np.zeros((2, 2)), np.eye(2))
        assert np.allclose(p, 0.0)

    def test_unstabilizable_fails(self):
        a = np.diag([1.0, 2.0])
        b = np.array([[1.0], [0.0]])
        with pytest.raises((MatrixError, ConvergenceError)):
            matops.solve_care(a, b, np.eye(2), np.eye(1))

    def test_input_validation(self):
        with pytest.raises(MatrixError):
            matops.solve_care(np.eye(2), np.eye(2), np.eye(2), -np.eye(2))
        with pytest.raises(MatrixError):
            matops.solve_care(np.eye(2), np.eye(3), np.eye(2), np.eye(3))
