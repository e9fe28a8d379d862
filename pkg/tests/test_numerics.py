import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsmdnn.numerics import (
    NotPositiveDefiniteError,
    cholesky,
    cmatvec,
    hermitian_solve,
    make_rng,
    sample_standard_complex_gaussian,
)


def random_hpd(rng, n):
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return B @ B.conj().T + np.eye(n)


class TestCmatvec:
    def test_identity(self):
        x = np.array([1 + 1j, 2, -1j])
        np.testing.assert_array_equal(cmatvec(np.eye(3), x), x)

    def test_zero_matrix(self):
        assert np.all(cmatvec(np.zeros((2, 3)), np.array([1, 2j, 3])) == 0)

    def test_hand_expanded_product(self):
        A = np.array([[1, 1j], [-1j, 1]])
        np.testing.assert_allclose(cmatvec(A, np.array([1, 1])), [1 + 1j, 1 - 1j])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            cmatvec(np.eye(3), np.ones(2))


class TestHermitianSolve:
    def test_scaled_identity(self):
        np.testing.assert_allclose(hermitian_solve(2 * np.eye(2), np.array([4, 6])), [2, 3])

    def test_one_by_one_zero_rhs(self):
        np.testing.assert_array_equal(hermitian_solve(np.eye(1), np.zeros(1)), [0])

    @pytest.mark.parametrize("n", [1, 2, 4, 8, 16])
    def test_construct_then_invert(self, n):
        rng = np.random.default_rng(n)
        A = random_hpd(rng, n)
        x0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        b = A @ x0
        x = hermitian_solve(A, b)
        assert np.linalg.norm(A @ x - b) <= 1e-9 * np.linalg.norm(b)
        np.testing.assert_allclose(x, x0, rtol=1e-8)

    def test_batched_matrices_and_multiple_rhs(self):
        rng = np.random.default_rng(5)
        A = np.stack([random_hpd(rng, 3) for _ in range(7)])
        B = rng.standard_normal((7, 3, 2)) + 0j
        X = hermitian_solve(A, B)
        np.testing.assert_allclose(A @ X, B, atol=1e-10)
        v = hermitian_solve(A, B[..., 0])
        np.testing.assert_allclose(v, X[..., 0])

    def test_not_positive_definite_reports_pivot(self):
        A = np.diag([1.0, 2.0, -1.0])
        with pytest.raises(NotPositiveDefiniteError) as err:
            hermitian_solve(A, np.ones(3))
        assert err.value.pivot_index == 2

    def test_singular_rejected(self):
        with pytest.raises(NotPositiveDefiniteError):
            cholesky(np.ones((2, 2)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_solve_inverts_apply(self, n, seed):
        rng = np.random.default_rng(seed)
        A = random_hpd(rng, n)
        x0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        x = hermitian_solve(A, A @ x0)
        assert np.linalg.norm(x - x0) <= 1e-9 * max(np.linalg.norm(x0), 1.0) * np.linalg.cond(A)

    def test_cholesky_matches_numpy(self):
        A = random_hpd(np.random.default_rng(3), 5)
        np.testing.assert_allclose(cholesky(A), np.linalg.cholesky(A), atol=1e-12)


class TestSampling:
    def test_unit_variance_and_zero_mean(self):
        z = sample_standard_complex_gaussian(make_rng(7), 3, size=100_000)
        assert np.all(np.abs(z.mean(axis=0)) < 0.02)
        var = np.mean(np.abs(z) ** 2, axis=0)
        np.testing.assert_allclose(var, 1.0, rtol=0.03)
        # each real dimension carries half the power
        np.testing.assert_allclose(np.var(z.real, axis=0), 0.5, rtol=0.03)
        np.testing.assert_allclose(np.var(z.imag, axis=0), 0.5, rtol=0.03)

    def test_determinism(self):
        a = sample_standard_complex_gaussian(make_rng(11, 4), 5)
        b = sample_standard_complex_gaussian(make_rng(11, 4), 5)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = sample_standard_complex_gaussian(make_rng(11, 4), 5)
        b = sample_standard_complex_gaussian(make_rng(11, 5), 5)
        assert not np.array_equal(a, b)

    def test_single_draw(self):
        z = sample_standard_complex_gaussian(make_rng(0), 1)
        assert z.shape == (1,) and np.isfinite(z).all()

    def test_seed_range(self):
        with pytest.raises(ValueError):
            make_rng(-1)
        make_rng(2**64 - 1)
