"""Small dense complex linear algebra and seeded sampling.

Everything here works on numpy arrays in double precision. Random draws
always come from a caller-supplied :class:`numpy.random.Generator`; use
:func:`make_rng` to build one from a ``(seed, stream...)`` pair so that
independent workers get independent, reproducible streams.
"""

from __future__ import annotations

import numpy as np

PIVOT_TOL = 1e-12


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised by :func:`cholesky` when a pivot falls below tolerance."""

    def __init__(self, pivot_index: int, pivot_value: float):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        super().__init__(
            f"matrix is not positive definite: pivot {pivot_index} = {pivot_value:.3e}"
        )


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a generator for the stream identified by ``(seed, *stream)``.

    Identical arguments always give identical sample sequences; distinct
    stream ids give statistically independent sequences.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def cmatvec(A, x):
    """Complex matrix-vector product ``A @ x`` with a dimension check."""
    A = np.asarray(A, dtype=complex)
    x = np.asarray(x, dtype=complex)
    if A.ndim != 2 or x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, x is {x.shape}")
    return A @ x


def cholesky(A, tol: float = PIVOT_TOL):
    """Lower Cholesky factor of a Hermitian positive definite matrix.

    Accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``. The
    factorization is column-oriented so that the failing pivot can be
    reported; for a stack, the first failing pivot index is reported.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {A.shape}")
    n = A.shape[-1]
    L = np.zeros_like(A)
    for j in range(n):
        Lj = L[..., j, :j]
        d = A[..., j, j].real - np.sum(np.abs(Lj) ** 2, axis=-1)
        bad = ~(d > tol)
        if np.any(bad):
            raise NotPositiveDefiniteError(j, float(np.min(np.where(bad, d, np.inf))))
        ljj = np.sqrt(d)
        L[..., j, j] = ljj
        if j + 1 < n:
            # L[i, j] = (A[i, j] - sum_k L[i, k] conj(L[j, k])) / L[j, j]
            s = np.einsum("...ik,...k->...i", L[..., j + 1 :, :j], Lj.conj())
            L[..., j + 1 :, j] = (A[..., j + 1 :, j] - s) / ljj[..., None]
    return L


def forward_substitute(L, b):
    """Solve ``L y = b`` for lower-triangular ``L``; ``b`` is ``(..., n, k)``."""
    n = L.shape[-1]
    y = np.zeros(b.shape, dtype=complex)
    for i in range(n):
        acc = b[..., i, :] - np.einsum("...k,...kr->...r", L[..., i, :i], y[..., :i, :])
        y[..., i, :] = acc / L[..., i, i][..., None]
    return y


def _backward_sub_h(L, y):
    # solves L^H x = y
    n = L.shape[-1]
    x = np.zeros(y.shape, dtype=complex)
    for i in range(n - 1, -1, -1):
        col = L[..., i + 1 :, i].conj()
        acc = y[..., i, :] - np.einsum("...k,...kr->...r", col, x[..., i + 1 :, :])
        x[..., i, :] = acc / L[..., i, i][..., None]
    return x


def hermitian_solve(A, b, tol: float = PIVOT_TOL):
    """Solve ``A x = b`` for Hermitian positive definite ``A`` via Cholesky.

    Parameters
    ----------
    A : array_like, shape (..., n, n)
        Hermitian positive definite matrix or stack of matrices.
    b : array_like, shape (..., n) or (..., n, k)
        Right-hand side(s). A trailing vector axis is treated as a single
        column.
    tol : float
        Pivot tolerance; pivots at or below it raise
        :class:`NotPositiveDefiniteError`.

    Returns
    -------
    numpy.ndarray
        Solution with the same shape as ``b``.
    """
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    vector_rhs = b.ndim == A.ndim - 1
    B = b[..., None] if vector_rhs else b
    if B.ndim != A.ndim or B.shape[-2] != A.shape[-1]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, b is {b.shape}")
    L = cholesky(A, tol)
    x = _backward_sub_h(L, forward_substitute(L, B))
    return x[..., 0] if vector_rhs else x


def sample_standard_complex_gaussian(rng: np.random.Generator, n, size=None):
    """Draw CN(0, 1) entries: real and imaginary parts each N(0, 1/2).

    ``n`` is the vector length; ``size`` optionally prepends batch
    dimensions, so the result has shape ``(*size, n)``.
    """
    shape = (n,) if size is None else tuple(np.atleast_1d(size)) + (n,)
    if n < 1:
        raise ValueError("n must be >= 1")
    z = rng.standard_normal(shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)
