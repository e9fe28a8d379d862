"""Exhaustive ML, whitened ML and MMSE detection for GSM, plus op counts.

The ``*_indices`` functions are the batched workhorses used by the Monte
Carlo harness: they take received vectors of shape ``(B, n_r)`` and return
signal-set indices of shape ``(B,)``. ``H`` is either one ``(n_r, n_t)``
matrix shared by the batch or a ``(B, n_r, n_t)`` stack. The scalar
``*_detect`` functions wrap them for single observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gsm import GsmConfig, GsmVector, compose_index, index_to_bits, vector_from_index
from .numerics import cholesky, forward_substitute, hermitian_solve

DIAGONAL_LOADING = 1e-9

OP_COUNT_CONVENTION = (
    "complex multiply = 4 real mul + 2 real add; complex add = 2 real add; "
    "DNN = 1 mul + 1 add per weight, 1 comparison per neuron activation"
)


@dataclass(frozen=True)
class DetectionResult:
    x_hat: GsmVector
    metric: float
    bits_hat: tuple


def _result(idx: int, metric: float, cfg: GsmConfig) -> DetectionResult:
    x = vector_from_index(int(idx), cfg)
    return DetectionResult(x, float(metric), x.bits)


def _candidate_outputs(H, cfg: GsmConfig) -> np.ndarray:
    """``H x`` for every x in S: shape ``(..., |S|, n_r)``."""
    return np.einsum("...rt,st->...sr", np.asarray(H, dtype=complex), cfg.signal_matrix)


def ml_metrics(Y, H, cfg: GsmConfig) -> np.ndarray:
    """``||y - Hx||^2`` for every batch row and candidate: ``(B, |S|)``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    HX = _candidate_outputs(H, cfg)
    if HX.ndim == 2:
        HX = HX[None]
    d = Y[:, None, :] - HX
    return np.sum(d.real**2 + d.imag**2, axis=-1)


def ml_indices(Y, H, cfg: GsmConfig) -> np.ndarray:
    # argmin returns the first minimiser, i.e. bit-lexicographic tie-break
    return np.argmin(ml_metrics(Y, H, cfg), axis=-1)


def whitening_factor(Sigma, loading: float = DIAGONAL_LOADING) -> np.ndarray:
    """Cholesky factor of ``Sigma`` after relative diagonal loading."""
    Sigma = np.asarray(Sigma, dtype=complex)
    n = Sigma.shape[-1]
    scale = np.real(np.trace(Sigma, axis1=-2, axis2=-1)) / n
    return cholesky(Sigma + loading * scale[..., None, None] * np.eye(n))


def modified_ml_metrics(Y, H, cfg: GsmConfig, Sigma) -> np.ndarray:
    """``(y - Hx)^H Sigma^{-1} (y - Hx)`` for every row and candidate."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2:
        raise ValueError("modified ML supports a single channel matrix per batch")
    L = whitening_factor(Sigma)
    Y = np.atleast_2d(np.asarray(Y, dtype=complex))
    # L^{-1} y and L^{-1} H turn the metric into a plain squared norm
    Yw = forward_substitute(L, Y.T)
    Hw = forward_substitute(L, H)
    return ml_metrics(Yw.T, Hw, cfg)


def modified_ml_indices(Y, H, cfg: GsmConfig, Sigma) -> np.ndarray:
    return np.argmin(modified_ml_metrics(Y, H, cfg, Sigma), axis=-1)


def mmse_estimate(Y, H, snr_linear) -> np.ndarray:
    """Linear MMSE estimate ``(H^H H + I/snr)^{-1} H^H y`` per row of ``Y``."""
    Y = np.asarray(Y, dtype=complex)
    H = np.asarray(H, dtype=complex)
    if H.shape[-2] != Y.shape[-1]:
        raise ValueError(f"dimension mismatch: H is {H.shape}, y is {Y.shape}")
    if not np.all(np.asarray(snr_linear) > 0):
        raise ValueError("snr must be positive")
    n_t = H.shape[-1]
    Hh = np.conj(np.swapaxes(H, -1, -2))
    G = Hh @ H + np.eye(n_t) / np.asarray(snr_linear, dtype=float)[..., None, None]
    if H.ndim == 2:
        rhs = Hh @ np.atleast_2d(Y).T  # (n_t, B)
        z = hermitian_solve(G, rhs).T
        return z if Y.ndim == 2 else z[0]
    rhs = np.einsum("btr,br->bt", Hh, Y)
    return hermitian_solve(G, rhs)


def select_aap_by_energy(z, cfg: GsmConfig) -> np.ndarray:
    """Rank of the valid AAP with the largest ``sum_{i active} |z_i|^2``."""
    energy = np.abs(np.atleast_2d(z)) ** 2 @ cfg.aap_masks.T
    return np.argmax(energy, axis=-1)


def mmse_indices(Y, H, snr_linear, cfg: GsmConfig) -> np.ndarray:
    z = np.atleast_2d(mmse_estimate(Y, H, snr_linear))
    rank = select_aap_by_energy(z, cfg)
    active = cfg.aap_active[rank]
    syms = cfg.alphabet.slice(np.take_along_axis(z, active, axis=-1))
    return compose_index(rank, syms, cfg)


def ml_detect(y, H, cfg: GsmConfig) -> DetectionResult:
    m = ml_metrics(y, H, cfg)[0]
    i = int(np.argmin(m))
    return _result(i, m[i], cfg)


def modified_ml_detect(y, H, cfg: GsmConfig, Sigma) -> DetectionResult:
    m = modified_ml_metrics(y, H, cfg, Sigma)[0]
    i = int(np.argmin(m))
    return _result(i, m[i], cfg)


def mmse_detect(y, H, snr_linear, cfg: GsmConfig) -> DetectionResult:
    z = mmse_estimate(np.atleast_2d(y), H, snr_linear)
    i = int(mmse_indices(y, H, snr_linear, cfg)[0])
    x = vector_from_index(i, cfg)
    return DetectionResult(x, float(np.sum(np.abs(z[0] - x.symbols) ** 2)), x.bits)


def bit_errors(true_idx, hat_idx, rate: int) -> np.ndarray:
    """Hamming distance between the rate-length bit strings of two indices."""
    diff = np.asarray(true_idx, dtype=np.int64) ^ np.asarray(hat_idx, dtype=np.int64)
    return index_to_bits(diff, rate).sum(axis=-1)


# -- complexity accounting ---------------------------------------------------


@dataclass(frozen=True)
class OpCount:
    real_multiplies: int
    real_additions: int
    comparisons: int

    @property
    def total(self) -> int:
        return self.real_multiplies + self.real_additions + self.comparisons

    def __add__(self, other):
        return OpCount(
            self.real_multiplies + other.real_multiplies,
            self.real_additions + other.real_additions,
            self.comparisons + other.comparisons,
        )

    def scaled(self, k: int) -> "OpCount":
        return OpCount(k * self.real_multiplies, k * self.real_additions, k * self.comparisons)


def _cmul(n):
    return OpCount(4 * n, 2 * n, 0)


def _cadd(n):
    return OpCount(0, 2 * n, 0)


def _ml_count(cfg: GsmConfig, n_candidates: int) -> OpCount:
    n_r, k = cfg.n_r, cfg.n_rf
    per = (
        _cmul(n_r * k)  # H x over the active columns only
        + _cadd(n_r * (k - 1))
        + _cadd(n_r)  # y - Hx
        + OpCount(2 * n_r, 2 * n_r - 1, 0)  # squared norm
    )
    # one comparison per candidate against the running minimum
    return per.scaled(n_candidates) + OpCount(0, 0, n_candidates)


def _mmse_count(cfg: GsmConfig) -> OpCount:
    n_r, n_t, k, M = cfg.n_r, cfg.n_t, cfg.n_rf, cfg.alphabet.size
    ops = _cmul(n_t * n_t * n_r) + _cadd(n_t * n_t * (n_r - 1))  # H^H H
    ops += OpCount(0, n_t, 0)  # + I/snr
    ops += _cmul(n_t * n_r) + _cadd(n_t * (n_r - 1))  # H^H y
    chol_macs = n_t * (n_t - 1) * (n_t + 1) // 6
    ops += _cmul(chol_macs) + _cadd(chol_macs) + OpCount(n_t, 0, 0)  # factor, n_t sqrt
    ops += _cmul(n_t * (n_t - 1)) + _cadd(n_t * (n_t - 1)) + OpCount(4 * n_t, 0, 0)  # two sweeps
    ops += OpCount(2 * n_t, n_t, 0)  # |z_i|^2
    ops += OpCount(0, cfg.n_aaps * (k - 1), cfg.n_aaps - 1)  # pattern energies, argmax
    ops += OpCount(2 * k * M, 3 * k * M, k * (M - 1))  # nearest-point slicing
    return ops


def _dnn_count(nets) -> OpCount:
    weights = sum(a * b for sizes in nets for a, b in zip(sizes[:-1], sizes[1:]))
    neurons = sum(sum(sizes[1:]) for sizes in nets)
    return OpCount(weights, weights, neurons)


def count_operations(detector: str, cfg: GsmConfig, nets=None) -> OpCount:
    """Real-operation count for one detection under ``OP_COUNT_CONVENTION``.

    ``nets`` lists the layer sizes of every sub-network and is required for
    the ``"DNN"`` detector.
    """
    d = detector.upper()
    if d == "ML":
        return _ml_count(cfg, cfg.signal_set_size)
    if d == "MMSE":
        return _mmse_count(cfg)
    if d == "DNN":
        if not nets:
            raise ValueError("DNN op count needs the sub-network layer sizes")
        return _dnn_count(nets)
    raise ValueError(f"unknown detector {detector!r}; expected ML, MMSE or DNN")
