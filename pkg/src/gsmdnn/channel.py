"""Rayleigh MIMO channels, noise processes and received-signal synthesis."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .gsm import GsmConfig
from .numerics import sample_standard_complex_gaussian


class ChannelMode(str, Enum):
    STATIC = "static"
    VARYING = "varying"


class NoiseKind(str, Enum):
    IID_GAUSSIAN = "iid"
    CORRELATED = "correlated"
    STUDENT_T = "student_t"


@dataclass(frozen=True)
class NoiseModel:
    """Noise process description.

    ``sigma2`` is the variance of the underlying per-entry complex noise.
    For the correlated model the i.i.d. draw is mixed by the correlation
    matrix, so the actual covariance is ``sigma2 * Nc @ Nc^H``.
    """

    kind: NoiseKind = NoiseKind.IID_GAUSSIAN
    sigma2: float = 1.0
    rho_n: float = 0.0
    nu: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not 0.0 <= self.rho_n <= 1.0:
            raise ValueError(f"rho_n must lie in [0, 1], got {self.rho_n}")
        if self.kind is NoiseKind.STUDENT_T and not self.nu > 2:
            raise ValueError(f"Student-t noise needs nu > 2 for finite variance, got {self.nu}")

    def with_sigma2(self, sigma2: float) -> "NoiseModel":
        return replace(self, sigma2=float(sigma2))

    def covariance(self, n_r: int) -> np.ndarray:
        """True covariance of one noise vector."""
        if self.kind is NoiseKind.CORRELATED:
            Nc = correlation_matrix(n_r, self.rho_n)
            return self.sigma2 * Nc @ Nc.conj().T
        return self.sigma2 * np.eye(n_r, dtype=complex)

    def label(self) -> str:
        if self.kind is NoiseKind.CORRELATED:
            return f"correlated(rho={self.rho_n:g})"
        if self.kind is NoiseKind.STUDENT_T:
            return f"student_t(nu={self.nu:g})"
        return "iid"

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value}
        if self.kind is NoiseKind.CORRELATED:
            d["rho_n"] = self.rho_n
        if self.kind is NoiseKind.STUDENT_T:
            d["nu"] = self.nu
        return d

    @classmethod
    def from_dict(cls, d) -> "NoiseModel":
        return cls(
            kind=NoiseKind(d.get("kind", "iid")),
            sigma2=float(d.get("sigma2", 1.0)),
            rho_n=float(d.get("rho_n", 0.0)),
            nu=float(d.get("nu", np.inf)),
        )


@dataclass(frozen=True)
class SnrPoint:
    snr_db: float

    @property
    def snr_linear(self) -> float:
        return db_to_linear(self.snr_db)


def db_to_linear(snr_db):
    return 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)


def draw_channel(n_r: int, n_t: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Rayleigh flat-fading channel(s) with i.i.d. CN(0, 1) entries.

    Returns shape ``(n_r, n_t)``, or ``(*size, n_r, n_t)`` when ``size`` is
    given.
    """
    if n_r < 1 or n_t < 1:
        raise ValueError("channel dimensions must be >= 1")
    batch = () if size is None else tuple(np.atleast_1d(size))
    h = sample_standard_complex_gaussian(rng, n_r * n_t, size=batch or None)
    return h.reshape(batch + (n_r, n_t))


def correlation_matrix(n_r: int, rho_n: float) -> np.ndarray:
    """Exponential correlation matrix with entries ``rho_n ** |i - j|``."""
    if not 0.0 <= rho_n <= 1.0:
        raise ValueError(f"rho_n must lie in [0, 1], got {rho_n}")
    k = np.arange(n_r)
    return np.power(float(rho_n), np.abs(k[:, None] - k[None, :])).astype(complex)


def sample_noise(model: NoiseModel, n_r: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw noise vectors of length ``n_r`` (batched via ``size``)."""
    batch = () if size is None else tuple(np.atleast_1d(size))
    shape = batch + (n_r,)
    if model.kind is NoiseKind.STUDENT_T:
        nu = model.nu
        scale = np.sqrt(model.sigma2 / 2.0) * np.sqrt((nu - 2.0) / nu)
        t = rng.standard_t(nu, size=shape + (2,))
        return scale * (t[..., 0] + 1j * t[..., 1])
    n = np.sqrt(model.sigma2) * sample_standard_complex_gaussian(rng, n_r, size=batch or None)
    if model.kind is NoiseKind.CORRELATED:
        Nc = correlation_matrix(n_r, model.rho_n)
        n = n @ Nc.T
    return n


def signal_power(H, cfg: GsmConfig) -> np.ndarray:
    """Mean of ``||Hx||^2`` over the signal set for each channel in ``H``.

    Symbols are zero-mean and independent across antennas, so the mean is
    ``sum_j P(antenna j active) * E|a|^2 * ||h_j||^2``, exactly.
    """
    H = np.asarray(H)
    col_energy = np.sum(np.abs(H) ** 2, axis=-2)
    sym_energy = np.mean(np.abs(cfg.alphabet.array) ** 2)
    return col_energy @ (cfg.antenna_activity * sym_energy)


def noise_variance(H, cfg: GsmConfig, snr_db) -> np.ndarray:
    """Per-entry noise variance giving ``E||Hx||^2 / E||n||^2 = snr``."""
    return signal_power(H, cfg) / (cfg.n_r * db_to_linear(snr_db))


def transmit(H, x, model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Received signal ``y = H x + n``.

    ``H`` may be one ``(n_r, n_t)`` matrix or a stack matching the batch of
    ``x``; ``x`` is ``(n_t,)`` or ``(B, n_t)``.
    """
    H = np.asarray(H, dtype=complex)
    x = np.asarray(getattr(x, "symbols", x), dtype=complex)
    if H.shape[-1] != x.shape[-1]:
        raise ValueError(f"dimension mismatch: H is {H.shape}, x is {x.shape}")
    hx = np.einsum("...rt,...t->...r", H, x)
    n_r = H.shape[-2]
    noise = sample_noise(model, n_r, rng, size=hx.shape[:-1] or None)
    return hx + noise


def estimate_noise_covariance(samples, min_per_dim: int = 1) -> np.ndarray:
    """Sample covariance ``(1/m) sum_k n_k n_k^H`` of noise-only observations."""
    samples = np.asarray(samples, dtype=complex)
    if samples.ndim != 2:
        raise ValueError(f"expected (m, n_r) samples, got shape {samples.shape}")
    m, n_r = samples.shape
    if m < max(n_r, 1) * min_per_dim:
        raise ValueError(f"need at least {n_r * min_per_dim} samples to estimate a {n_r}x{n_r} covariance, got {m}")
    return samples.T @ samples.conj() / m


def transmit_batch(H, X, model: NoiseModel, sigma2, rng: np.random.Generator) -> np.ndarray:
    """``y = H x + n`` for a batch, with a per-row noise variance.

    ``sigma2`` may be a scalar or an array with one entry per row of ``X``;
    it overrides ``model.sigma2``. All noise kinds scale linearly with
    ``sqrt(sigma2)``, so unit-variance draws are rescaled row by row.
    """
    H = np.asarray(H, dtype=complex)
    X = np.atleast_2d(np.asarray(X, dtype=complex))
    if H.shape[-1] != X.shape[-1]:
        raise ValueError(f"dimension mismatch: H is {H.shape}, x is {X.shape}")
    hx = np.einsum("...rt,...t->...r", H, X)
    unit = sample_noise(model.with_sigma2(1.0), H.shape[-2], rng, size=len(X))
    scale = np.sqrt(np.asarray(sigma2, dtype=float))
    return hx + (scale[:, None] if scale.ndim else scale) * unit
