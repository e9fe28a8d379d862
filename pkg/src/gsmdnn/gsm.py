"""GSM signal sets: antenna activation patterns, alphabets, bit mapping.

A GSM transmitter activates ``n_rf`` of ``n_t`` antennas per channel use.
The first ``K = floor(log2 C(n_t, n_rf))`` bits choose the activation
pattern (AAP) through the combinatorial number system; the remaining
``n_rf * log2|A|`` bits choose one alphabet point per active antenna, in
ascending antenna order. Bits are big-endian throughout, so the index of a
vector in the bit-lexicographic signal set equals its bit string read as an
integer.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

ENUMERATION_CAP = 2**20


class NotInSignalSetError(ValueError):
    pass


@dataclass(frozen=True)
class ModAlphabet:
    name: str
    points: tuple

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return self.size.bit_length() - 1

    @functools.cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=complex)

    def slice(self, z) -> np.ndarray:
        """Index of the nearest alphabet point for each entry of ``z``.

        Ties go to the lower index.
        """
        z = np.asarray(z, dtype=complex)
        return np.argmin(np.abs(z[..., None] - self.array) ** 2, axis=-1)


# bit 0 -> +1, bit 1 -> -1
BPSK = ModAlphabet("BPSK", (1.0 + 0j, -1.0 + 0j))

# Gray labelling: b1 picks the real sign, b0 the imaginary sign.
QAM4 = ModAlphabet(
    "QAM4",
    tuple(
        complex(1 - 2 * (i >> 1), 1 - 2 * (i & 1)) / math.sqrt(2) for i in range(4)
    ),
)

ALPHABETS = {"BPSK": BPSK, "QAM4": QAM4}


def get_alphabet(name) -> ModAlphabet:
    if isinstance(name, ModAlphabet):
        return name
    try:
        return ALPHABETS[str(name).upper()]
    except KeyError:
        raise ValueError(f"unknown alphabet {name!r}; choose from {sorted(ALPHABETS)}") from None


@dataclass(frozen=True, order=True)
class Aap:
    """Antenna activation pattern: the sorted set of active antennas."""

    n_t: int
    active_indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.active_indices)
        if list(idx) != sorted(set(idx)) or (idx and (idx[0] < 0 or idx[-1] >= self.n_t)):
            raise ValueError(f"invalid active indices {self.active_indices} for n_t={self.n_t}")
        object.__setattr__(self, "active_indices", idx)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_t, dtype=np.uint8)
        m[list(self.active_indices)] = 1
        return m

    @classmethod
    def from_mask(cls, mask) -> "Aap":
        mask = np.asarray(mask)
        return cls(len(mask), tuple(np.flatnonzero(mask)))


def _check_nt_nrf(n_t: int, n_rf: int):
    if not 1 < n_rf < n_t:
        raise ValueError(f"need 1 < n_rf < n_t, got n_t={n_t}, n_rf={n_rf}")


def aap_bits(n_t: int, n_rf: int) -> int:
    """Number of bits carried by the activation pattern."""
    _check_nt_nrf(n_t, n_rf)
    return math.comb(n_t, n_rf).bit_length() - 1


def combinadic_rank(indices) -> int:
    """Rank ``sum_i C(c_i, i)`` of an index set in the combinatorial number system."""
    return sum(math.comb(c, i) for i, c in enumerate(sorted(indices), start=1))


def combinadic_unrank(rank: int, k: int) -> tuple:
    """Inverse of :func:`combinadic_rank` for ``k``-element sets."""
    out = []
    for i in range(k, 0, -1):
        c = i - 1
        while math.comb(c + 1, i) <= rank:
            c += 1
        out.append(c)
        rank -= math.comb(c, i)
    return tuple(reversed(out))


def aap_rank(aap: Aap) -> int:
    return combinadic_rank(aap.active_indices)


def aap_unrank(rank: int, n_t: int, n_rf: int) -> Aap:
    k = aap_bits(n_t, n_rf)
    if not 0 <= rank < 2**k:
        raise ValueError(f"AAP rank {rank} out of range [0, {2**k})")
    return Aap(n_t, combinadic_unrank(rank, n_rf))


@functools.lru_cache(maxsize=None)
def valid_aaps(n_t: int, n_rf: int) -> tuple:
    """The ``2**K`` valid patterns, ordered by combinadic rank."""
    k = aap_bits(n_t, n_rf)
    return tuple(Aap(n_t, combinadic_unrank(r, n_rf)) for r in range(2**k))


@dataclass(frozen=True)
class GsmConfig:
    n_t: int
    n_rf: int
    n_r: int
    alphabet: ModAlphabet = BPSK

    def __post_init__(self):
        _check_nt_nrf(self.n_t, self.n_rf)
        if self.n_r < 1:
            raise ValueError(f"n_r must be >= 1, got {self.n_r}")
        object.__setattr__(self, "alphabet", get_alphabet(self.alphabet))

    @property
    def aap_bits(self) -> int:
        return aap_bits(self.n_t, self.n_rf)

    @property
    def symbol_bits(self) -> int:
        return self.n_rf * self.alphabet.bits_per_symbol

    @property
    def rate(self) -> int:
        return self.aap_bits + self.symbol_bits

    @property
    def signal_set_size(self) -> int:
        return 2**self.rate

    @property
    def n_aaps(self) -> int:
        return 2**self.aap_bits

    @property
    def aaps(self) -> tuple:
        return valid_aaps(self.n_t, self.n_rf)

    @functools.cached_property
    def aap_masks(self) -> np.ndarray:
        """``(2**K, n_t)`` 0/1 matrix of valid patterns in rank order."""
        return np.stack([a.mask for a in self.aaps])

    @functools.cached_property
    def aap_active(self) -> np.ndarray:
        """``(2**K, n_rf)`` active antenna indices per pattern."""
        return np.array([a.active_indices for a in self.aaps], dtype=np.intp)

    @functools.cached_property
    def antenna_activity(self) -> np.ndarray:
        """Fraction of valid patterns in which each antenna is active."""
        return self.aap_masks.mean(axis=0)

    @functools.cached_property
    def signal_matrix(self) -> np.ndarray:
        """All signal vectors as rows, in bit-lexicographic order."""
        if self.rate > math.log2(ENUMERATION_CAP):
            raise ValueError(
                f"signal set of 2**{self.rate} vectors exceeds the enumeration cap; "
                "draw vectors with indices_to_vectors instead"
            )
        return indices_to_vectors(np.arange(self.signal_set_size), self)

    def to_dict(self) -> dict:
        return {"n_t": self.n_t, "n_rf": self.n_rf, "n_r": self.n_r, "alphabet": self.alphabet.name}

    @classmethod
    def from_dict(cls, d) -> "GsmConfig":
        return cls(int(d["n_t"]), int(d["n_rf"]), int(d["n_r"]), get_alphabet(d.get("alphabet", "BPSK")))


@dataclass(frozen=True, eq=False)
class GsmVector:
    symbols: np.ndarray
    aap: Aap
    bits: tuple

    def __eq__(self, other):
        return (
            isinstance(other, GsmVector)
            and self.aap == other.aap
            and self.bits == other.bits
            and np.array_equal(self.symbols, other.symbols)
        )

    def __hash__(self):
        return hash((self.aap, self.bits))


# -- vectorised index helpers ------------------------------------------------
# A signal-set index is the integer value of the big-endian bit string.


def index_to_bits(idx, nbits: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    shifts = np.arange(nbits - 1, -1, -1, dtype=np.int64)
    return ((idx[..., None] >> shifts) & 1).astype(np.uint8)


def bits_to_index(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    nbits = bits.shape[-1]
    return (bits << np.arange(nbits - 1, -1, -1, dtype=np.int64)).sum(axis=-1)


def split_index(idx, cfg: GsmConfig):
    """Split signal-set indices into (AAP rank, per-slot symbol indices)."""
    idx = np.asarray(idx, dtype=np.int64)
    b = cfg.alphabet.bits_per_symbol
    rank = idx >> cfg.symbol_bits
    shifts = np.arange(cfg.n_rf - 1, -1, -1, dtype=np.int64) * b
    syms = (idx[..., None] >> shifts) & (cfg.alphabet.size - 1)
    return rank, syms


def compose_index(rank, syms, cfg: GsmConfig) -> np.ndarray:
    rank = np.asarray(rank, dtype=np.int64)
    syms = np.asarray(syms, dtype=np.int64)
    b = cfg.alphabet.bits_per_symbol
    shifts = np.arange(cfg.n_rf - 1, -1, -1, dtype=np.int64) * b
    return (rank << cfg.symbol_bits) | (syms << shifts).sum(axis=-1)


def indices_to_vectors(idx, cfg: GsmConfig) -> np.ndarray:
    """Map signal-set indices to ``(..., n_t)`` complex transmit vectors."""
    rank, syms = split_index(idx, cfg)
    if np.any((rank < 0) | (rank >= cfg.n_aaps)):
        raise ValueError("signal-set index out of range")
    x = np.zeros(np.shape(rank) + (cfg.n_t,), dtype=complex)
    active = cfg.aap_active[rank]
    np.put_along_axis(x, active, cfg.alphabet.array[syms], axis=-1)
    return x


def vectors_to_indices(x, cfg: GsmConfig, atol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`indices_to_vectors`; raises if any row is not in S."""
    x = np.asarray(x, dtype=complex)
    mask = np.abs(x) > atol
    lookup = {tuple(m): r for r, m in enumerate(cfg.aap_masks.astype(bool))}
    flat_mask = mask.reshape(-1, cfg.n_t)
    ranks = np.empty(flat_mask.shape[0], dtype=np.int64)
    for i, m in enumerate(flat_mask):
        r = lookup.get(tuple(m))
        if r is None:
            raise NotInSignalSetError(f"activation pattern {m.astype(int)} is not a valid AAP")
        ranks[i] = r
    ranks = ranks.reshape(mask.shape[:-1])
    active = cfg.aap_active[ranks]
    vals = np.take_along_axis(x, active, axis=-1)
    syms = cfg.alphabet.slice(vals)
    if not np.allclose(cfg.alphabet.array[syms], vals, atol=atol, rtol=0):
        raise NotInSignalSetError("active entries are not alphabet points")
    return compose_index(ranks, syms, cfg)


# -- scalar API ----------------------------------------------------------------


def bits_to_gsm_vector(bits, cfg: GsmConfig) -> GsmVector:
    bits = tuple(int(b) for b in bits)
    if len(bits) != cfg.rate:
        raise ValueError(f"expected {cfg.rate} bits, got {len(bits)}")
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bits must be 0 or 1")
    idx = int(bits_to_index(np.array(bits)))
    rank, _ = split_index(idx, cfg)
    return GsmVector(indices_to_vectors(idx, cfg), cfg.aaps[int(rank)], bits)


def gsm_vector_to_bits(x, cfg: GsmConfig) -> tuple:
    symbols = x.symbols if isinstance(x, GsmVector) else x
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.shape != (cfg.n_t,):
        raise NotInSignalSetError(f"expected a length-{cfg.n_t} vector, got shape {symbols.shape}")
    idx = int(vectors_to_indices(symbols, cfg))
    return tuple(int(b) for b in index_to_bits(idx, cfg.rate))


def vector_from_index(idx: int, cfg: GsmConfig) -> GsmVector:
    return bits_to_gsm_vector(index_to_bits(idx, cfg.rate), cfg)


def enumerate_signal_set(cfg: GsmConfig, cap: int = ENUMERATION_CAP) -> list:
    """Every vector of S in bit-lexicographic order."""
    if cfg.signal_set_size > cap:
        raise ValueError(
            f"|S| = {cfg.signal_set_size} exceeds the enumeration cap {cap}; "
            "stream vectors by index with indices_to_vectors instead"
        )
    X = cfg.signal_matrix
    bits = index_to_bits(np.arange(cfg.signal_set_size), cfg.rate)
    ranks, _ = split_index(np.arange(cfg.signal_set_size), cfg)
    return [
        GsmVector(X[i], cfg.aaps[int(ranks[i])], tuple(int(b) for b in bits[i]))
        for i in range(cfg.signal_set_size)
    ]

