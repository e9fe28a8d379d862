"""Modular DNN detector: one AAP network plus one network per symbol slot.

The AAP network has a sigmoid head with one output per transmit antenna;
each symbol network has a softmax head over the alphabet and predicts the
symbol riding on the i-th smallest active antenna. A single large softmax
network over the whole signal set is provided as a baseline.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import nn
from .channel import ChannelMode, NoiseModel, db_to_linear, draw_channel, noise_variance, transmit_batch
from .detectors import DetectionResult, mmse_estimate
from .gsm import BPSK, GsmConfig, compose_index, index_to_bits, bits_to_index, indices_to_vectors, split_index, vector_from_index
from .nn import Activation, Loss, Mlp, TrainConfig

SINGLE_DNN_CAP = 2**14
SCORE_TIE_TOL = 1e-9
BUNDLE_VERSION = 1


class InputMode(str, Enum):
    RAW = "raw_y"
    MMSE = "mmse_preprocessed"


def featurize(y) -> np.ndarray:
    """``[Re(y); Im(y)]`` along the last axis."""
    y = np.asarray(y, dtype=complex)
    return np.concatenate([y.real, y.imag], axis=-1)


def defeaturize(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    n = f.shape[-1] // 2
    return f[..., :n] + 1j * f[..., n:]


def mmse_preprocess(y, H, snr_linear) -> np.ndarray:
    """MMSE estimate of the transmit vector, used as the network input."""
    return mmse_estimate(y, H, snr_linear)


# -- AAP selection -------------------------------------------------------------


def _mask_codes(masks) -> np.ndarray:
    masks = np.asarray(masks, dtype=np.int64)
    return masks @ (np.int64(1) << np.arange(masks.shape[-1], dtype=np.int64))


def select_aap_ranks(P, cfg: GsmConfig) -> np.ndarray:
    """Batched AAP decision from antenna-activity probabilities.

    The ``n_rf`` largest probabilities (ties to the lower antenna index)
    are kept when they form a valid pattern. Otherwise the valid pattern
    with the highest Bernoulli log-likelihood is chosen, lowest rank on ties.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    top = np.argsort(-P, axis=-1, kind="stable")[:, : cfg.n_rf]
    codes = (np.int64(1) << top.astype(np.int64)).sum(axis=-1)
    lookup = dict(zip(_mask_codes(cfg.aap_masks).tolist(), range(cfg.n_aaps)))
    ranks = np.array([lookup.get(c, -1) for c in codes.tolist()], dtype=np.int64)
    bad = ranks < 0
    if np.any(bad):
        pc = np.clip(P[bad], nn.LOG_CLAMP, 1.0 - nn.LOG_CLAMP)
        T = cfg.aap_masks.astype(float)
        scores = np.log(pc) @ T.T + np.log1p(-pc) @ (1.0 - T).T
        # near-equal scores are ties: summation order must not pick the winner
        best = scores.max(axis=-1, keepdims=True)
        ranks[bad] = np.argmax(scores >= best - SCORE_TIE_TOL * np.maximum(1.0, np.abs(best)), axis=-1)
    return ranks


def select_aap(probabilities, cfg: GsmConfig):
    return cfg.aaps[int(select_aap_ranks(probabilities, cfg)[0])]


# -- detectors -----------------------------------------------------------------


@dataclass
class ModularDetector:
    cfg: GsmConfig
    aap_net: Mlp
    symbol_nets: list
    input_mode: InputMode = InputMode.RAW
    preset: str = "custom"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_mode = InputMode(self.input_mode)
        d = self.input_dim
        cfg = self.cfg
        if self.aap_net.layer_sizes[0] != d or self.aap_net.n_outputs != cfg.n_t:
            raise ValueError(f"AAP net must map {d} inputs to {cfg.n_t} outputs")
        if self.aap_net.activations[-1] is not Activation.SIGMOID:
            raise ValueError("AAP net needs a sigmoid head")
        if len(self.symbol_nets) != cfg.n_rf:
            raise ValueError(f"need {cfg.n_rf} symbol nets, got {len(self.symbol_nets)}")
        for net in self.symbol_nets:
            if net.layer_sizes[0] != d or net.n_outputs != cfg.alphabet.size:
                raise ValueError(f"symbol nets must map {d} inputs to {cfg.alphabet.size} outputs")
            if net.activations[-1] is not Activation.SOFTMAX:
                raise ValueError("symbol nets need a softmax head")

    @property
    def input_dim(self) -> int:
        return 2 * (self.cfg.n_t if self.input_mode is InputMode.MMSE else self.cfg.n_r)

    @property
    def nets(self) -> list:
        return [self.aap_net, *self.symbol_nets]

    def features(self, Y, H=None, snr_linear=None) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=complex))
        if self.input_mode is InputMode.MMSE:
            if H is None or snr_linear is None:
                raise ValueError("MMSE-preprocessed detector needs H and snr")
            Y = np.atleast_2d(mmse_preprocess(Y, H, snr_linear))
        return featurize(Y)

    def detect_indices(self, Y, H=None, snr_linear=None) -> np.ndarray:
        F = self.features(Y, H, snr_linear)
        rank = select_aap_ranks(self.aap_net.predict(F), self.cfg)
        # argmax picks the lower alphabet index on ties
        syms = np.stack([np.argmax(net.predict(F), axis=-1) for net in self.symbol_nets], axis=-1)
        return compose_index(rank, syms, self.cfg)

    def detect(self, y, H=None, snr_linear=None) -> DetectionResult:
        F = self.features(y, H, snr_linear)
        idx = int(self.detect_indices(y, H, snr_linear)[0])
        x = vector_from_index(idx, self.cfg)
        p = self.aap_net.predict(F)[0]
        return DetectionResult(x, float(np.prod(np.where(x.aap.mask, p, 1 - p))), x.bits)


@dataclass
class SingleDnnDetector:
    cfg: GsmConfig
    net: Mlp
    input_mode: InputMode = InputMode.RAW
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_mode = InputMode(self.input_mode)

    def detect_indices(self, Y, H=None, snr_linear=None) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=complex))
        if self.input_mode is InputMode.MMSE:
            Y = np.atleast_2d(mmse_preprocess(Y, H, snr_linear))
        return np.argmax(self.net.predict(featurize(Y)), axis=-1)

    def detect(self, y, H=None, snr_linear=None) -> DetectionResult:
        idx = int(self.detect_indices(y, H, snr_linear)[0])
        x = vector_from_index(idx, self.cfg)
        return DetectionResult(x, 0.0, x.bits)


# -- training data -----------------------------------------------------------------


@dataclass
class TrainingSet:
    inputs: np.ndarray
    aap_labels: np.ndarray
    symbol_labels: list
    indices: np.ndarray
    snr_db: float

    @property
    def m_T(self) -> int:
        return len(self.inputs)

    def one_hot_indices(self, n_classes: int) -> np.ndarray:
        return np.eye(n_classes)[self.indices]


def make_training_set(
    cfg: GsmConfig,
    m_T: int,
    snr_db: float,
    noise: NoiseModel,
    rng: np.random.Generator,
    H=None,
    channel_mode: ChannelMode = ChannelMode.STATIC,
    input_mode: InputMode = InputMode.RAW,
) -> TrainingSet:
    """Labelled examples from pseudo-random GSM vectors sent through the channel.

    With a static channel, ``H`` is the fixed realization. With a varying
    channel a fresh Rayleigh matrix is drawn for every example (``H`` is
    ignored).
    """
    if m_T < 1:
        raise ValueError("m_T must be >= 1")
    channel_mode = ChannelMode(channel_mode)
    input_mode = InputMode(input_mode)
    bits = rng.integers(0, 2, size=(m_T, cfg.rate))
    idx = bits_to_index(bits)
    X = indices_to_vectors(idx, cfg)
    if channel_mode is ChannelMode.VARYING:
        H = draw_channel(cfg.n_r, cfg.n_t, rng, size=m_T)
    elif H is None:
        raise ValueError("a static channel needs H")
    sigma2 = noise_variance(H, cfg, snr_db)
    Y = transmit_batch(H, X, noise, sigma2, rng)
    if input_mode is InputMode.MMSE:
        Y = mmse_preprocess(Y, H, db_to_linear(snr_db))
    rank, syms = split_index(idx, cfg)
    eye = np.eye(cfg.alphabet.size)
    return TrainingSet(
        inputs=featurize(Y),
        aap_labels=cfg.aap_masks[rank].astype(float),
        symbol_labels=[eye[syms[:, i]] for i in range(cfg.n_rf)],
        indices=idx,
        snr_db=float(snr_db),
    )


def _train_one(args):
    net, X, T, tc = args
    return nn.train(net, X, T, tc)[1]


def train_modular(det: ModularDetector, ts: TrainingSet, epochs: int, seed: int = 0, batch_size: int = 32,
                  symbol_loss: Loss = Loss.CCE, threads: int = 1) -> list:
    """Train every sub-network; returns one loss history per net.

    Each net gets its own shuffle seed derived from ``seed`` so the result
    does not depend on whether the nets train sequentially or in parallel.
    """
    jobs = [(det.aap_net, ts.inputs, ts.aap_labels, TrainConfig(Loss.BCE, epochs, batch_size, shuffle_seed=seed))]
    for i, net in enumerate(det.symbol_nets):
        jobs.append((net, ts.inputs, ts.symbol_labels[i],
                     TrainConfig(symbol_loss, epochs, batch_size, shuffle_seed=seed + i + 1)))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(_train_one, jobs))
    return [_train_one(j) for j in jobs]


# -- presets -------------------------------------------------------------------------


@dataclass(frozen=True)
class Preset:
    name: str
    cfg: GsmConfig
    aap_hidden: tuple
    symbol_hidden: tuple
    m_T: int
    train_snr_db: float
    epochs: int
    channel_mode: ChannelMode = ChannelMode.STATIC
    input_mode: InputMode = InputMode.RAW
    notes: str = ""


PRESETS = {
    "fig2": Preset("fig2", GsmConfig(4, 2, 4, BPSK), (16, 16, 8), (16, 16, 8), 10_000, 10.0, 20),
    "fig3a": Preset(
        "fig3a", GsmConfig(8, 4, 8, BPSK), (128, 64, 32, 16), (32, 16, 8, 4), 50_000, 10.0, 50,
        notes="n_rf=4 assumed (not stated for this system)",
    ),
    "fig3b": Preset(
        "fig3b", GsmConfig(16, 2, 16, BPSK), (320, 160, 80, 40, 20), (128, 64, 32, 16, 8), 50_000, 5.0, 10,
        notes="n_rf=2 assumed (not stated for this system)",
    ),
    "fig6": Preset(
        "fig6", GsmConfig(4, 2, 4, BPSK), (320, 256, 128, 64, 32), (320, 256, 128, 64, 32), 100_000, 10.0, 20,
        channel_mode=ChannelMode.VARYING, input_mode=InputMode.MMSE,
        notes="GSM dimensions reuse the fig2 system (not stated); m_T=100000 chosen for varying channels",
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def build_detector(cfg: GsmConfig, aap_hidden, symbol_hidden, rng: np.random.Generator,
                   input_mode: InputMode = InputMode.RAW, preset: str = "custom") -> ModularDetector:
    d = 2 * (cfg.n_t if InputMode(input_mode) is InputMode.MMSE else cfg.n_r)
    aap = Mlp.classifier([d, *aap_hidden, cfg.n_t], Activation.SIGMOID, rng)
    syms = [Mlp.classifier([d, *symbol_hidden, cfg.alphabet.size], Activation.SOFTMAX, rng) for _ in range(cfg.n_rf)]
    return ModularDetector(cfg, aap, syms, input_mode, preset)


def build_preset_detector(name: str, rng: np.random.Generator | None = None) -> ModularDetector:
    """Untrained modular detector with the layer sizes of a named preset."""
    p = get_preset(name)
    rng = np.random.default_rng(0) if rng is None else rng
    det = build_detector(p.cfg, p.aap_hidden, p.symbol_hidden, rng, p.input_mode, p.name)
    det.metadata = {"notes": p.notes} if p.notes else {}
    return det


SINGLE_DNN_HIDDEN = (32, 32, 64, 64, 32)


def build_single_dnn_detector(cfg: GsmConfig, rng: np.random.Generator | None = None,
                              hidden=SINGLE_DNN_HIDDEN, cap: int = SINGLE_DNN_CAP) -> SingleDnnDetector:
    """One softmax network with an output per signal vector."""
    if cfg.signal_set_size > cap:
        raise ValueError(
            f"single-DNN detector needs {cfg.signal_set_size} output neurons, above the cap of {cap}; "
            "use the modular detector"
        )
    rng = np.random.default_rng(0) if rng is None else rng
    net = Mlp.classifier([2 * cfg.n_r, *hidden, cfg.signal_set_size], Activation.SOFTMAX, rng)
    return SingleDnnDetector(cfg, net)


def train_single(det: SingleDnnDetector, ts: TrainingSet, epochs: int, seed: int = 0, batch_size: int = 32) -> list:
    T = ts.one_hot_indices(det.cfg.signal_set_size)
    return nn.train(det.net, ts.inputs, T, TrainConfig(Loss.CCE, epochs, batch_size, shuffle_seed=seed))[1]


# -- bundles -------------------------------------------------------------------------


def save_bundle(det: ModularDetector, directory, training: dict | None = None):
    """Write ``manifest.json`` plus one serialized file per sub-network."""
    os.makedirs(directory, exist_ok=True)
    files = ["aap.mlp"] + [f"sym{i + 1}.mlp" for i in range(len(det.symbol_nets))]
    for name, net in zip(files, det.nets):
        nn.save(net, os.path.join(directory, name))
    manifest = {
        "bundle_version": BUNDLE_VERSION,
        "mlp_format_version": nn.FORMAT_VERSION,
        "preset": det.preset,
        "gsm": det.cfg.to_dict(),
        "input_mode": det.input_mode.value,
        "training": training or {},
        "metadata": det.metadata,
        "nets": files,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_bundle(directory) -> ModularDetector:
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("bundle_version") != BUNDLE_VERSION:
        raise ValueError(f"unsupported bundle version {manifest.get('bundle_version')}")
    nets = [nn.load(os.path.join(directory, name)) for name in manifest["nets"]]
    return ModularDetector(
        GsmConfig.from_dict(manifest["gsm"]), nets[0], nets[1:], InputMode(manifest["input_mode"]),
        manifest.get("preset", "custom"), manifest.get("metadata", {}),
    )
