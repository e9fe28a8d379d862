"""Monte Carlo BER harness, experiment presets and complexity report.

Random streams are derived from the master seed so that results do not
depend on the thread count:

* ``(seed, 0)``: the static channel realization
* ``(seed, 1, k)``: initialization of trained network ``k``
* ``(seed, 2, k)``: training data of network ``k``
* ``(seed, 3, point, block)``: bits and noise of one simulation block
* ``(seed, 4, point)``: noise-only window for covariance estimation
* ``(seed, 5, point, block, tag)``: detector-internal randomness

Every SNR point is simulated in fixed-size blocks. Blocks may be computed
concurrently but are aggregated in block order, and a curve stops at the
first block where its stopping rule is met, so the thread count never
changes a result.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__, nn
from .channel import (
    ChannelMode,
    NoiseKind,
    NoiseModel,
    db_to_linear,
    draw_channel,
    estimate_noise_covariance,
    noise_variance,
    sample_noise,
    transmit_batch,
)
from .detectors import (
    OP_COUNT_CONVENTION,
    bit_errors,
    count_operations,
    ml_indices,
    mmse_indices,
    modified_ml_indices,
)
from .dnn import (
    InputMode,
    PRESETS,
    build_detector,
    build_single_dnn_detector,
    get_preset,
    make_training_set,
    train_modular,
    train_single,
)
from .gsm import GsmConfig, indices_to_vectors
from .numerics import make_rng

log = logging.getLogger(__name__)

CSV_HEADER = ["detector", "snr_db", "bits", "errors", "ber", "ci_lo", "ci_hi"]
COVARIANCE_WINDOW = 10_000

STREAM_CHANNEL, STREAM_INIT, STREAM_TRAIN, STREAM_BLOCK, STREAM_COV, STREAM_DETECTOR = range(6)


def wilson_interval(errors: int, n: int, z: float = 1.959963984540054):
    """Two-sided Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    p = errors / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the exact interval always contains p; clamp away rounding at k=0 and k=n
    return min(p, max(0.0, centre - half)), max(p, min(1.0, centre + half))


@dataclass(frozen=True)
class StoppingRule:
    min_errors: int = 200
    max_channel_uses: int = 2_000_000
    block_size: int = 10_000

    def __post_init__(self):
        if self.min_errors < 1 or self.max_channel_uses < 1 or self.block_size < 1:
            raise ValueError("stopping rule values must all be >= 1")


@dataclass(frozen=True)
class BerRow:
    detector: str
    snr_db: float
    bits: int
    errors: int
    channel_uses: int
    upper_bound: bool = False

    @property
    def ber(self) -> float:
        return self.errors / self.bits

    @property
    def ci(self):
        return wilson_interval(self.errors, self.bits)


@dataclass
class BerCurve:
    detector: str
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def snr_db(self) -> np.ndarray:
        return np.array([r.snr_db for r in self.rows])

    @property
    def ber(self) -> np.ndarray:
        return np.array([r.ber for r in self.rows])

    def row(self, snr_db: float) -> BerRow:
        for r in self.rows:
            if math.isclose(r.snr_db, snr_db):
                return r
        raise KeyError(snr_db)

    def snr_at(self, target_ber: float) -> float:
        """SNR where the curve crosses ``target_ber`` (log-linear interpolation).

        Returns ``nan`` if the curve never crosses the target on its grid.
        """
        s = self.snr_db
        lb = np.log10(np.maximum(self.ber, 1e-300))
        t = math.log10(target_ber)
        for i in range(len(s) - 1):
            if lb[i] >= t > lb[i + 1]:
                return float(s[i] + (lb[i] - t) / (lb[i] - lb[i + 1]) * (s[i + 1] - s[i]))
        return math.nan


# -- detectors as seen by the harness ----------------------------------------------
# Each takes a block (Y, H, snr_db, ctx, rng) and returns signal-set indices;
# ctx holds per-point data such as the true and estimated noise covariance.


class MlDetector:
    def __init__(self, cfg: GsmConfig):
        self.cfg = cfg

    def __call__(self, Y, H, snr_db, ctx, rng):
        return ml_indices(Y, H, self.cfg)


class MmseDetector:
    def __init__(self, cfg: GsmConfig):
        self.cfg = cfg

    def __call__(self, Y, H, snr_db, ctx, rng):
        return mmse_indices(Y, H, db_to_linear(snr_db), self.cfg)


class ModifiedMlDetector:
    """Whitened ML with the covariance estimated from a noise-only window."""

    def __init__(self, cfg: GsmConfig, known_covariance: bool = False):
        self.cfg = cfg
        self.known_covariance = known_covariance

    def __call__(self, Y, H, snr_db, ctx, rng):
        key = "true_cov" if self.known_covariance else "est_cov"
        return modified_ml_indices(Y, H, self.cfg, ctx[key])


class NetDetector:
    def __init__(self, det):
        self.det = det

    def __call__(self, Y, H, snr_db, ctx, rng):
        if getattr(self.det, "input_mode", InputMode.RAW) is InputMode.MMSE:
            return self.det.detect_indices(Y, H, db_to_linear(snr_db))
        return self.det.detect_indices(Y)


class RandomGuessDetector:
    def __init__(self, cfg: GsmConfig):
        self.cfg = cfg

    def __call__(self, Y, H, snr_db, ctx, rng):
        return rng.integers(0, self.cfg.signal_set_size, size=len(Y))


@dataclass(frozen=True)
class Scenario:
    """What is being simulated: GSM system, channel and noise process."""

    cfg: GsmConfig
    noise: NoiseModel = NoiseModel()
    channel_mode: ChannelMode = ChannelMode.STATIC
    H: np.ndarray | None = None

    def channel(self, rng, n):
        if self.channel_mode is ChannelMode.VARYING:
            return draw_channel(self.cfg.n_r, self.cfg.n_t, rng, size=n)
        return self.H


def _point_context(scn: Scenario, snr_db: float, seed: int, point: int) -> dict:
    ctx = {}
    if scn.channel_mode is ChannelMode.STATIC:
        sigma2 = float(noise_variance(scn.H, scn.cfg, snr_db))
        model = scn.noise.with_sigma2(sigma2)
        ctx["true_cov"] = model.covariance(scn.cfg.n_r)
        window = sample_noise(model, scn.cfg.n_r, make_rng(seed, STREAM_COV, point), size=COVARIANCE_WINDOW)
        ctx["est_cov"] = estimate_noise_covariance(window)
    return ctx


def _run_block(scn: Scenario, detectors: dict, snr_db: float, ctx: dict, seed: int, point: int, block: int, n: int):
    rng = make_rng(seed, STREAM_BLOCK, point, block)
    cfg = scn.cfg
    idx = rng.integers(0, cfg.signal_set_size, size=n)
    X = indices_to_vectors(idx, cfg)
    H = scn.channel(rng, n)
    Y = transmit_batch(H, X, scn.noise, noise_variance(H, cfg, snr_db), rng)
    out = {}
    for name, det in detectors.items():
        drng = make_rng(seed, STREAM_DETECTOR, point, block, zlib.crc32(name.encode()))
        out[name] = int(bit_errors(idx, det(Y, H, snr_db, ctx, drng), cfg.rate).sum())
    return out


def run_ber_points(scn: Scenario, detectors: dict, snr_db: float, seed: int, point: int = 0,
                   stop: StoppingRule = StoppingRule(), threads: int = 1) -> dict:
    """Simulate several detectors on shared data at one SNR point.

    Returns a :class:`BerRow` per detector name. All detectors see the same
    transmitted vectors and noise; each stops on its own rule.
    """
    ctx = _point_context(scn, snr_db, seed, point)
    rate = scn.cfg.rate
    n = stop.block_size
    max_blocks = max(1, math.ceil(stop.max_channel_uses / n))
    errors = dict.fromkeys(detectors, 0)
    uses = dict.fromkeys(detectors, 0)
    active = dict(detectors)
    block = 0
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        while active and block < max_blocks:
            wave = range(block, min(block + max(threads, 1), max_blocks))
            args = [(scn, active, snr_db, ctx, seed, point, b, n) for b in wave]
            results = list(pool.map(lambda a: _run_block(*a), args)) if pool else [_run_block(*a) for a in args]
            for res in results:
                for name in list(active):
                    errors[name] += res[name]
                    uses[name] += n
                    if errors[name] >= stop.min_errors:
                        del active[name]
                block += 1
                if not active:
                    break
    finally:
        if pool:
            pool.shutdown()
    return {
        name: BerRow(name, float(snr_db), uses[name] * rate, errors[name], uses[name],
                     upper_bound=errors[name] == 0)
        for name in detectors
    }


def run_ber_point(scn: Scenario, detector, snr_db: float, seed: int, point: int = 0,
                  stop: StoppingRule = StoppingRule(), threads: int = 1, name: str = "detector") -> BerRow:
    return run_ber_points(scn, {name: detector}, snr_db, seed, point, stop, threads)[name]


def sweep(scn: Scenario, detectors: dict, snr_grid, seed: int, stop: StoppingRule = StoppingRule(),
          threads: int = 1) -> list:
    """BER curves for every detector over an SNR grid."""
    grid = [float(s) for s in snr_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("SNR grid must be strictly increasing")
    curves = {name: BerCurve(name) for name in detectors}
    for point, snr in enumerate(grid):
        rows = run_ber_points(scn, detectors, snr, seed, point, stop, threads)
        for name, row in rows.items():
            curves[name].rows.append(row)
        log.info("snr %.1f dB: %s", snr, {k: f"{r.ber:.3e}" for k, r in rows.items()})
    return list(curves.values())


# -- experiments ----------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingSpec:
    m_T: int = 10_000
    snr_db: float = 10.0
    epochs: int = 20
    batch_size: int = 32

    def key(self, *parts) -> str:
        blob = json.dumps([self.m_T, self.snr_db, self.epochs, self.batch_size, *parts], sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class CurveSpec:
    """One curve: a detector kind evaluated under one noise process.

    ``kind`` is one of ML, MMSE, MML (estimated covariance), MML_TRUE,
    DNN, SINGLE_DNN, RANDOM.
    """

    kind: str
    noise: NoiseModel = NoiseModel()
    label: str = ""

    @property
    def name(self) -> str:
        return self.label or f"{self.kind}[{self.noise.label()}]"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    cfg: GsmConfig
    curves: tuple
    snr_grid: tuple
    channel_mode: ChannelMode = ChannelMode.STATIC
    input_mode: InputMode = InputMode.RAW
    aap_hidden: tuple = (16, 16, 8)
    symbol_hidden: tuple = (16, 16, 8)
    training: TrainingSpec = TrainingSpec()
    stop: StoppingRule = StoppingRule()
    seed: int = 1
    notes: str = ""

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.snr_grid, self.snr_grid[1:])):
            raise ValueError("SNR grid must be strictly increasing")
        if not self.curves:
            raise ValueError("experiment needs at least one curve")


_IID = NoiseModel()
_CORR = NoiseModel(NoiseKind.CORRELATED, rho_n=0.4)
_T5 = NoiseModel(NoiseKind.STUDENT_T, nu=5.0)
_T10 = NoiseModel(NoiseKind.STUDENT_T, nu=10.0)


def preset_experiment(name: str, seed: int = 1) -> ExperimentConfig:
    """Named preset experiment (fig2 to fig6), sized for a desktop."""
    fig = {"fig4": "fig2", "fig5": "fig2"}.get(name, name)
    p = get_preset(fig)
    small = tuple(float(s) for s in range(0, 17, 2))
    large = tuple(float(s) for s in range(0, 11, 2))
    curves = {
        "fig2": (CurveSpec("ML"), CurveSpec("MMSE"), CurveSpec("DNN"), CurveSpec("SINGLE_DNN")),
        "fig3a": (CurveSpec("MMSE"), CurveSpec("DNN")),
        "fig3b": (CurveSpec("MMSE"), CurveSpec("DNN")),
        "fig4": (CurveSpec("ML", _CORR), CurveSpec("MML", _CORR), CurveSpec("DNN", _CORR), CurveSpec("ML", _IID)),
        "fig5": (
            CurveSpec("ML", _T5), CurveSpec("ML", _T10), CurveSpec("DNN", _T5), CurveSpec("DNN", _T10),
            CurveSpec("ML", _IID), CurveSpec("DNN", _IID),
        ),
        "fig6": (CurveSpec("ML"), CurveSpec("MMSE"), CurveSpec("DNN")),
    }
    if name not in curves:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(curves)}")
    return ExperimentConfig(
        name=name,
        cfg=p.cfg,
        curves=curves[name],
        snr_grid=large if name in ("fig3a", "fig3b") else small,
        channel_mode=p.channel_mode,
        input_mode=p.input_mode,
        aap_hidden=p.aap_hidden,
        symbol_hidden=p.symbol_hidden,
        training=TrainingSpec(p.m_T, p.train_snr_db, p.epochs),
        seed=seed,
        notes=p.notes,
    )


EXPERIMENT_PRESETS = ("fig2", "fig3a", "fig3b", "fig4", "fig5", "fig6")


def static_channel(exp: ExperimentConfig):
    if exp.channel_mode is ChannelMode.VARYING:
        return None
    return draw_channel(exp.cfg.n_r, exp.cfg.n_t, make_rng(exp.seed, STREAM_CHANNEL))


_TRAINED_CACHE: dict = {}


def train_network_detector(exp: ExperimentConfig, kind: str, noise: NoiseModel, H, threads: int = 1):
    """Train (or fetch from the in-process cache) a DNN detector for one curve."""
    h_digest = hashlib.sha256(np.ascontiguousarray(H).tobytes()).hexdigest()[:16] if H is not None else "varying"
    key = exp.training.key(kind, exp.cfg.to_dict(), noise.to_dict(), exp.channel_mode.value, exp.input_mode.value,
                           exp.aap_hidden, exp.symbol_hidden, exp.seed, h_digest)
    if key in _TRAINED_CACHE:
        return _TRAINED_CACHE[key]
    # per-curve streams keep each network independent of the curve list order
    tag = zlib.crc32(key.encode())
    tr = exp.training
    ts = make_training_set(exp.cfg, tr.m_T, tr.snr_db, noise, make_rng(exp.seed, STREAM_TRAIN, tag), H=H,
                           channel_mode=exp.channel_mode, input_mode=exp.input_mode)
    try:
        if kind == "SINGLE_DNN":
            det = build_single_dnn_detector(exp.cfg, make_rng(exp.seed, STREAM_INIT, tag))
            det.input_mode = exp.input_mode
            hist = [train_single(det, ts, tr.epochs, seed=tag, batch_size=tr.batch_size)]
        else:
            det = build_detector(exp.cfg, exp.aap_hidden, exp.symbol_hidden, make_rng(exp.seed, STREAM_INIT, tag),
                                 exp.input_mode, exp.name)
            hist = train_modular(det, ts, tr.epochs, seed=tag, batch_size=tr.batch_size, threads=threads)
    except nn.TrainingDivergedError as exc:
        raise nn.TrainingDivergedError(f"{exp.name} / {kind}[{noise.label()}]: {exc}") from exc
    det.metadata = {"m_T": tr.m_T, "train_snr_db": tr.snr_db, "epochs": tr.epochs, "seed": exp.seed,
                    "noise": noise.to_dict(), "loss_history": hist}
    _TRAINED_CACHE[key] = det
    return det


def _harness_detector(spec: CurveSpec, exp: ExperimentConfig, H, threads: int):
    k = spec.kind.upper()
    if k == "ML":
        return MlDetector(exp.cfg)
    if k == "MMSE":
        return MmseDetector(exp.cfg)
    if k in ("MML", "MML_TRUE"):
        if exp.channel_mode is ChannelMode.VARYING:
            raise ValueError("modified ML is only defined for a static channel")
        return ModifiedMlDetector(exp.cfg, known_covariance=k == "MML_TRUE")
    if k in ("DNN", "SINGLE_DNN"):
        return NetDetector(train_network_detector(exp, k, spec.noise, H, threads))
    if k == "RANDOM":
        return RandomGuessDetector(exp.cfg)
    raise ValueError(f"unknown detector kind {spec.kind!r}")


def run_experiment(exp: ExperimentConfig | str, threads: int = 1, out=None, seed: int | None = None) -> list:
    """Train what is needed, sweep the SNR grid and optionally write CSV.

    ``exp`` is an :class:`ExperimentConfig` or a preset name. Curves that
    share a noise process are simulated on the same random data.
    """
    if isinstance(exp, str):
        exp = preset_experiment(exp, seed=1 if seed is None else seed)
    elif seed is not None:
        exp = replace(exp, seed=seed)
    H = static_channel(exp)
    by_noise: dict = {}
    for spec in exp.curves:
        by_noise.setdefault(spec.noise, []).append(spec)
    curves = {}
    for noise, specs in by_noise.items():
        dets = {s.name: _harness_detector(s, exp, H, threads) for s in specs}
        scn = Scenario(exp.cfg, noise, exp.channel_mode, H)
        for c in sweep(scn, dets, exp.snr_grid, exp.seed, exp.stop, threads):
            curves[c.detector] = c
    meta = {"preset": exp.name, "seed": exp.seed, "version": __version__, "notes": exp.notes,
            "channel_mode": exp.channel_mode.value, "gsm": exp.cfg.to_dict()}
    ordered = [curves[s.name] for s in exp.curves]
    for c in ordered:
        c.metadata = dict(meta, upper_bound_snrs=[r.snr_db for r in c.rows if r.upper_bound])
    if out is not None:
        write_csv(ordered, out)
    return ordered


def format_csv(curves) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in curves:
        for r in c.rows:
            lo, hi = r.ci
            w.writerow([c.detector, repr(r.snr_db), r.bits, r.errors, repr(r.ber), repr(lo), repr(hi)])
    return buf.getvalue()


def write_csv(curves, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(format_csv(curves))


def read_csv(path) -> list:
    curves: dict = {}
    with open(path, encoding="utf-8", newline="") as f:
        for rec in csv.DictReader(f):
            bits, errors = int(rec["bits"]), int(rec["errors"])
            c = curves.setdefault(rec["detector"], BerCurve(rec["detector"]))
            c.rows.append(BerRow(rec["detector"], float(rec["snr_db"]), bits, errors, 0, errors == 0))
    return list(curves.values())


# -- complexity -------------------------------------------------------------------------


def complexity_report(presets=("fig3a", "fig3b")) -> list:
    """Per-detector real-operation counts for each preset (no randomness)."""
    rows = []
    for name in presets:
        p = get_preset(name)
        d = 2 * (p.cfg.n_t if p.input_mode is InputMode.MMSE else p.cfg.n_r)
        nets = [[d, *p.aap_hidden, p.cfg.n_t]] + [[d, *p.symbol_hidden, p.cfg.alphabet.size]] * p.cfg.n_rf
        for det in ("ML", "MMSE", "DNN"):
            oc = count_operations(det, p.cfg, nets if det == "DNN" else None)
            rows.append({
                "preset": name,
                "detector": det,
                "real_multiplies": oc.real_multiplies,
                "real_additions": oc.real_additions,
                "comparisons": oc.comparisons,
                "total": oc.total,
                "parameters": sum(nn.parameter_count(s) for s in nets) if det == "DNN" else None,
                "convention": OP_COUNT_CONVENTION,
            })
    return rows
