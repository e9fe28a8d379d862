"""Command-line entry point: ``gsmdnn <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, nn
from .bench import (
    EXPERIMENT_PRESETS,
    complexity_report,
    format_csv,
    preset_experiment,
    run_experiment,
    static_channel,
    train_network_detector,
)
from .channel import db_to_linear
from .config import ConfigError, load_experiment
from .detectors import OP_COUNT_CONVENTION
from .dnn import BUNDLE_VERSION, PRESETS, InputMode, load_bundle, save_bundle
from .gsm import index_to_bits
from .numerics import NotPositiveDefiniteError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("gsmdnn")


def _version_text() -> str:
    return (
        f"gsmdnn {__version__}\n"
        f"op-count convention: {OP_COUNT_CONVENTION}\n"
        f"mlp format version: {nn.FORMAT_VERSION}; bundle version: {BUNDLE_VERSION}"
    )


def _experiment(args):
    if getattr(args, "preset", None):
        exp = preset_experiment(args.preset)
    elif args.config:
        exp = load_experiment(args.config)
    else:
        raise ConfigError("give --preset or --config")
    if args.seed is not None:
        exp = replace(exp, seed=args.seed)
    return exp


def _emit(text: str, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_presets(args):
    print("experiments:")
    for name in EXPERIMENT_PRESETS:
        exp = preset_experiment(name)
        curves = ", ".join(c.name for c in exp.curves)
        print(f"  {name}: {exp.cfg.to_dict()} {exp.channel_mode.value} channel; curves: {curves}")
    print("detector presets:")
    for name, p in PRESETS.items():
        line = f"  {name}: aap {list(p.aap_hidden)}, symbol {list(p.symbol_hidden)}, m_T={p.m_T}, " \
               f"train {p.train_snr_db:g} dB, {p.epochs} epochs"
        print(line + (f" ({p.notes})" if p.notes else ""))
    return EXIT_OK


def cmd_complexity(args):
    rows = complexity_report(args.presets)
    cols = ["preset", "detector", "real_multiplies", "real_additions", "comparisons", "total", "parameters"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join("" if r[c] is None else str(r[c]) for c in cols))
    _emit("\n".join(lines) + "\n", args.out)
    print(f"# convention: {OP_COUNT_CONVENTION}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args):
    exp = _experiment(args)
    curves = run_experiment(exp, threads=args.threads)
    _emit(format_csv(curves), args.out)
    return EXIT_OK


def cmd_train(args):
    exp = _experiment(args)
    noise = exp.curves[0].noise
    for c in exp.curves:
        if c.kind == "DNN":
            noise = c.noise
            break
    H = static_channel(exp)
    det = train_network_detector(exp, "DNN", noise, H, threads=args.threads)
    out = args.out or f"bundle-{exp.name}"
    meta = dict(det.metadata)
    training = {k: meta.pop(k) for k in ("m_T", "train_snr_db", "epochs", "seed", "noise") if k in meta}
    det.metadata = meta
    save_bundle(det, out, training=training)
    if H is not None:
        np.save(os.path.join(out, "channel.npy"), H)
    print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


def cmd_detect(args):
    det = load_bundle(args.bundle)
    Y = np.load(args.input)
    if not np.iscomplexobj(Y):
        raise ConfigError("input must hold complex received vectors of shape (B, n_r)")
    H = snr = None
    if det.input_mode is InputMode.MMSE:
        if args.channel is None or args.snr_db is None:
            raise ConfigError("this detector needs --channel and --snr-db")
        H, snr = np.load(args.channel), db_to_linear(args.snr_db)
    idx = det.detect_indices(Y, H, snr)
    bits = index_to_bits(idx, det.cfg.rate)
    lines = ["index,bits"] + [f"{i},{''.join(map(str, b))}" for i, b in zip(idx.tolist(), bits)]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsmdnn", description="DNN and classical detection for GSM MIMO.",
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=_version_text())
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides preset/config)")
    p.add_argument("--out", default=None, help="output file or bundle directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--config", default=None, help="YAML experiment file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sweep", help="BER sweep, CSV output")
    sp.add_argument("--preset", choices=EXPERIMENT_PRESETS)
    sp.set_defaults(func=cmd_sweep)

    tp = sub.add_parser("train", help="train a modular detector and save a bundle")
    tp.add_argument("--preset", choices=EXPERIMENT_PRESETS)
    tp.set_defaults(func=cmd_train)

    dp = sub.add_parser("detect", help="detect received vectors from a .npy file")
    dp.add_argument("--bundle", required=True)
    dp.add_argument("--input", required=True, help=".npy array of complex y, shape (B, n_r)")
    dp.add_argument("--channel", help=".npy channel matrix (MMSE-input detectors)")
    dp.add_argument("--snr-db", type=float)
    dp.set_defaults(func=cmd_detect)

    cp = sub.add_parser("complexity", help="real-operation counts per detector")
    cp.add_argument("--presets", nargs="+", default=["fig3a", "fig3b"], choices=sorted(PRESETS))
    cp.set_defaults(func=cmd_complexity)

    pp = sub.add_parser("presets", help="preset listing")
    pp.add_argument("action", choices=["list"])
    pp.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (NotPositiveDefiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
