"""YAML experiment files.

A file describes one experiment. Every section is optional except ``gsm``
(or ``preset``); missing values fall back to the defaults of
:class:`~gsmdnn.bench.ExperimentConfig`. Example::

    name: corr-demo
    seed: 7
    gsm: {n_t: 4, n_rf: 2, n_r: 4, alphabet: BPSK}
    channel: {mode: static}
    noise: {kind: correlated, rho_n: 0.4}
    detectors: [ML, MML, {kind: ML, noise: {kind: iid}}]
    network: {aap_hidden: [16, 16, 8], symbol_hidden: [16, 16, 8], input_mode: raw_y}
    training: {m_T: 10000, snr_db: 10, epochs: 20, batch_size: 32}
    sweep: {snr_db: [0, 4, 8, 12], min_errors: 200, max_channel_uses: 2000000, block_size: 10000}

``preset: fig4`` starts from a preset experiment; other sections override it.
Detectors without their own ``noise`` use the top-level ``noise`` section.
"""

from __future__ import annotations

from dataclasses import replace

import yaml

from .bench import CurveSpec, ExperimentConfig, StoppingRule, TrainingSpec, preset_experiment
from .channel import ChannelMode, NoiseModel
from .dnn import InputMode
from .gsm import GsmConfig

_SECTIONS = {"name", "preset", "seed", "gsm", "channel", "noise", "detectors", "network", "training", "sweep", "notes"}


class ConfigError(ValueError):
    pass


def _section(doc, key) -> dict:
    sec = doc.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {key!r} must be a mapping")
    return sec


def _grid(spec):
    if isinstance(spec, dict):
        start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        n = int(round((stop - start) / step)) + 1
        return tuple(start + i * step for i in range(n))
    return tuple(float(s) for s in spec)


def experiment_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at top level")
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        if "preset" in doc:
            exp = preset_experiment(str(doc["preset"]), seed=int(doc.get("seed", 1)))
        elif "gsm" in doc:
            exp = ExperimentConfig(name="custom", cfg=GsmConfig.from_dict(_section(doc, "gsm")),
                                   curves=(CurveSpec("ML"),), snr_grid=(0.0,))
        else:
            raise ConfigError("config needs either 'preset' or a 'gsm' section")
        changes = {}
        if "name" in doc:
            changes["name"] = str(doc["name"])
        if "seed" in doc:
            changes["seed"] = int(doc["seed"])
        if "notes" in doc:
            changes["notes"] = str(doc["notes"])
        if "gsm" in doc:
            changes["cfg"] = GsmConfig.from_dict(_section(doc, "gsm"))
        ch = _section(doc, "channel")
        if "mode" in ch:
            changes["channel_mode"] = ChannelMode(ch["mode"])
        base_noise = NoiseModel.from_dict(_section(doc, "noise"))
        if "detectors" in doc:
            curves = []
            for d in doc["detectors"]:
                if isinstance(d, str):
                    d = {"kind": d}
                noise = NoiseModel.from_dict(d["noise"]) if "noise" in d else base_noise
                curves.append(CurveSpec(str(d["kind"]).upper(), noise, str(d.get("label", ""))))
            changes["curves"] = tuple(curves)
        elif "noise" in doc:
            changes["curves"] = tuple(replace(c, noise=base_noise) for c in exp.curves)
        net = _section(doc, "network")
        if "aap_hidden" in net:
            changes["aap_hidden"] = tuple(int(n) for n in net["aap_hidden"])
        if "symbol_hidden" in net:
            changes["symbol_hidden"] = tuple(int(n) for n in net["symbol_hidden"])
        if "input_mode" in net:
            changes["input_mode"] = InputMode(net["input_mode"])
        tr = _section(doc, "training")
        if tr:
            t = exp.training
            changes["training"] = TrainingSpec(
                int(tr.get("m_T", t.m_T)), float(tr.get("snr_db", t.snr_db)),
                int(tr.get("epochs", t.epochs)), int(tr.get("batch_size", t.batch_size)),
            )
        sw = _section(doc, "sweep")
        if "snr_db" in sw:
            changes["snr_grid"] = _grid(sw["snr_db"])
        if {"min_errors", "max_channel_uses", "block_size"} & set(sw):
            s = exp.stop
            changes["stop"] = StoppingRule(
                int(sw.get("min_errors", s.min_errors)), int(float(sw.get("max_channel_uses", s.max_channel_uses))),
                int(sw.get("block_size", s.block_size)),
            )
        return replace(exp, **changes)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc


def load_experiment(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return experiment_from_dict(doc)
