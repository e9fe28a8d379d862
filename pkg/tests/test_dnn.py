import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsmdnn import nn
from gsmdnn.channel import ChannelMode, NoiseModel, draw_channel
from gsmdnn.detectors import mmse_estimate
from gsmdnn.dnn import (
    InputMode,
    ModularDetector,
    PRESETS,
    build_preset_detector,
    build_single_dnn_detector,
    defeaturize,
    featurize,
    get_preset,
    load_bundle,
    make_training_set,
    mmse_preprocess,
    save_bundle,
    select_aap,
    select_aap_ranks,
    train_modular,
    train_single,
)
from gsmdnn.gsm import BPSK, QAM4, GsmConfig, indices_to_vectors, vectors_to_indices
from gsmdnn.nn import Activation, Mlp
from gsmdnn.numerics import make_rng

FIG2 = GsmConfig(4, 2, 4, BPSK)
CLAMP = 1e-12


def bernoulli_oracle(p, cfg):
    """Independent selector: valid top-k if any, else best log-likelihood over T_A (first wins ties)."""
    order = sorted(range(cfg.n_t), key=lambda i: (-p[i], i))
    top = tuple(sorted(order[: cfg.n_rf]))
    valid = [a.active_indices for a in cfg.aaps]
    if top in valid:
        return top
    pc = np.clip(p, CLAMP, 1 - CLAMP)

    def score(a):
        t = np.isin(np.arange(cfg.n_t), a)
        return float(np.sum(np.where(t, np.log(pc), np.log(1 - pc))))

    scores = [score(a) for a in valid]
    best = max(scores)
    return next(a for a, s in zip(valid, scores) if s >= best - 1e-9 * max(1.0, abs(best)))


class TestFeaturize:
    def test_example(self):
        np.testing.assert_array_equal(featurize([1 + 2j, 3 - 1j]), [1, 3, 2, -1])

    def test_real_input(self):
        assert np.all(featurize(np.array([1.0, -2.0, 4.0]))[3:] == 0)

    def test_round_trip(self):
        y = np.random.default_rng(0).standard_normal((5, 3)) + 1j
        np.testing.assert_array_equal(defeaturize(featurize(y)), y)


class TestSelectAap:
    def test_valid_top_k(self):
        assert select_aap([0.9, 0.8, 0.1, 0.2], FIG2).active_indices == (0, 1)

    def test_invalid_top_k_falls_back(self):
        # top-2 {1,3} is not a valid pattern; {1,2} has the best Bernoulli score
        assert select_aap([0.1, 0.9, 0.2, 0.8], FIG2).active_indices == (1, 2)

    def test_fallback_scores_by_hand(self):
        p = np.array([0.1, 0.9, 0.2, 0.8])
        score = {a: sum(math.log(p[i]) if i in a else math.log(1 - p[i]) for i in range(4))
                 for a in [(0, 1), (0, 2), (1, 2), (0, 3)]}
        assert max(score, key=score.get) == (1, 2)

    def test_uniform_tie_break(self):
        assert select_aap([0.5] * 4, FIG2).active_indices == (0, 1)

    def test_batched_matches_scalar(self):
        P = np.random.default_rng(1).uniform(size=(200, 4))
        ranks = select_aap_ranks(P, FIG2)
        for p, r in zip(P, ranks):
            assert FIG2.aaps[r] == select_aap(p, FIG2)

    @settings(max_examples=200, deadline=None)
    @given(st.sampled_from([(4, 2), (5, 2), (5, 3), (8, 4), (6, 3)]),
           st.lists(st.floats(0, 1), min_size=8, max_size=8))
    def test_matches_oracle(self, dims, probs):
        cfg = GsmConfig(dims[0], dims[1], dims[0], BPSK)
        p = np.array(probs[: cfg.n_t])
        assert select_aap(p, cfg).active_indices == bernoulli_oracle(p, cfg)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.01, 0.99), min_size=5, max_size=5), st.integers(0, 4), st.floats(0, 0.5))
    def test_monotone_probability(self, probs, i, bump):
        cfg = GsmConfig(5, 2, 5, BPSK)
        p = np.array(probs)
        before = select_aap(p, cfg)
        if i not in before.active_indices:
            return
        q = p.copy()
        q[i] = min(1.0, p[i] + bump)
        assert i in select_aap(q, cfg).active_indices

    def test_flat_vectors_stay_valid(self):
        valid = {a.active_indices for a in valid_cfg().aaps}
        for p in (np.zeros(5), np.ones(5), np.full(5, 0.5), np.array([1, 0, 1, 0, 1.0])):
            assert select_aap(p, valid_cfg()).active_indices in valid


def valid_cfg():
    return GsmConfig(5, 2, 5, BPSK)


class TestMmsePreprocess:
    def test_high_snr_recovers_x(self):
        H = draw_channel(4, 4, make_rng(0))
        x = indices_to_vectors(np.array([9]), FIG2)[0]
        np.testing.assert_allclose(mmse_preprocess(H @ x, H, 1e12), x, atol=1e-6)

    def test_identity_unit_snr(self):
        y = np.array([1 + 1j, 2, -3j, 0.5])
        np.testing.assert_allclose(mmse_preprocess(y, np.eye(4), 1.0), y / 2)

    def test_consistent_with_classical(self):
        rng = make_rng(2)
        H = draw_channel(4, 4, rng)
        Y = draw_channel(10, 4, rng)
        np.testing.assert_array_equal(mmse_preprocess(Y, H, 7.0), mmse_estimate(Y, H, 7.0))


class TestTrainingSet:
    def test_fig2_shapes(self):
        H = draw_channel(4, 4, make_rng(0))
        ts = make_training_set(FIG2, 10_000, 10.0, NoiseModel(), make_rng(1), H=H)
        assert ts.inputs.shape == (10_000, 8)
        assert ts.aap_labels.shape == (10_000, 4)
        assert [s.shape for s in ts.symbol_labels] == [(10_000, 2)] * 2
        assert np.all(ts.aap_labels.sum(axis=1) == 2)
        assert all(np.all(s.sum(axis=1) == 1) for s in ts.symbol_labels)

    def test_noiseless_identity_channel(self):
        ts = make_training_set(FIG2, 50, 400.0, NoiseModel(), make_rng(3), H=np.eye(4))
        np.testing.assert_allclose(ts.inputs, featurize(indices_to_vectors(ts.indices, FIG2)), atol=1e-15)

    def test_labels_match_indices(self):
        cfg = GsmConfig(5, 3, 4, QAM4)
        ts = make_training_set(cfg, 300, 10.0, NoiseModel(), make_rng(4), H=draw_channel(4, 5, make_rng(5)))
        X = indices_to_vectors(ts.indices, cfg)
        np.testing.assert_array_equal(ts.aap_labels, (np.abs(X) > 0).astype(float))
        for b in range(20):
            active = np.flatnonzero(ts.aap_labels[b])
            for i, a in enumerate(active):
                assert QAM4.array[np.argmax(ts.symbol_labels[i][b])] == X[b, a]

    def test_varying_channel_mmse_inputs(self):
        ts = make_training_set(FIG2, 20, 10.0, NoiseModel(), make_rng(6),
                               channel_mode=ChannelMode.VARYING, input_mode=InputMode.MMSE)
        assert ts.inputs.shape == (20, 8)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            make_training_set(FIG2, 0, 10.0, NoiseModel(), make_rng(0), H=np.eye(4))

    def test_static_needs_h(self):
        with pytest.raises(ValueError):
            make_training_set(FIG2, 5, 10.0, NoiseModel(), make_rng(0))


class TestPresets:
    def test_fig2_sizes(self):
        det = build_preset_detector("fig2")
        assert det.aap_net.layer_sizes == [8, 16, 16, 8, 4]
        assert [n.layer_sizes for n in det.symbol_nets] == [[8, 16, 16, 8, 2]] * 2
        assert sum(nn.parameter_count(n) for n in det.nets) == 1600

    def test_fig3b_aap(self):
        det = build_preset_detector("fig3b")
        assert det.aap_net.layer_sizes == [32, 320, 160, 80, 40, 20, 16]
        assert det.aap_net.activations[-1] is Activation.SIGMOID
        assert set(det.aap_net.activations[:-1]) == {Activation.RELU}

    def test_fig3a(self):
        det = build_preset_detector("fig3a")
        assert det.aap_net.layer_sizes == [16, 128, 64, 32, 16, 8]
        assert det.symbol_nets[0].layer_sizes == [16, 32, 16, 8, 4, 2]
        assert len(det.symbol_nets) == 4

    def test_fig6_uses_mmse_width(self):
        det = build_preset_detector("fig6")
        assert det.input_mode is InputMode.MMSE
        assert det.aap_net.layer_sizes[0] == 2 * det.cfg.n_t
        assert det.aap_net.layer_sizes[1:-1] == [320, 256, 128, 64, 32]

    def test_unknown(self):
        with pytest.raises(ValueError):
            build_preset_detector("fig9")

    def test_table_values(self):
        p = get_preset("fig2")
        assert (p.m_T, p.train_snr_db) == (10_000, 10.0)
        assert set(PRESETS) == {"fig2", "fig3a", "fig3b", "fig6"}


class TestModularDetector:
    def test_closure_fuzz(self):
        for name in ("fig2", "fig3a"):
            det = build_preset_detector(name, make_rng(1))
            cfg = det.cfg
            Y = draw_channel(10_000, cfg.n_r, make_rng(2)) * 3
            idx = det.detect_indices(Y)
            assert np.all((idx >= 0) & (idx < cfg.signal_set_size))
            X = indices_to_vectors(idx, cfg)
            np.testing.assert_array_equal(vectors_to_indices(X, cfg), idx)

    def test_deterministic(self):
        det = build_preset_detector("fig2", make_rng(1))
        y = np.array([1, -1j, 0.3, 2])
        assert det.detect(y) == det.detect(y)

    def test_shape_mismatch(self):
        det = build_preset_detector("fig2", make_rng(1))
        with pytest.raises(ValueError):
            ModularDetector(GsmConfig(5, 2, 4, BPSK), det.aap_net, det.symbol_nets)
        with pytest.raises(ValueError):
            ModularDetector(FIG2, det.aap_net, det.symbol_nets[:1])

    def test_mmse_mode_needs_channel(self):
        det = build_preset_detector("fig6", make_rng(1))
        with pytest.raises(ValueError):
            det.detect(np.ones(4))
        det.detect(np.ones(4), np.eye(4), 10.0)

    def test_noiseless_training_accuracy(self):
        det = build_preset_detector("fig2", make_rng(7))
        ts = make_training_set(FIG2, 2000, 400.0, NoiseModel(), make_rng(8), H=np.eye(4))
        train_modular(det, ts, epochs=20, seed=3)
        Y = defeaturize(ts.inputs)
        assert np.mean(det.detect_indices(Y) == ts.indices) == 1.0

    def test_threads_do_not_change_result(self):
        ts = make_training_set(FIG2, 300, 10.0, NoiseModel(), make_rng(8), H=draw_channel(4, 4, make_rng(9)))
        out = []
        for threads in (1, 3):
            det = build_preset_detector("fig2", make_rng(7))
            hist = train_modular(det, ts, epochs=2, seed=3, threads=threads)
            out.append((hist, [nn.dumps(n) for n in det.nets]))
        assert out[0] == out[1]

    def test_loss_decreases(self):
        det = build_preset_detector("fig2", make_rng(7))
        ts = make_training_set(FIG2, 10_000, 10.0, NoiseModel(), make_rng(8), H=draw_channel(4, 4, make_rng(9)))
        for hist in train_modular(det, ts, epochs=20, seed=3):
            assert hist[-1] <= hist[0]


class TestSingleDnn:
    def test_width(self):
        det = build_single_dnn_detector(FIG2)
        assert det.net.layer_sizes[-1] == 16 and det.net.layer_sizes[0] == 8

    def test_cap(self):
        with pytest.raises(ValueError, match="cap"):
            build_single_dnn_detector(GsmConfig(10, 4, 10, QAM4), cap=2**14)

    def test_closure(self):
        det = build_single_dnn_detector(FIG2, make_rng(0))
        idx = det.detect_indices(draw_channel(1000, 4, make_rng(1)))
        assert np.all((idx >= 0) & (idx < 16))

    def test_one_hot_round_trip(self):
        ts = make_training_set(FIG2, 100, 10.0, NoiseModel(), make_rng(2), H=np.eye(4))
        np.testing.assert_array_equal(ts.one_hot_indices(16).argmax(axis=1), ts.indices)

    def test_trains(self):
        det = build_single_dnn_detector(FIG2, make_rng(0))
        ts = make_training_set(FIG2, 2000, 400.0, NoiseModel(), make_rng(2), H=np.eye(4))
        hist = train_single(det, ts, epochs=30)
        assert hist[-1] < hist[0]
        assert np.mean(det.detect_indices(defeaturize(ts.inputs)) == ts.indices) == 1.0


class TestBundle:
    def test_round_trip(self, tmp_path):
        det = build_preset_detector("fig6", make_rng(3))
        save_bundle(det, tmp_path / "b", training={"seed": 5})
        back = load_bundle(tmp_path / "b")
        assert back.cfg == det.cfg and back.input_mode is det.input_mode and back.preset == "fig6"
        assert [nn.dumps(n) for n in back.nets] == [nn.dumps(n) for n in det.nets]
        manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert manifest["training"] == {"seed": 5}

    def test_version_check(self, tmp_path):
        save_bundle(build_preset_detector("fig2"), tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        m["bundle_version"] = 99
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(ValueError):
            load_bundle(tmp_path)
