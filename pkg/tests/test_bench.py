import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsmdnn.bench import (
    CSV_HEADER,
    BerCurve,
    BerRow,
    CurveSpec,
    ExperimentConfig,
    MlDetector,
    ModifiedMlDetector,
    MmseDetector,
    RandomGuessDetector,
    Scenario,
    StoppingRule,
    TrainingSpec,
    complexity_report,
    format_csv,
    preset_experiment,
    read_csv,
    run_ber_point,
    run_ber_points,
    run_experiment,
    sweep,
    wilson_interval,
)
from gsmdnn.channel import NoiseKind, NoiseModel, draw_channel
from gsmdnn.gsm import BPSK, GsmConfig
from gsmdnn.numerics import make_rng

FIG2 = GsmConfig(4, 2, 4, BPSK)


def fig2_scenario(noise=NoiseModel()):
    return Scenario(FIG2, noise, H=draw_channel(4, 4, make_rng(1, 0)))


class TestWilson:
    def test_known_value(self):
        # 10 of 100 at 95%: standard textbook interval
        lo, hi = wilson_interval(10, 100)
        assert abs(lo - 0.05523) < 1e-4 and abs(hi - 0.17437) < 1e-4

    def test_zero_errors(self):
        lo, hi = wilson_interval(0, 1000)
        assert lo == 0.0 and 0 < hi < 0.005

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 10**7), st.data())
    def test_contains_estimate(self, n, data):
        k = data.draw(st.integers(0, n))
        lo, hi = wilson_interval(k, n)
        assert 0 <= lo <= k / n <= hi <= 1


class TestStoppingRule:
    def test_invalid(self):
        with pytest.raises(ValueError):
            StoppingRule(min_errors=0)

    def test_soundness(self):
        stop = StoppingRule(min_errors=50, max_channel_uses=30_000, block_size=5_000)
        rows = run_ber_points(fig2_scenario(), {"ml": MlDetector(FIG2), "mmse": MmseDetector(FIG2)}, 10.0, 3, stop=stop)
        for r in rows.values():
            assert r.errors >= 50 or r.channel_uses >= 30_000
            assert r.bits == r.channel_uses * FIG2.rate


class TestBerPoint:
    def test_noiseless_ml(self):
        row = run_ber_point(fig2_scenario(), MlDetector(FIG2), 300.0, 1,
                            stop=StoppingRule(200, 50_000, 10_000))
        assert row.errors == 0 and row.upper_bound and row.channel_uses == 50_000

    def test_random_guess(self):
        stop = StoppingRule(min_errors=10**9, max_channel_uses=25_000, block_size=5_000)
        row = run_ber_point(fig2_scenario(), RandomGuessDetector(FIG2), 0.0, 2, stop=stop)
        assert row.bits == 100_000
        assert abs(row.ber - 0.5) <= 0.01

    @pytest.mark.parametrize("threads", [2, 3, 5])
    def test_thread_invariance(self, threads):
        stop = StoppingRule(min_errors=300, max_channel_uses=100_000, block_size=2_000)
        dets = {"ml": MlDetector(FIG2), "mmse": MmseDetector(FIG2), "rand": RandomGuessDetector(FIG2)}
        one = run_ber_points(fig2_scenario(), dets, 6.0, 9, stop=stop, threads=1)
        many = run_ber_points(fig2_scenario(), dets, 6.0, 9, stop=stop, threads=threads)
        assert one == many

    def test_shared_data_mml_equals_ml_for_white_noise_known_cov(self):
        stop = StoppingRule(min_errors=100, max_channel_uses=40_000, block_size=4_000)
        rows = run_ber_points(fig2_scenario(), {"ml": MlDetector(FIG2), "mml": ModifiedMlDetector(FIG2, True)},
                              8.0, 4, stop=stop)
        assert rows["ml"].errors == rows["mml"].errors


class TestCurve:
    def curve(self):
        c = BerCurve("x")
        for s, e in [(0, 1000), (2, 100), (4, 10), (6, 0)]:
            c.rows.append(BerRow("x", float(s), 10_000, e, 2_500, e == 0))
        return c

    def test_snr_at_interpolates(self):
        assert math.isclose(self.curve().snr_at(1e-2), 2.0)
        assert math.isclose(self.curve().snr_at(10**-2.5), 3.0)

    def test_snr_at_never_crossing(self):
        assert math.isnan(self.curve().snr_at(0.5))

    def test_row_lookup(self):
        assert self.curve().row(4.0).errors == 10
        with pytest.raises(KeyError):
            self.curve().row(5.0)

    def test_sweep_rejects_unsorted_grid(self):
        with pytest.raises(ValueError):
            sweep(fig2_scenario(), {"ml": MlDetector(FIG2)}, [2.0, 0.0], 1)


def tiny_experiment(**kw):
    base = dict(
        name="tiny", cfg=FIG2,
        curves=(CurveSpec("ML"), CurveSpec("MMSE"), CurveSpec("DNN"), CurveSpec("RANDOM")),
        snr_grid=(0.0, 6.0), training=TrainingSpec(m_T=500, epochs=2),
        stop=StoppingRule(min_errors=50, max_channel_uses=20_000, block_size=2_000), seed=5,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestExperiment:
    def test_csv_layout(self, tmp_path):
        out = tmp_path / "r.csv"
        curves = run_experiment(tiny_experiment(), out=out)
        text = out.read_bytes().decode()
        assert "\r" not in text
        lines = text.splitlines()
        assert lines[0] == ",".join(CSV_HEADER)
        assert len(lines) == 1 + 4 * 2
        back = read_csv(out)
        assert [c.detector for c in back] == [c.detector for c in curves]
        for a, b in zip(back, curves):
            assert [(r.bits, r.errors) for r in a.rows] == [(r.bits, r.errors) for r in b.rows]
            np.testing.assert_array_equal(a.ber, b.ber)

    def test_byte_identical_reruns_any_thread_count(self):
        a = format_csv(run_experiment(tiny_experiment(), threads=1))
        b = format_csv(run_experiment(tiny_experiment(), threads=4))
        assert a == b

    def test_seed_changes_counts(self):
        a = format_csv(run_experiment(tiny_experiment()))
        b = format_csv(run_experiment(tiny_experiment(seed=6)))
        assert a != b

    def test_metadata(self):
        curves = run_experiment(tiny_experiment())
        assert curves[0].metadata["seed"] == 5 and curves[0].metadata["preset"] == "tiny"

    def test_mml_rejected_for_varying_channel(self):
        from gsmdnn.channel import ChannelMode

        exp = tiny_experiment(curves=(CurveSpec("MML"),), channel_mode=ChannelMode.VARYING)
        with pytest.raises(ValueError):
            run_experiment(exp)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            run_experiment(tiny_experiment(curves=(CurveSpec("SPHERE"),)))

    def test_invalid_grid(self):
        with pytest.raises(ValueError):
            tiny_experiment(snr_grid=(4.0, 4.0))


class TestPresets:
    def test_fig2_curves(self):
        exp = preset_experiment("fig2")
        assert [c.kind for c in exp.curves] == ["ML", "MMSE", "DNN", "SINGLE_DNN"]
        assert exp.snr_grid[0] <= 0 and exp.snr_grid[-1] >= 12

    def test_fig4_curves(self):
        exp = preset_experiment("fig4")
        kinds = [(c.kind, c.noise.kind) for c in exp.curves]
        assert ("MML", NoiseKind.CORRELATED) in kinds and ("ML", NoiseKind.IID_GAUSSIAN) in kinds
        assert all(c.noise.rho_n == 0.4 for c in exp.curves if c.noise.kind is NoiseKind.CORRELATED)

    def test_fig5_curves(self):
        nus = {c.noise.nu for c in preset_experiment("fig5").curves if c.noise.kind is NoiseKind.STUDENT_T}
        assert nus == {5.0, 10.0}

    def test_large_grid(self):
        assert preset_experiment("fig3a").snr_grid == (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)

    def test_unknown(self):
        with pytest.raises(ValueError):
            preset_experiment("fig7")


class TestComplexity:
    def test_ml_fig3a(self):
        rows = complexity_report(["fig3a"])
        ml = next(r for r in rows if r["detector"] == "ML")
        assert abs(math.log10(ml["total"]) - math.log10(327680)) < 0.5
        assert all("real mul" in r["convention"] for r in rows)

    def test_dnn_scales_with_parameters(self):
        rows = [r for r in complexity_report(["fig2", "fig3a", "fig3b"]) if r["detector"] == "DNN"]
        for r in rows:
            assert r["real_multiplies"] == r["parameters"] == r["real_additions"]

    def test_pure(self):
        assert complexity_report() == complexity_report()
