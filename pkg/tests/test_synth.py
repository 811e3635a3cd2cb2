import math

import numpy as np
import pytest
from conftest import SMALL_LAYOUT, measure, measure_shot, small_config, three_tone
from scipy.stats import norm

from cvcluster import dsp
from cvcluster.gaussian import SqueezeProfile, shot_normalized, theory_covariance
from cvcluster.synth import (
    TraceSet,
    elec_traces,
    export_csv,
    load_traces,
    quantize,
    save_traces,
    shot_traces,
    synth_traces,
    whole_period_samples,
    with_seed,
)


def analytic_se(variance, window_s, runs, bandwidth=90e3):
    """Standard error of a bin covariance: 2 B T real degrees of freedom per run."""
    return variance / math.sqrt(2 * bandwidth * window_s * runs)


class TestConfig:
    def test_partial_period_rejected(self):
        with pytest.raises(ValueError):
            small_config(drive=three_tone(), samples=200_001)

    def test_nyquist(self):
        with pytest.raises(ValueError):
            small_config(sample_dt_s=1e-6)

    def test_bad_quad(self):
        with pytest.raises(ValueError):
            small_config(quad_config="PX")

    def test_round_trip(self):
        cfg = small_config(drive=three_tone(phase=0.4), pickup_db=3.0)
        assert type(cfg).from_dict(cfg.to_dict()) == cfg

    def test_whole_period_samples(self):
        assert whole_period_samples(1e-8, [100e3, 300e3, 900e3]) == 1000
        assert whole_period_samples(1e-8, [33e3]) == 100000


class TestVacuum:
    def test_white_unit_variance(self):
        ts = synth_traces(small_config(profile=SqueezeProfile.flat(SMALL_LAYOUT, 0.0)))
        for x in (ts.probe, ts.conjugate):
            assert np.var(x) == pytest.approx(1.0, abs=5 * math.sqrt(2 / x.size))
        rho = np.corrcoef(ts.probe, ts.conjugate)[0, 1]
        assert abs(rho) < 3 / math.sqrt(ts.probe.size)

    def test_cross_bin_covariances_zero(self):
        cfg = small_config(profile=SqueezeProfile.flat(SMALL_LAYOUT, 0.0))
        runs = measure(cfg, 3, quads=("XX",))
        est = dsp.assemble_covariance(runs, require_complete=False)
        shot = dsp.assemble_covariance(measure_shot(cfg, 3), require_complete=False)
        norm = dsp.normalize(est, shot)
        n = SMALL_LAYOUT.n_bins
        block = norm.matrix[:n, n : 2 * n]
        assert np.all(np.abs(block) < 4 * analytic_se(1.0, 2e-3, 3))


class TestSqueezedTraces:
    def test_epr_minus_3db(self):
        cfg = small_config()
        runs = measure(cfg, 3, quads=("XX", "PP"))
        shot = dsp.assemble_covariance(measure_shot(cfg, 3), require_complete=False)
        for lab in ("XX", "PP"):
            sp = dsp.squeezing_spectrum([r for r in runs if r.label == lab], shot)
            # Per-bin standard error is about 0.15 dB at this size.
            assert np.all(np.abs(sp + 3.0) < 0.6)
            assert abs(sp.mean() + 3.0) < 0.2

    def test_three_tone_xp_sidebands(self):
        cfg = small_config(drive=three_tone(), samples=1_000_000)
        runs = measure(cfg, 2, quads=("XP",))
        shot = dsp.assemble_covariance(measure_shot(cfg, 2), require_complete=False)
        est = dsp.assemble_covariance(runs, require_complete=False)
        norm = dsp.normalize(est, shot)
        n = SMALL_LAYOUT.n_bins
        xppc = norm.matrix[:n, 3 * n :]
        theory = shot_normalized(theory_covariance(SMALL_LAYOUT, cfg.profile, cfg.drive))[:n, 3 * n :]
        # Shot-normalized detector variance of a -3 dB pair is cosh(4r) = 1.25.
        se = analytic_se(1.25, 1e-2, 2)
        i, j = np.indices((n, n))
        on = np.isin(np.abs(i - j), [1, 3, 9])
        assert np.all(np.abs(xppc - theory)[on] < 5 * se)
        assert np.mean(np.abs(xppc[on])) > 2 * se
        off = ~on & (i != j)
        assert np.mean(np.abs(xppc[off]) < 3 * se) > 0.97

    def test_deterministic(self):
        cfg = small_config(drive=three_tone(), quad_config="XP", digitizer_bits=8, elec_noise_db=-6.0)
        a, b = synth_traces(cfg), synth_traces(cfg)
        np.testing.assert_array_equal(a.probe, b.probe)
        np.testing.assert_array_equal(a.codes[1], b.codes[1])
        c = synth_traces(with_seed(cfg, 2))
        assert not np.array_equal(a.probe, c.probe)


class TestShotAndElec:
    def test_elec_power_addition(self):
        base = small_config(samples=400_000)
        clean = shot_traces(base)
        noisy = shot_traces(with_seed(base, base.seed, elec_noise_db=-6.0))
        ratio = np.var(noisy.probe) / np.var(clean.probe)
        assert ratio == pytest.approx(1 + 10 ** (-0.6), abs=0.01)

    def test_seeds_independent(self):
        a = shot_traces(small_config(seed=1))
        b = shot_traces(small_config(seed=2))
        rho = np.corrcoef(a.probe, b.probe)[0, 1]
        assert abs(rho) < 3 / math.sqrt(a.probe.size)

    def test_shot_spectrum_flat(self):
        cfg = small_config()
        est = dsp.assemble_covariance(measure_shot(cfg, 2), require_complete=False)
        vp, vc = est.detector_variances()
        # Each bin holds about 2 * 90 kHz * 2 ms * 2 runs degrees of freedom.
        tol = 4 * math.sqrt(2 / 720)
        assert np.all(np.abs(vp / vp.mean() - 1) < tol)
        assert np.all(np.abs(vc / vc.mean() - 1) < tol)

    def test_elec_only_role(self):
        ts = elec_traces(small_config(elec_noise_db=-6.0))
        assert ts.role == "elec"
        assert np.var(ts.probe) == pytest.approx(10 ** (-0.6), rel=0.02)


class TestQuantize:
    def test_16_bit_noise_small(self, rng):
        x = rng.standard_normal(200_000)
        q, clip = quantize(x, 16, 10.0)
        step = 10.0 / 2**15
        assert np.var(q - x) == pytest.approx(step**2 / 12, rel=0.05)
        assert np.var(q - x) < 0.01 * np.var(x)
        assert clip == 0.0

    def test_zero(self):
        q, clip = quantize(np.zeros(100), 8, 1.0)
        np.testing.assert_array_equal(q, 0.0)
        assert clip == 0.0

    def test_clip_fraction(self, rng):
        x = rng.standard_normal(400_000)
        _, clip = quantize(x, 8, 1.0)
        expect = 2 * norm.cdf(-1.0)
        assert clip == pytest.approx(expect, abs=4 * math.sqrt(expect * (1 - expect) / x.size))

    def test_bad_bits(self):
        with pytest.raises(ValueError):
            quantize(np.zeros(4), 1, 1.0)


class TestFiles:
    @pytest.mark.parametrize("bits", [8, 12, None])
    def test_round_trip(self, tmp_path, bits):
        cfg = small_config(samples=20_000, digitizer_bits=bits, elec_noise_db=-6.0, drive=three_tone())
        ts = synth_traces(cfg)
        save_traces(ts, tmp_path / "t.cvlt")
        back = load_traces(tmp_path / "t.cvlt")
        np.testing.assert_array_equal(back.probe, ts.probe)
        np.testing.assert_array_equal(back.conjugate, ts.conjugate)
        assert back.config == cfg
        assert back.labels == ("Xp", "Xc")

    def test_byte_identical(self, tmp_path):
        cfg = small_config(samples=20_000, digitizer_bits=8)
        save_traces(synth_traces(cfg), tmp_path / "a.cvlt")
        save_traces(synth_traces(cfg), tmp_path / "b.cvlt")
        assert (tmp_path / "a.cvlt").read_bytes() == (tmp_path / "b.cvlt").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.cvlt").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ValueError):
            load_traces(tmp_path / "x.cvlt")

    def test_truncated(self, tmp_path):
        save_traces(synth_traces(small_config(samples=1000)), tmp_path / "t.cvlt")
        data = (tmp_path / "t.cvlt").read_bytes()
        (tmp_path / "t.cvlt").write_bytes(data[:-10])
        with pytest.raises(ValueError):
            load_traces(tmp_path / "t.cvlt")

    def test_csv_export(self, tmp_path):
        ts = synth_traces(small_config(samples=1000))
        export_csv(ts, tmp_path / "t.csv", limit=10)
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t_s,probe,conjugate"
        assert len(lines) == 11

    def test_traceset_metadata(self):
        ts = synth_traces(small_config(samples=1000, quad_config="XP"))
        assert isinstance(ts, TraceSet)
        assert ts.labels == ("Xp", "Pc")
        assert ts.dt == 1e-8
