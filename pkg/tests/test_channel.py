import numpy as np
import pytest

from fiberppe.channel import (
    CalibrationError,
    FiberLink,
    NoiseSpec,
    add_awgn,
    invert_mqam_ser,
    n0_for_target_ser,
    reference_profile,
    ssfm_propagate,
)
from fiberppe.constellation import build_qam, hard_decide, ser_mqam
from fiberppe.rxdsp import matched_filter_downsample, measure_ser
from fiberppe.waveform import generate_symbols, rrc_shape, set_launch_power


def _wave(n_symbols=1024, m=16, seed=0, p0_dbm=8.0):
    frame = generate_symbols(build_qam(m), n_symbols, seed=seed)
    return set_launch_power(rrc_shape(frame), p0_dbm), frame


LINK = FiberLink(span_length_km=80.0, span_count=3, dz_km=4.0)


class TestFiberLink:
    def test_beta2_from_dispersion(self):
        assert LINK.beta2_s2_per_km * 1e24 == pytest.approx(-21.68, rel=1e-2)

    def test_total_length_and_grid(self):
        assert LINK.total_length_km == 240.0
        assert LINK.n_positions == 60
        assert LINK.positions_km()[1] == 4.0

    def test_dz_must_divide(self):
        with pytest.raises(ValueError, match="divide"):
            FiberLink(span_length_km=80.0, span_count=3, dz_km=7.0)

    def test_negative_gamma_rejected(self):
        with pytest.raises(ValueError):
            FiberLink(gamma_per_w_km=-1.0)


class TestSsfm:
    def test_linear_limit_matches_analytic_dispersion(self):
        wave, _ = _wave()
        link = FiberLink(span_length_km=80.0, span_count=3, dz_km=4.0,
                         gamma_per_w_km=0.0)
        out = ssfm_propagate(wave, link, step_km=1.0)
        omega = 2 * np.pi * np.fft.fftfreq(len(wave), d=wave.sample_period)
        phase = np.exp(-0.5j * omega**2 * link.beta2_s2_per_km * 240.0)
        analytic = np.fft.ifft(np.fft.fft(wave.samples) * phase)
        err = np.linalg.norm(out.samples - analytic) / np.linalg.norm(analytic)
        assert err < 1e-6

    def test_pure_spm_is_exact(self):
        wave, _ = _wave(n_symbols=256)
        link = FiberLink(span_length_km=50.0, span_count=1, dz_km=50.0,
                         alpha_db_per_km=0.0, dispersion_ps_nm_km=0.0,
                         gamma_per_w_km=1.3)
        out = ssfm_propagate(wave, link, step_km=0.5)
        expected = wave.samples * np.exp(
            1j * 1.3 * np.abs(wave.samples) ** 2 * 50.0)
        scale = np.max(np.abs(expected))
        assert np.max(np.abs(out.samples - expected)) < 1e-12 * scale

    def test_span_loss_is_16_db(self):
        # 0.2 dB/km over 80 km; the EDFA restores it exactly.
        link = FiberLink()
        loss_db = 10 * np.log10(np.e) * link.alpha_per_km * 80.0
        assert loss_db == pytest.approx(16.0, rel=1e-12)

    def test_energy_bookkeeping_with_edfas(self):
        wave, _ = _wave(n_symbols=512, p0_dbm=8.0)
        out = ssfm_propagate(wave, LINK, step_km=0.5)
        assert abs(out.power_dbm - 8.0) < 1e-9

    def test_step_halving_converges(self):
        wave, _ = _wave(n_symbols=2048, p0_dbm=8.0)
        link = FiberLink(span_length_km=80.0, span_count=1, dz_km=4.0)
        coarse = ssfm_propagate(wave, link, step_km=0.1)
        fine = ssfm_propagate(wave, link, step_km=0.05)
        err = (np.linalg.norm(coarse.samples - fine.samples)
               / np.linalg.norm(fine.samples))
        assert err < 1e-4

    def test_coarse_step_warns(self):
        wave, _ = _wave(n_symbols=256, p0_dbm=17.0)
        with pytest.warns(UserWarning, match="nonlinear phase"):
            ssfm_propagate(wave, FiberLink(), step_km=2.0)

    def test_step_must_divide_span(self):
        wave, _ = _wave(n_symbols=128)
        with pytest.raises(ValueError, match="divide"):
            ssfm_propagate(wave, FiberLink(), step_km=0.3)


class TestAwgn:
    def test_zero_noise_identity(self):
        wave, _ = _wave(n_symbols=128)
        out = add_awgn(wave, NoiseSpec(n0=0.0, seed=1))
        assert out is wave

    def test_sample_variance(self):
        n = 2**20
        wave = set_launch_power(
            rrc_shape(generate_symbols(build_qam(4), n // 2, seed=1)), 0.0)
        n0 = 1e-15
        out = add_awgn(wave, NoiseSpec(n0=n0, seed=7))
        noise = out.samples - wave.samples
        target = n0 * wave.sample_rate
        measured = float(np.mean(np.abs(noise) ** 2))
        # Var of the |w|^2 mean over n samples: 3-sigma relative bound.
        assert abs(measured / target - 1.0) < 3.0 / np.sqrt(n)

    def test_seeds_decorrelated(self):
        wave, _ = _wave(n_symbols=2**15)
        a = add_awgn(wave, NoiseSpec(n0=1e-15, seed=1)).samples - wave.samples
        b = add_awgn(wave, NoiseSpec(n0=1e-15, seed=2)).samples - wave.samples
        corr = np.abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
        assert corr < 4.0 / np.sqrt(len(a))

    def test_reproducible(self):
        wave, _ = _wave(n_symbols=128)
        a = add_awgn(wave, NoiseSpec(n0=1e-15, seed=3))
        b = add_awgn(wave, NoiseSpec(n0=1e-15, seed=3))
        assert np.array_equal(a.samples, b.samples)

    def test_commutes_with_scaling_in_distribution(self):
        wave, _ = _wave(n_symbols=2**14)
        c = 3.0
        scaled_first = add_awgn(
            wave.with_samples(wave.samples * c), NoiseSpec(n0=9e-15, seed=5))
        noise_first = add_awgn(wave, NoiseSpec(n0=1e-15, seed=6))
        va = np.mean(np.abs(scaled_first.samples - c * wave.samples) ** 2)
        vb = np.mean(np.abs(c * (noise_first.samples - wave.samples)) ** 2)
        assert va / vb == pytest.approx(1.0, abs=0.02)


class TestNoiseCalibration:
    def test_awgn_only_matches_analytic_inversion(self):
        # Oracle: closed-form Es/N0 from the theoretical SER, mapped to n0
        # through the signal power and symbol rate.
        m, p0_dbm, target = 16, 0.0, 5e-2
        spec = build_qam(m)
        frame = generate_symbols(spec, 2**16, seed=21)
        wave = set_launch_power(rrc_shape(frame), p0_dbm)
        p0_w = wave.power
        baud = 130e9

        def run(n0):
            noisy = add_awgn(wave, NoiseSpec(n0=n0, seed=99))
            sym = matched_filter_downsample(noisy, 0.1, 64) / np.sqrt(p0_w)
            return measure_ser(hard_decide(sym, spec), frame.tx_indices)

        es_over_n0 = invert_mqam_ser(spec, target)
        hint = p0_w / baud / es_over_n0
        n0 = n0_for_target_ser(spec, target, run, n0_hint=hint, rel_tol=0.01)
        assert n0 == pytest.approx(hint, rel=0.02)

    def test_inversion_round_trip(self):
        for m in (4, 16, 64):
            for target in (1e-3, 2e-2, 1e-1):
                x = invert_mqam_ser(build_qam(m), target)
                assert ser_mqam(m, x) == pytest.approx(target, rel=1e-9)

    def test_unreachable_target_names_floor(self):
        def run(n0):
            return max(0.09, 0.09 + n0 * 1e12)

        with pytest.raises(CalibrationError, match="floor"):
            n0_for_target_ser(build_qam(16), 0.05, run, n0_hint=1e-15)

    def test_target_range_enforced(self):
        with pytest.raises(ValueError):
            n0_for_target_ser(build_qam(16), 0.5, lambda n0: 0.0)


class TestReferenceProfile:
    def test_grid_values(self):
        link = FiberLink(span_length_km=80.0, span_count=3, dz_km=40.0)
        prof = reference_profile(link, p0_dbm=8.0)
        p0 = 10 ** (8.0 / 10) * 1e-3
        g0 = 1.3 * p0
        assert prof.gamma_prime[0] == pytest.approx(g0, rel=1e-12)
        # Start of span 2 (z = 80 km): full gain restoration.
        i80 = int(np.where(prof.positions_km == 80.0)[0])
        assert prof.gamma_prime[i80] == pytest.approx(g0, rel=1e-12)
        # Mid-span (z = 40 km): 0.2 dB/km x 40 km = 8 dB down.
        i40 = int(np.where(prof.positions_km == 40.0)[0])
        assert prof.gamma_prime[i40] == pytest.approx(g0 * 10 ** (-0.8),
                                                      rel=1e-12)
