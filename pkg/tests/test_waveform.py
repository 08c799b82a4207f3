import numpy as np
import pytest

from fiberppe.constellation import build_qam
from fiberppe.waveform import (
    ShapingConfig,
    Waveform,
    circular_filter,
    generate_symbols,
    rrc_shape,
    rrc_taps,
    set_launch_power,
    shape_indices,
)


class TestGenerateSymbols:
    def test_deterministic_from_seed(self):
        spec = build_qam(16)
        a = generate_symbols(spec, 4096, seed=11)
        b = generate_symbols(spec, 4096, seed=11)
        assert np.array_equal(a.tx_indices, b.tx_indices)
        c = generate_symbols(spec, 4096, seed=12)
        assert not np.array_equal(a.tx_indices, c.tx_indices)

    def test_uniform_frequencies(self):
        spec = build_qam(16)
        frame = generate_symbols(spec, 2**20, seed=5)
        counts = np.bincount(frame.tx_indices, minlength=16)
        p = 1.0 / 16.0
        sigma = np.sqrt(p * (1 - p) / 2**20)
        assert np.all(np.abs(counts / 2**20 - p) < 3 * sigma)

    def test_single_symbol(self):
        frame = generate_symbols(build_qam(4), 1, seed=0)
        assert len(frame) == 1

    def test_count_zero_rejected(self):
        with pytest.raises(ValueError):
            generate_symbols(build_qam(4), 0, seed=0)


class TestRrcShaping:
    def test_impulse_peaks_at_symbol_instant(self):
        taps = rrc_taps(2, 0.1, 64)
        x = np.zeros(512, dtype=complex)
        x[128] = 1.0
        y = circular_filter(x, taps)
        assert int(np.argmax(np.abs(y))) == 128

    def test_matched_loopback_is_nyquist(self):
        # Shape, matched-filter, downsample: symbol recovery with EVM < 0.1%
        # once the span is long enough for the truncation tail.
        spec = build_qam(16)
        frame = generate_symbols(spec, 2048, seed=3)
        wave = rrc_shape(frame, samples_per_symbol=2, rolloff=0.1,
                         filter_span_symbols=128)
        taps = rrc_taps(2, 0.1, 128)
        matched = circular_filter(wave.samples, np.conj(taps[::-1]))
        recovered = matched[::2] / 2
        tx = spec.points[frame.tx_indices]
        evm = np.linalg.norm(recovered - tx) / np.linalg.norm(tx)
        assert evm < 1e-3

    def test_loopback_error_shrinks_with_span(self):
        # Zero ISI at symbol instants within filter-truncation error.
        spec = build_qam(16)
        frame = generate_symbols(spec, 2048, seed=3)
        tx = spec.points[frame.tx_indices]
        evms = []
        for span in (32, 64, 256):
            taps = rrc_taps(2, 0.1, span)
            up = np.zeros(2 * len(frame), dtype=complex)
            up[::2] = tx
            rec = circular_filter(circular_filter(up, taps),
                                  np.conj(taps[::-1]))[::2] / 2
            evms.append(np.linalg.norm(rec - tx) / np.linalg.norm(tx))
        assert evms[0] > evms[1] > evms[2]
        assert evms[2] < 1e-4

    def test_unit_power_before_scaling(self):
        spec = build_qam(16)
        frame = generate_symbols(spec, 4096, seed=9)
        wave = rrc_shape(frame)
        # Power equals the frame's empirical symbol energy up to truncation.
        sym_energy = float(np.mean(np.abs(spec.points[frame.tx_indices]) ** 2))
        assert wave.power == pytest.approx(sym_energy, rel=1e-4)

    def test_sample_period_from_baud(self):
        frame = generate_symbols(build_qam(4), 64, seed=1)
        wave = rrc_shape(frame, samples_per_symbol=2, baud_rate_hz=130e9)
        assert wave.sample_period == pytest.approx(1.0 / 260e9, rel=1e-12)
        assert len(wave) == 128

    def test_short_span_warns(self):
        frame = generate_symbols(build_qam(4), 256, seed=2)
        with pytest.warns(UserWarning, match="tap energy"):
            rrc_shape(frame, filter_span_symbols=4)

    def test_rolloff_bounds(self):
        with pytest.raises(ValueError):
            rrc_taps(2, 0.0, 16)
        with pytest.raises(ValueError):
            rrc_taps(2, 1.5, 16)


class TestLaunchPower:
    def test_8_dbm(self):
        frame = generate_symbols(build_qam(16), 512, seed=4)
        wave = set_launch_power(rrc_shape(frame), 8.0)
        assert wave.power == pytest.approx(10 ** (8.0 / 10) * 1e-3, rel=1e-12)

    def test_0_dbm(self):
        frame = generate_symbols(build_qam(16), 512, seed=4)
        wave = set_launch_power(rrc_shape(frame), 0.0)
        assert wave.power == pytest.approx(1e-3, rel=1e-12)

    @pytest.mark.parametrize("p0", [5.0, 6.0, 7.0, 8.0])
    def test_experiment_grid_accessor_round_trip(self, p0):
        frame = generate_symbols(build_qam(16), 512, seed=4)
        wave = set_launch_power(rrc_shape(frame), p0)
        assert abs(wave.power_dbm - p0) < 1e-9

    def test_idempotent_in_effect(self):
        frame = generate_symbols(build_qam(16), 512, seed=4)
        once = set_launch_power(rrc_shape(frame), 6.0)
        twice = set_launch_power(once, 6.0)
        assert np.allclose(once.samples, twice.samples, rtol=1e-15)

    def test_zero_power_rejected(self):
        wave = Waveform(np.zeros(16, dtype=complex), 1e-11)
        with pytest.raises(ValueError):
            set_launch_power(wave, 0.0)


class TestWaveformContainer:
    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            Waveform(np.array([1.0 + 0j]), 1e-11)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            Waveform(np.array([1.0, np.inf], dtype=complex), 1e-11)

    def test_bad_period_rejected(self):
        with pytest.raises(ValueError):
            Waveform(np.ones(4, dtype=complex), 0.0)

    def test_shape_indices_matches_rrc_shape(self):
        spec = build_qam(16)
        frame = generate_symbols(spec, 256, seed=8)
        shaping = ShapingConfig()
        a = rrc_shape(frame, shaping.samples_per_symbol, shaping.rolloff,
                      shaping.filter_span_symbols, shaping.baud_rate_hz)
        b = shape_indices(frame.tx_indices, spec, shaping)
        assert np.array_equal(a.samples, b.samples)
