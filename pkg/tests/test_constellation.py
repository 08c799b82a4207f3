import numpy as np
import pytest
from scipy.integrate import quad

from fiberppe.constellation import (
    DIAGONAL_CLASS,
    SINGLE_RAIL_CLASS,
    ZERO_CLASS,
    build_qam,
    edge_ser_from_overall,
    error_outcomes,
    error_pmf,
    hard_decide,
    q_function,
    ser_mask,
    ser_mqam,
)


class TestBuildQam:
    def test_4qam_points(self):
        spec = build_qam(4)
        expected = {(-1 - 1j), (-1 + 1j), (1 - 1j), (1 + 1j)}
        got = {complex(np.round(p * np.sqrt(2), 9)) for p in spec.points}
        assert got == expected
        assert abs(float(np.mean(np.abs(spec.points) ** 2)) - 1.0) < 1e-12

    def test_16qam_unit_energy(self):
        spec = build_qam(16)
        assert len(spec.points) == 16
        assert abs(float(np.mean(np.abs(spec.points) ** 2)) - 1.0) < 1e-12

    def test_64qam_min_spacing_brute_force(self):
        # Oracle: exhaustive pairwise distances over the normalized 8x8 grid.
        spec = build_qam(64)
        d = np.abs(spec.points[:, None] - spec.points[None, :])
        min_spacing = float(np.min(d[d > 0]))
        assert min_spacing == pytest.approx(2.0 / np.sqrt(42.0), rel=1e-12)

    @pytest.mark.parametrize("m", [4, 16, 64, 256])
    def test_grid_symmetric_about_origin(self, m):
        spec = build_qam(m)
        pts = set(np.round(spec.points, 12))
        assert {complex(np.round(-p, 12)) for p in pts} == pts

    @pytest.mark.parametrize("bad", [2, 8, 32, 60])
    def test_non_square_rejected(self, bad):
        with pytest.raises(ValueError):
            build_qam(bad)

    @pytest.mark.parametrize("m", [4, 16, 64])
    def test_gray_neighbors_differ_one_bit(self, m):
        spec = build_qam(m)
        rail = spec.rail_size
        codes = spec.gray_codes.reshape(rail, rail)
        horiz = codes[:, 1:] ^ codes[:, :-1]
        vert = codes[1:, :] ^ codes[:-1, :]
        for diff in (horiz.ravel(), vert.ravel()):
            assert all(bin(int(d)).count("1") == 1 for d in diff)


class TestHardDecide:
    def test_points_decide_to_themselves(self):
        spec = build_qam(16)
        assert np.array_equal(hard_decide(spec.points, spec), np.arange(16))

    def test_origin_tie_break_is_lowest_index(self):
        spec = build_qam(4)
        assert hard_decide(0.0 + 0.0j, spec) == 0

    def test_small_perturbation_keeps_index(self):
        spec = build_qam(64)
        rng = np.random.default_rng(7)
        jitter = 0.05 * (rng.standard_normal(64) + 1j * rng.standard_normal(64))
        samples = 0.9 * spec.points + jitter * spec.level_spacing
        assert np.array_equal(hard_decide(samples, spec), np.arange(64))


class TestQFunction:
    def test_zero(self):
        assert q_function(0.0) == pytest.approx(0.5, rel=1e-12)

    def test_large_argument_tail(self):
        assert q_function(40.0) < 1e-300

    def test_against_quadrature_oracle(self):
        # Oracle: adaptive quadrature of the standard normal density
        # (truncated at 40 sigma, where the remaining tail is ~1e-350).
        oracle, err = quad(lambda y: np.exp(-y**2 / 2) / np.sqrt(2 * np.pi),
                           1.0, 40.0, epsabs=1e-14, epsrel=1e-13)
        assert err < 1e-12
        assert q_function(1.0) == pytest.approx(oracle, rel=1e-10)
        assert q_function(1.0) == pytest.approx(0.15865525393145707, rel=1e-10)


def _mc_mask_ser(m, es_over_n0, n_trials, seed):
    """Monte Carlo M-ASK decision experiment at unit average symbol energy."""
    rng = np.random.default_rng(seed)
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    levels = levels / np.sqrt(np.mean(levels**2))
    tx = rng.integers(0, m, n_trials)
    sigma = np.sqrt(1.0 / es_over_n0 / 2.0)
    samples = levels[tx] + sigma * rng.standard_normal(n_trials)
    midpoints = 0.5 * (levels[:-1] + levels[1:])
    decided = np.searchsorted(midpoints, samples)
    return float(np.mean(decided != tx)), tx.size


class TestSerFormulas:
    def test_mask_zero_snr(self):
        for m in (2, 4, 8):
            assert ser_mask(m, 0.0) == pytest.approx((m - 1) / m, rel=1e-12)

    def test_mask_binary_is_q3(self):
        assert ser_mask(2, 4.5) == pytest.approx(q_function(3.0), rel=1e-12)

    def test_mask_4ask_monte_carlo(self):
        # Oracle: 1e7-trial 4-ASK decision experiment, 3-sigma binomial bound.
        theory = ser_mask(4, 10.0)
        measured, n = _mc_mask_ser(4, 10.0, 10_000_000, seed=42)
        sigma = np.sqrt(theory * (1 - theory) / n)
        assert abs(measured - theory) < 3 * sigma

    def test_mqam_zero_snr_4qam(self):
        assert ser_mqam(4, 0.0) == pytest.approx(0.75, rel=1e-12)

    def test_mqam_from_mask_identity(self):
        es = 14.0
        expected = 1.0 - (1.0 - ser_mask(4, es / 2.0)) ** 2
        assert ser_mqam(16, es) == pytest.approx(expected, rel=1e-12)

    def test_mqam_16_monte_carlo(self):
        # Oracle: complex AWGN 16-QAM decision experiment.
        spec = build_qam(16)
        rng = np.random.default_rng(3)
        n = 2_000_000
        tx = rng.integers(0, 16, n)
        es_over_n0 = 20.0
        sigma = np.sqrt(1.0 / es_over_n0 / 2.0)
        noise = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        decided = hard_decide(spec.points[tx] + noise, spec)
        measured = float(np.mean(decided != tx))
        theory = ser_mqam(16, es_over_n0)
        bound = 3 * np.sqrt(theory * (1 - theory) / n)
        assert abs(measured - theory) < bound

    def test_mqam_monotone_in_snr_and_order(self):
        snrs = np.linspace(0.0, 60.0, 25)
        for m in (4, 16, 64):
            vals = [ser_mqam(m, s) for s in snrs]
            assert all(a > b for a, b in zip(vals, vals[1:]))
        for s in (5.0, 20.0, 80.0):
            assert ser_mqam(4, s) < ser_mqam(16, s) < ser_mqam(64, s)

    def test_non_square_mqam_rejected(self):
        with pytest.raises(ValueError):
            ser_mqam(8, 10.0)


class TestEdgeSer:
    def test_zero(self):
        assert edge_ser_from_overall(16, 0.0) == 0.0

    def test_4qam_full_error(self):
        assert edge_ser_from_overall(4, 0.75) == pytest.approx(0.5, rel=1e-12)

    @pytest.mark.parametrize("m", [4, 16, 64])
    @pytest.mark.parametrize("ser", [1e-4, 1e-3, 1e-2, 1e-1, 0.3])
    def test_round_trip_with_overall(self, m, ser):
        # edge value -> per-rail SER -> overall must invert exactly.
        rail = int(np.sqrt(m))
        e = edge_ser_from_overall(m, ser)
        rail_ser = 2.0 * (rail - 1) / rail * e
        back = 1.0 - (1.0 - rail_ser) ** 2
        assert back == pytest.approx(ser, abs=1e-12)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            edge_ser_from_overall(16, 1.5)


class TestErrorOutcomes:
    @pytest.mark.parametrize("m", [4, 16])
    def test_closed_under_negation_and_rotation(self, m):
        out = error_outcomes(build_qam(m))
        vals = set(np.round(out.outcomes, 12))
        assert {complex(np.round(-w, 12)) for w in vals} == vals
        assert {complex(np.round(1j * w, 12)) for w in vals} == vals
        assert 0 in vals

    def test_4qam_matches_enumerated_set(self):
        spec = build_qam(4)
        out = error_outcomes(spec)
        scale = spec.level_spacing / 2.0
        expected = {complex(np.round(w * scale, 12))
                    for w in (0, 2, -2, 2j, -2j, 2 + 2j, 2 - 2j, -2 + 2j, -2 - 2j)}
        assert {complex(np.round(w, 12)) for w in out.outcomes} == expected

    def test_classes(self):
        spec = build_qam(4)
        out = error_outcomes(spec)
        spacing = spec.level_spacing
        assert out.class_of(0.0) == ZERO_CLASS
        assert out.class_of(spacing) == SINGLE_RAIL_CLASS
        assert out.class_of(1j * spacing) == SINGLE_RAIL_CLASS
        assert out.class_of(spacing + 1j * spacing) == DIAGONAL_CLASS


class TestErrorPmf:
    @pytest.mark.parametrize("ser", [1e-3, 1e-2, 1e-1])
    @pytest.mark.parametrize("m", [4, 16, 64])
    def test_sums_to_one(self, m, ser):
        pmf = error_pmf(build_qam(m), ser)
        assert pmf.total_probability() == pytest.approx(1.0, abs=1e-12)
        assert sum(pmf.marginal_totals.values()) == pytest.approx(1.0, abs=1e-12)
        assert all(0.0 <= p <= 1.0 for p in pmf.class_probabilities.values())

    @pytest.mark.parametrize("ser", [5e-3, 5e-2, 2e-1])
    def test_4qam_closed_forms(self, ser):
        # The 4-QAM class values in terms of the overall SER.
        pmf = error_pmf(build_qam(4), ser)
        s1 = ser + np.sqrt(1.0 - ser) - 1.0
        s2 = -ser - 2.0 * np.sqrt(1.0 - ser) + 2.0
        assert pmf.class_probabilities[SINGLE_RAIL_CLASS] == pytest.approx(s1, rel=1e-12)
        assert pmf.class_probabilities[DIAGONAL_CLASS] == pytest.approx(s2, rel=1e-12)

    def test_zero_ser_degenerate(self):
        pmf = error_pmf(build_qam(16), 0.0)
        assert pmf.class_probabilities[ZERO_CLASS] == 1.0
        assert pmf.class_probabilities[SINGLE_RAIL_CLASS] == 0.0
        assert pmf.class_probabilities[DIAGONAL_CLASS] == 0.0

    @pytest.mark.parametrize("m", [4, 16, 64])
    def test_class_frequencies_match_monte_carlo(self, m):
        # Oracle: AWGN decision experiment; empirical class frequencies vs
        # the model's marginal totals at the measured SER, 3-sigma bounds.
        spec = build_qam(m)
        rng = np.random.default_rng(m)
        n = 1_000_000
        es_over_n0 = {4: 4.0, 16: 22.0, 64: 100.0}[m]
        tx = rng.integers(0, m, n)
        sigma = np.sqrt(1.0 / es_over_n0 / 2.0)
        noise = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        decided = hard_decide(spec.points[tx] + noise, spec)
        measured_ser = float(np.mean(decided != tx))
        assert 0.005 < measured_ser < 0.2

        outcomes = error_outcomes(spec)
        w = spec.points[decided] - spec.points[tx]
        labels = np.array([outcomes.class_of(x) for x in w[w != 0]])
        pmf = error_pmf(spec, measured_ser)
        for cls in (SINGLE_RAIL_CLASS, DIAGONAL_CLASS):
            expected = pmf.marginal_totals[cls]
            count = int(np.sum(labels == cls))
            bound = 3 * np.sqrt(expected * (1 - expected) / n)
            assert abs(count / n - expected) < bound

    def test_ser_one_rejected(self):
        with pytest.raises(ValueError):
            error_pmf(build_qam(4), 1.0)
