"""Fast invariant suite behind the `verify` CLI verb.

Each check returns (name, passed, detail); the set runs in seconds and
exercises the numerical identities the whole pipeline leans on.
"""
import numpy as np

from .channel import FiberLink, NoiseSpec, add_awgn, ssfm_propagate
from .constellation import build_qam, hard_decide
from .offset import ideal_po_removal, power_offset, virtual_hd_perturbation
from .ppe import TX, HD, PerturbationVector, build_matrix, delta_u, \
    dispersion_operator, mmse_solve
from .rxdsp import regenerate_references
from .waveform import ShapingConfig, generate_symbols, rrc_shape, set_launch_power

__all__ = ["run_checks"]

_LINK = FiberLink(span_length_km=40.0, span_count=2, dz_km=10.0)


def _wave(n_symbols=1024, p0_dbm=6.0, seed=0):
    frame = generate_symbols(build_qam(16), n_symbols, seed=seed)
    return frame, set_launch_power(rrc_shape(frame), p0_dbm)


def _check_dispersion_unitary():
    _, wave = _wave()
    out = dispersion_operator(wave, _LINK, 0.0, 80.0)
    drift = abs(np.sum(np.abs(out.samples) ** 2)
                / np.sum(np.abs(wave.samples) ** 2) - 1.0)
    return drift < 1e-12, f"energy drift {drift:.2e}"


def _check_dispersion_composition():
    _, wave = _wave()
    ab = dispersion_operator(dispersion_operator(wave, _LINK, 0.0, 30.0),
                             _LINK, 30.0, 80.0)
    direct = dispersion_operator(wave, _LINK, 0.0, 80.0)
    err = (np.linalg.norm(ab.samples - direct.samples)
           / np.linalg.norm(direct.samples))
    return err < 1e-12, f"composition error {err:.2e}"


def _check_ssfm_linear_limit():
    _, wave = _wave()
    link = FiberLink(span_length_km=40.0, span_count=2, dz_km=10.0,
                     gamma_per_w_km=0.0)
    out = ssfm_propagate(wave, link, step_km=1.0)
    analytic = dispersion_operator(wave, link, 0.0, 80.0)
    err = (np.linalg.norm(out.samples - analytic.samples)
           / np.linalg.norm(analytic.samples))
    return err < 1e-6, f"gamma=0 limit error {err:.2e}"


def _check_ssfm_spm_limit():
    _, wave = _wave(n_symbols=256)
    link = FiberLink(span_length_km=40.0, span_count=1, dz_km=10.0,
                     alpha_db_per_km=0.0, dispersion_ps_nm_km=0.0)
    out = ssfm_propagate(wave, link, step_km=0.5)
    expected = wave.samples * np.exp(1j * 1.3 * np.abs(wave.samples) ** 2 * 40.0)
    err = np.max(np.abs(out.samples - expected)) / np.max(np.abs(expected))
    return err < 1e-12, f"SPM limit error {err:.2e}"


def _check_ssfm_step_halving():
    _, wave = _wave(n_symbols=2048, p0_dbm=8.0)
    link = FiberLink(span_length_km=40.0, span_count=1, dz_km=10.0)
    coarse = ssfm_propagate(wave, link, step_km=0.1)
    fine = ssfm_propagate(wave, link, step_km=0.05)
    err = (np.linalg.norm(coarse.samples - fine.samples)
           / np.linalg.norm(fine.samples))
    return err < 1e-4, f"step-halving change {err:.2e}"


def _check_awgn_variance():
    _, wave = _wave(n_symbols=2**15)
    n0 = 1e-15
    out = add_awgn(wave, NoiseSpec(n0=n0, seed=11))
    measured = float(np.mean(np.abs(out.samples - wave.samples) ** 2))
    target = n0 * wave.sample_rate
    rel = abs(measured / target - 1.0)
    return rel < 3.0 / np.sqrt(2**16), f"noise variance off by {rel:.2e}"


def _check_mmse_left_inverse():
    _, wave = _wave(n_symbols=512)
    ref = wave.with_samples(wave.samples / np.sqrt(wave.power))
    g = build_matrix(ref, _LINK)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(g.n_positions) * 1e-3 + 5e-3
    du = PerturbationVector(values=g.columns @ x, built_from=TX)
    est = mmse_solve(g, du)
    err = np.linalg.norm(est.gamma_prime_hat - x) / np.linalg.norm(x)
    return err < 1e-8, f"left-inverse error {err:.2e}"


def _check_offset_identity():
    frame, tx_wave = _wave(n_symbols=2048, seed=3)
    rx = ssfm_propagate(tx_wave, _LINK, step_km=0.25)
    rx = add_awgn(rx, NoiseSpec(n0=1e-17, seed=7))
    rng = np.random.default_rng(9)
    sigma = 0.14
    noise = sigma * (rng.standard_normal(len(frame))
                     + 1j * rng.standard_normal(len(frame)))
    spec = frame.spec
    decided = hard_decide(spec.points[frame.tx_indices] + noise, spec)
    a_tx0, a_hd0 = regenerate_references(frame, decided, ShapingConfig(), 6.0)
    norm = np.sqrt(a_tx0.power)
    a_l = rx.with_samples(rx.samples / norm)
    a_tx = a_tx0.with_samples(a_tx0.samples / norm)
    a_hd = a_hd0.with_samples(a_hd0.samples / norm)
    g_hd = build_matrix(a_hd, _LINK, built_from=HD)
    du_hd = delta_u(a_l, a_hd, _LINK, built_from=HD)
    du_tx = delta_u(a_l, a_tx, _LINK, built_from=TX)
    virt = virtual_hd_perturbation(a_hd0, _LINK, step_km=0.25,
                                   normalization=norm)
    u_hd = dispersion_operator(a_hd, _LINK, 0.0, 80.0).samples
    u_tx = dispersion_operator(a_tx, _LINK, 0.0, 80.0).samples
    report = power_offset(g_hd, u_hd, u_tx, virt, du_tx)
    est_hd = mmse_solve(g_hd, du_hd)
    corrected = ideal_po_removal(est_hd, report)
    virt_est = mmse_solve(g_hd, virt)
    err = (np.linalg.norm(corrected.gamma_prime_hat - virt_est.gamma_prime_hat)
           / np.linalg.norm(virt_est.gamma_prime_hat))
    return err < 1e-8, f"offset identity residual {err:.2e}"


CHECKS = [
    ("dispersion operator unitary", _check_dispersion_unitary),
    ("dispersion operator composition", _check_dispersion_composition),
    ("ssfm linear limit", _check_ssfm_linear_limit),
    ("ssfm pure-SPM limit", _check_ssfm_spm_limit),
    ("ssfm step-halving convergence", _check_ssfm_step_halving),
    ("awgn variance calibration", _check_awgn_variance),
    ("least-squares left inverse", _check_mmse_left_inverse),
    ("offset identity (hd + po = virtual)", _check_offset_identity),
]


def run_checks() -> list:
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
