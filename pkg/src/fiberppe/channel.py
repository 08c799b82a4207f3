"""Split-step integration of the scalar NLSE over an amplified multi-span link.

The link is span_count identical spans; each span applies loss, dispersion
and Kerr nonlinearity, and ends in a noiseless EDFA whose gain restores the
launch power exactly.  Receiver-side AWGN is loaded in one lump with a
documented per-sample variance of n0 * sample_rate (single-sided PSD n0
spread over the full simulation bandwidth, split evenly between quadratures).
"""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as _C_M_PER_S
from scipy.optimize import brentq

from .constellation import ConstellationSpec, ser_mqam
from .validation import (
    check_integer,
    check_non_negative,
    check_positive,
    check_probability,
)

__all__ = [
    "FiberLink",
    "NoiseSpec",
    "ReferenceProfile",
    "CalibrationError",
    "ssfm_propagate",
    "add_awgn",
    "n0_for_target_ser",
    "reference_profile",
]

_DB_PER_NEPER = 10.0 / np.log(10.0)


class CalibrationError(RuntimeError):
    """Raised when no noise level can reach the requested SER."""


@dataclass(frozen=True)
class FiberLink:
    """Span layout and fiber constants.

    ``dz_km`` is the spatial step of the profile estimate, not of the SSFM;
    it must divide the total length exactly.
    """

    span_length_km: float = 80.0
    span_count: int = 3
    alpha_db_per_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    gamma_per_w_km: float = 1.3
    wavelength_nm: float = 1550.0
    dz_km: float = 1.0

    def __post_init__(self):
        check_positive(self.span_length_km, "span_length_km")
        check_integer(self.span_count, "span_count", minimum=1)
        check_non_negative(self.alpha_db_per_km, "alpha_db_per_km")
        check_non_negative(self.gamma_per_w_km, "gamma_per_w_km")
        check_positive(self.wavelength_nm, "wavelength_nm")
        check_positive(self.dz_km, "dz_km")
        ratio = self.total_length_km / self.dz_km
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"dz_km={self.dz_km} must divide the total length "
                f"{self.total_length_km} km exactly"
            )

    @property
    def total_length_km(self) -> float:
        return self.span_length_km * self.span_count

    @property
    def alpha_per_km(self) -> float:
        """Field-power attenuation in 1/km."""
        return self.alpha_db_per_km / _DB_PER_NEPER

    @property
    def beta2_s2_per_km(self) -> float:
        """Group-velocity dispersion from D at the carrier wavelength."""
        lam_m = self.wavelength_nm * 1e-9
        d_s_per_m_per_km = self.dispersion_ps_nm_km * 1e-3
        return -d_s_per_m_per_km * lam_m**2 / (2.0 * np.pi * _C_M_PER_S)

    @property
    def n_positions(self) -> int:
        return int(round(self.total_length_km / self.dz_km))

    def positions_km(self) -> np.ndarray:
        return np.arange(self.n_positions) * self.dz_km


@dataclass(frozen=True)
class NoiseSpec:
    """Receiver AWGN level: single-sided PSD in W/Hz plus a PRNG seed."""

    n0: float
    seed: int = 0

    def __post_init__(self):
        check_non_negative(self.n0, "n0")


@dataclass(frozen=True)
class ReferenceProfile:
    """Ground-truth gamma*P(z) on the estimation grid."""

    positions_km: np.ndarray
    gamma_prime: np.ndarray
    span_length_km: float

    def __post_init__(self):
        self.positions_km.setflags(write=False)
        self.gamma_prime.setflags(write=False)


def _dispersion_factor(n: int, sample_period: float, beta2_s2_per_km: float,
                       distance_km: float) -> np.ndarray:
    omega = 2.0 * np.pi * np.fft.fftfreq(n, d=sample_period)
    return np.exp(-0.5j * omega**2 * beta2_s2_per_km * distance_km)


def ssfm_propagate(wave, link: FiberLink, step_km: float = 0.1):
    """Propagate through the full link with symmetric split-step integration.

    Loss rides in the linear half-steps; each span ends with an exact
    power-restoring gain.  Warns if the peak nonlinear phase per step
    exceeds 0.05 rad; raises if the field goes non-finite.
    """
    check_positive(step_km, "step_km")
    steps_per_span = link.span_length_km / step_km
    if abs(steps_per_span - round(steps_per_span)) > 1e-9:
        raise ValueError(
            f"step_km={step_km} must divide the span length "
            f"{link.span_length_km} km exactly"
        )
    steps_per_span = int(round(steps_per_span))
    gamma = link.gamma_per_w_km
    alpha = link.alpha_per_km

    phi_max = gamma * np.max(np.abs(wave.samples) ** 2) * step_km
    if phi_max > 0.05:
        warnings.warn(
            f"nonlinear phase per step reaches {phi_max:.3f} rad; "
            "reduce step_km for a trustworthy integration",
            stacklevel=2,
        )

    half_linear = _dispersion_factor(len(wave), wave.sample_period,
                                     link.beta2_s2_per_km, step_km / 2.0)
    half_linear = half_linear * np.exp(-0.5 * alpha * step_km / 2.0)
    span_gain = np.exp(0.5 * alpha * link.span_length_km)

    field = wave.samples.copy()
    for _ in range(link.span_count):
        for _ in range(steps_per_span):
            field = np.fft.ifft(np.fft.fft(field) * half_linear)
            field *= np.exp(1j * gamma * np.abs(field) ** 2 * step_km)
            field = np.fft.ifft(np.fft.fft(field) * half_linear)
        field *= span_gain
        if not np.all(np.isfinite(field)):
            raise RuntimeError("SSFM produced a non-finite field")
    return wave.with_samples(field, position_km=link.total_length_km)


def add_awgn(wave, noise: NoiseSpec):
    """Add circular complex white Gaussian noise, reproducible from the seed."""
    if noise.n0 == 0.0:
        return wave
    rng = np.random.default_rng(noise.seed)
    sigma2 = noise.n0 * wave.sample_rate
    scale = np.sqrt(sigma2 / 2.0)
    w = rng.standard_normal(len(wave)) + 1j * rng.standard_normal(len(wave))
    return wave.with_samples(wave.samples + scale * w)


def invert_mqam_ser(spec: ConstellationSpec, target_ser: float) -> float:
    """Es/N0 at which the theoretical M-QAM SER equals the target."""
    target_ser = check_probability(target_ser, "target_ser")
    lo, hi = 1e-6, 1e6
    return brentq(lambda x: ser_mqam(spec.order, x) - target_ser, lo, hi,
                  xtol=1e-12, rtol=1e-12)


def n0_for_target_ser(spec: ConstellationSpec, target_ser: float,
                      calibration_run, *, n0_hint: float = None,
                      rel_tol: float = 0.05, max_iter: int = 80) -> float:
    """Find the noise PSD whose measured end-to-end SER hits the target.

    ``calibration_run`` maps an n0 to a measured SER; it must be
    deterministic (fixed noise seed) so the bisection converges.  The
    initial guess comes from ``n0_hint`` (typically signal power divided by
    symbol rate and the Es/N0 from inverting the theoretical SER); the
    bracket is then expanded and bisected until the measured SER is within
    ``rel_tol`` of the target.  Raises CalibrationError when the zero-noise
    SER floor already exceeds the target.
    """
    if not (0.0 < target_ser <= 0.3):
        raise ValueError(f"target_ser must lie in (0, 0.3], got {target_ser}")
    floor = calibration_run(0.0)
    if floor >= target_ser:
        raise CalibrationError(
            f"target SER {target_ser:g} is below the zero-noise SER floor "
            f"{floor:g} set by nonlinear distortion"
        )
    guess = n0_hint if n0_hint is not None else 1e-12
    lo, lo_ser = 0.0, floor
    hi, hi_ser = guess, calibration_run(guess)
    expansions = 0
    while hi_ser < target_ser:
        lo, lo_ser = hi, hi_ser
        hi *= 4.0
        hi_ser = calibration_run(hi)
        expansions += 1
        if expansions > 60:
            raise CalibrationError("could not bracket the target SER")
    best_n0, best_err = hi, abs(hi_ser - target_ser)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        mid_ser = calibration_run(mid)
        if abs(mid_ser - target_ser) < best_err:
            best_n0, best_err = mid, abs(mid_ser - target_ser)
        if best_err <= rel_tol * target_ser:
            return best_n0
        if mid_ser < target_ser:
            lo = mid
        else:
            hi = mid
    if best_err <= rel_tol * target_ser:
        return best_n0
    raise CalibrationError(
        f"calibration did not converge: best measured SER is off the "
        f"target {target_ser:g} by {best_err:g}"
    )


def reference_profile(link: FiberLink, p0_dbm: float) -> ReferenceProfile:
    """Sawtooth-exponential gamma*P(z): the ground truth for RMS metrics."""
    p0_w = 10.0 ** ((p0_dbm - 30.0) / 10.0)
    z = link.positions_km()
    z_in_span = np.mod(z, link.span_length_km)
    gp = link.gamma_per_w_km * p0_w * np.exp(-link.alpha_per_km * z_in_span)
    return ReferenceProfile(positions_km=z, gamma_prime=gp,
                            span_length_km=link.span_length_km)
