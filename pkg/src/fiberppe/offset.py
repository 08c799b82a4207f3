"""Power-offset analysis for hard-decision profile estimation.

With a decision-errored reference, the least-squares profile lands below the
truth by a systematic, position-dependent offset.  Re-transmitting the HD
waveform through the same (noiseless) link yields a virtual perturbation
vector; the offset is then the least-squares image of

    U_hd - U_tx + dU_hd_virtual - dU_tx

under the HD perturbation matrix, and adding it back onto the HD estimate
("ideal removal", a diagnostic only) reproduces the virtual-system estimate
exactly.  The offset at a fixed position follows
k*SER + p*sqrt(1-SER) + q over the symbol error rate.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .channel import FiberLink, ReferenceProfile, ssfm_propagate
from .estimators import OffsetSerRegressor
from .ppe import (
    HD_CORRECTED,
    VIRTUAL_HD,
    PerturbationMatrix,
    PerturbationVector,
    PowerProfileEstimate,
    dispersion_operator,
    qr_least_squares,
)
from .validation import as_float_array, check_same_grid
from .waveform import Waveform

__all__ = [
    "OffsetReport",
    "OffsetFit",
    "virtual_hd_perturbation",
    "power_offset",
    "ideal_po_removal",
    "po_to_db",
    "fit_offset_vs_ser",
    "rms_error",
    "span_start_mask",
]


@dataclass(frozen=True)
class OffsetReport:
    """Per-position power offset of one run, in profile units (1/km).

    Sign convention: estimate_hd = truth - po, so po is positive where the
    HD path underestimates.  ``po_db`` is attached by ``with_db`` and is NaN
    at positions where po >= gamma_prime (flagged, excluded from aggregates).
    """

    positions_km: np.ndarray
    po_linear: np.ndarray
    raw_po: np.ndarray
    ser: float
    launch_power_dbm: float
    modulation: int
    po_db: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions_km.setflags(write=False)
        self.po_linear.setflags(write=False)
        self.raw_po.setflags(write=False)
        if self.po_db is not None:
            self.po_db.setflags(write=False)

    def with_db(self, gamma_prime_ref: np.ndarray) -> "OffsetReport":
        return replace(self, po_db=po_to_db(self.po_linear, gamma_prime_ref))

    @property
    def flagged(self) -> np.ndarray:
        if self.po_db is None:
            raise ValueError("po_db has not been computed; call with_db first")
        return ~np.isfinite(self.po_db)


@dataclass(frozen=True)
class OffsetFit:
    """Coefficients of the offset-vs-SER law at one position."""

    k: float
    p: float
    q: float
    ser_grid: np.ndarray
    residuals: np.ndarray
    r_squared: float

    def __post_init__(self):
        self.ser_grid.setflags(write=False)
        self.residuals.setflags(write=False)

    def predict(self, ser) -> np.ndarray:
        ser = np.asarray(ser, dtype=float)
        return self.k * ser + self.p * np.sqrt(1.0 - ser) + self.q

    @property
    def residual_scale(self) -> float:
        return float(np.sqrt(np.mean(self.residuals**2)))

    @property
    def value_at_zero_ser(self) -> float:
        return self.p + self.q


def virtual_hd_perturbation(a_hd0: Waveform, link: FiberLink,
                            step_km: float = 0.1,
                            normalization: Optional[float] = None
                            ) -> PerturbationVector:
    """Perturbation the HD waveform would acquire over the physical link.

    ``a_hd0`` must be at launch power (sqrt(W) units); it is re-propagated
    through the identical noiseless link and the linear propagation is
    subtracted.  ``normalization`` is the amplitude constant that converts
    physical fields to the unit-power units of the estimation problem;
    by default the waveform's own RMS amplitude (exact for launch-scaled
    references).
    """
    if a_hd0.power <= 0.0:
        raise ValueError("a_hd0 must carry power")
    norm = np.sqrt(a_hd0.power) if normalization is None else float(normalization)
    received = ssfm_propagate(a_hd0, link, step_km)
    linear = dispersion_operator(a_hd0, link, 0.0, link.total_length_km)
    values = (received.samples - linear.samples) / norm
    return PerturbationVector(values=values, built_from=VIRTUAL_HD)


def power_offset(g_hd: PerturbationMatrix, u_hd: np.ndarray, u_tx: np.ndarray,
                 virt_du: PerturbationVector, du_tx: PerturbationVector,
                 *, ser: float = np.nan, launch_power_dbm: float = np.nan,
                 modulation: int = 0,
                 condition_limit: float = 1e12) -> OffsetReport:
    """Analytical power offset of the HD-data estimate.

    All inputs must come from the same run and share one normalization
    constant.  ``u_hd``/``u_tx`` are the linearly propagated HD/TX
    references on the common grid.
    """
    n = g_hd.columns.shape[0]
    for name, vec in (("u_hd", u_hd), ("u_tx", u_tx),
                      ("virt_du", virt_du.values), ("du_tx", du_tx.values)):
        if len(vec) != n:
            raise ValueError(f"{name} length {len(vec)} does not match the "
                             f"matrix rows {n}")
    bracket = u_hd - u_tx + virt_du.values - du_tx.values
    raw, _ = qr_least_squares(g_hd.columns, bracket, condition_limit)
    return OffsetReport(positions_km=g_hd.positions_km(),
                        po_linear=raw.real.copy(), raw_po=raw,
                        ser=ser, launch_power_dbm=launch_power_dbm,
                        modulation=modulation)


def ideal_po_removal(profile_hd: PowerProfileEstimate,
                     report: OffsetReport) -> PowerProfileEstimate:
    """Add the analytical offset back onto the HD estimate (diagnostic only)."""
    check_same_grid(profile_hd.positions_km, report.positions_km,
                    "profile", "offset report")
    return PowerProfileEstimate(
        positions_km=profile_hd.positions_km,
        gamma_prime_hat=profile_hd.gamma_prime_hat + report.po_linear,
        raw_solution=profile_hd.raw_solution + report.raw_po,
        built_from=HD_CORRECTED,
    )


def po_to_db(po_linear: np.ndarray, gamma_prime_ref: np.ndarray) -> np.ndarray:
    """Offset in dB: 10*log10(1 / (1 - po/gamma_prime)) per position.

    Positions where po >= gamma_prime have no finite dB value and come back
    as NaN; aggregate consumers must exclude them.
    """
    po = np.asarray(po_linear, dtype=float)
    gp = np.asarray(gamma_prime_ref, dtype=float)
    if po.shape != gp.shape:
        raise ValueError("po_linear and gamma_prime_ref must share a grid")
    ratio = po / gp
    out = np.full_like(po, np.nan)
    ok = ratio < 1.0
    out[ok] = 10.0 * np.log10(1.0 / (1.0 - ratio[ok]))
    return out


def fit_offset_vs_ser(ser_grid, po_at_z) -> OffsetFit:
    """Least-squares fit of po = k*SER + p*sqrt(1-SER) + q.

    Needs at least 4 distinct SER points; the basis is linear in (k, p, q)
    so the fit is exact for data generated from the law.
    """
    ser = as_float_array(ser_grid, "ser_grid")
    po = as_float_array(po_at_z, "po_at_z")
    if len(ser) != len(po):
        raise ValueError("ser_grid and po_at_z must have equal length")
    if len(np.unique(ser)) < 4:
        raise ValueError("need at least 4 distinct SER points to fit the law")
    reg = OffsetSerRegressor().fit(ser, po)
    fitted = reg.predict(ser)
    residuals = po - fitted
    return OffsetFit(k=reg.k_, p=reg.p_, q=reg.q_, ser_grid=ser,
                     residuals=residuals, r_squared=reg.r_squared_)


def span_start_mask(positions_km: np.ndarray, span_length_km: float,
                    within_km: float = 40.0) -> np.ndarray:
    """Positions in the first ``within_km`` of each span (noise-robust region)."""
    return np.mod(np.asarray(positions_km, dtype=float), span_length_km) < within_km


def rms_error(profile: PowerProfileEstimate, reference: ReferenceProfile,
              position_filter=None) -> float:
    """RMS of (estimate - reference) over the selected positions.

    ``position_filter`` may be a boolean mask, a callable mapping positions
    to a mask, or None for the default span-start selection (first 40 km of
    each span).
    """
    check_same_grid(profile.positions_km, reference.positions_km,
                    "estimate", "reference")
    if position_filter is None:
        mask = span_start_mask(reference.positions_km, reference.span_length_km)
    elif callable(position_filter):
        mask = np.asarray(position_filter(reference.positions_km), dtype=bool)
    else:
        mask = np.asarray(position_filter, dtype=bool)
    if mask.shape != profile.positions_km.shape:
        raise ValueError("position filter does not match the grid")
    if not np.any(mask):
        raise ValueError("position filter selects no positions")
    diff = profile.gamma_prime_hat[mask] - reference.gamma_prime[mask]
    return float(np.sqrt(np.mean(diff**2)))
