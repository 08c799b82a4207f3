"""Estimator-style front ends so the solvers compose with sklearn tooling."""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .channel import FiberLink
from .ppe import TX, build_matrix, delta_u, mmse_solve
from .validation import as_float_array
from .waveform import Waveform

__all__ = ["MmsePowerProfileEstimator", "OffsetSerRegressor"]


class MmsePowerProfileEstimator(BaseEstimator):
    """Fiber-longitudinal power profile estimator.

    fit(received, reference) builds the perturbation matrix from the
    reference field, forms the received-minus-linear residual, and solves
    the least-squares system; the recovered profile lands in
    ``gamma_prime_`` on the ``positions_km_`` grid (units 1/km: the
    nonlinear coefficient times local power).

    Both fields are rescaled by the reference's RMS amplitude before the
    solve, matching the unit-launch-power normalization the model assumes;
    pass ``normalization`` to pin the constant explicitly (e.g. when solving
    several related systems that must share it).

    Parameters
    ----------
    link : FiberLink
        Span layout and fiber constants.
    dz_km : float, optional
        Spatial step of the estimate; defaults to the link's.
    reference_label : str
        Provenance tag for the reference data ("TX" or "HD").
    condition_limit : float
        Condition-number guard for the solve.
    memory_budget_bytes : int
        Cap on the assembled matrix size.
    normalization : float, optional
        Amplitude constant converting the fields to unit-power units.
    kernel_offset_km : float, optional
        Where inside each step the perturbation kernel is sampled.  None
        (default) uses the step midpoint, whose quadrature error is far
        smaller than the left endpoint's for wideband signals; pass 0.0 for
        the literal left-endpoint discretization.
    """

    def __init__(self, link: FiberLink = None, dz_km: float = None,
                 reference_label: str = TX, condition_limit: float = 1e12,
                 memory_budget_bytes: int = 2**31, normalization: float = None,
                 kernel_offset_km: float = None):
        self.link = link
        self.dz_km = dz_km
        self.reference_label = reference_label
        self.condition_limit = condition_limit
        self.memory_budget_bytes = memory_budget_bytes
        self.normalization = normalization
        self.kernel_offset_km = kernel_offset_km

    def fit(self, received: Waveform, reference: Waveform):
        if self.link is None:
            raise ValueError("a FiberLink is required")
        if len(received) != len(reference):
            raise ValueError("received and reference must share the grid")
        norm = self.normalization
        if norm is None:
            norm = np.sqrt(reference.power)
        if norm <= 0:
            raise ValueError("reference carries no power")
        rx = received.with_samples(received.samples / norm)
        ref = reference.with_samples(reference.samples / norm)
        dz = self.link.dz_km if self.dz_km is None else self.dz_km
        offset = self.kernel_offset_km
        if offset is None:
            offset = dz / 2.0
        g = build_matrix(ref, self.link, built_from=self.reference_label,
                         dz_km=self.dz_km,
                         memory_budget_bytes=self.memory_budget_bytes,
                         kernel_offset_km=offset)
        du = delta_u(rx, ref, self.link, built_from=self.reference_label)
        estimate = mmse_solve(g, du, condition_limit=self.condition_limit)
        self.matrix_ = g
        self.delta_u_ = du
        self.positions_km_ = estimate.positions_km
        self.gamma_prime_ = estimate.gamma_prime_hat
        self.raw_solution_ = estimate.raw_solution
        self.imag_residual_ = estimate.imag_residual
        self.estimate_ = estimate
        return self

    def profile(self):
        if not hasattr(self, "estimate_"):
            raise NotFittedError("call fit before requesting the profile")
        return self.estimate_


class OffsetSerRegressor(BaseEstimator, RegressorMixin):
    """Linear regression on the basis {SER, sqrt(1-SER), 1}.

    After fit, ``k_``, ``p_`` and ``q_`` hold the law's coefficients and
    ``predict`` evaluates k*SER + p*sqrt(1-SER) + q.
    """

    def fit(self, ser, po):
        ser = as_float_array(np.ravel(ser), "ser")
        po = as_float_array(np.ravel(po), "po")
        if len(ser) != len(po):
            raise ValueError("ser and po must have equal length")
        if np.any(ser < 0.0) or np.any(ser > 1.0):
            raise ValueError("SER values must lie in [0, 1]")
        if np.ptp(ser) == 0.0:
            raise ValueError("degenerate grid: all SER values are equal")
        basis = np.column_stack([ser, np.sqrt(1.0 - ser), np.ones_like(ser)])
        coef, *_ = np.linalg.lstsq(basis, po, rcond=None)
        self.k_, self.p_, self.q_ = (float(c) for c in coef)
        fitted = basis @ coef
        ss_res = float(np.sum((po - fitted) ** 2))
        ss_tot = float(np.sum((po - np.mean(po)) ** 2))
        self.r_squared_ = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        return self

    def predict(self, ser):
        if not hasattr(self, "k_"):
            raise NotFittedError("call fit before predict")
        ser = np.asarray(ser, dtype=float)
        return self.k_ * ser + self.p_ * np.sqrt(1.0 - ser) + self.q_
