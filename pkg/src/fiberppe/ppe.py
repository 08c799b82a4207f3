"""First-order perturbation machinery and the least-squares profile solve.

The model: after removing the linear (dispersion-only) propagation of a
reference field, the residual of the received field is, to first order, a
linear combination of normalized perturbation waveforms

    du_z = j * dz * D_[z,L][ N[ D_[0,z][ a_ref ] ] ],    N[x] = |x|^2 x,

one per spatial grid position z in {0, dz, ..., L-dz}.  Stacking them as
columns of G and solving min ||G x - dU||_2 recovers the per-position
nonlinear weight gamma*P(z): the physical profile is the real part of x.

Fields entering these operations are expected in the paper-normalized units
(unit average launch power); the estimator facade and the harness handle
that scaling with a single constant per run.
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .channel import FiberLink
from .validation import check_equal_length
from .waveform import Waveform

__all__ = [
    "PerturbationMatrix",
    "PerturbationVector",
    "PowerProfileEstimate",
    "IllConditionedError",
    "MatrixMemoryError",
    "dispersion_operator",
    "perturbation_column",
    "build_matrix",
    "delta_u",
    "mmse_solve",
    "qr_least_squares",
    "dump_system",
    "load_system",
]

TX = "TX"
HD = "HD"
VIRTUAL_HD = "VIRTUAL-HD"
HD_VIRTUAL = "HD-virtual"
HD_CORRECTED = "HD-corrected"

_COMPATIBLE = {TX: {TX}, HD: {HD, VIRTUAL_HD}}


class IllConditionedError(RuntimeError):
    """The perturbation matrix is too ill-conditioned for a reliable solve."""


class MatrixMemoryError(RuntimeError):
    """Assembling the perturbation matrix would exceed the memory budget."""


@dataclass(frozen=True)
class PerturbationMatrix:
    """Columns of normalized perturbation waveforms, one per grid position."""

    columns: np.ndarray
    dz_km: float
    built_from: str

    def __post_init__(self):
        if self.columns.ndim != 2:
            raise ValueError("columns must be a 2-D array")
        if not np.all(np.isfinite(self.columns)):
            raise ValueError("perturbation matrix contains non-finite entries")
        self.columns.setflags(write=False)

    @property
    def n_positions(self) -> int:
        return self.columns.shape[1]

    def positions_km(self) -> np.ndarray:
        return np.arange(self.n_positions) * self.dz_km


@dataclass(frozen=True)
class PerturbationVector:
    """Received-minus-linear residual (or its virtual counterpart)."""

    values: np.ndarray
    built_from: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if not np.all(np.isfinite(values)):
            raise ValueError("perturbation vector contains non-finite entries")
        object.__setattr__(self, "values", values)
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PowerProfileEstimate:
    """Least-squares profile estimate on the dz grid."""

    positions_km: np.ndarray
    gamma_prime_hat: np.ndarray
    raw_solution: np.ndarray
    built_from: str

    def __post_init__(self):
        self.positions_km.setflags(write=False)
        self.gamma_prime_hat.setflags(write=False)
        self.raw_solution.setflags(write=False)

    @property
    def imag_residual(self) -> float:
        """Norm ratio of the discarded imaginary part (diagnostic)."""
        denom = float(np.linalg.norm(self.raw_solution))
        if denom == 0.0:
            return 0.0
        return float(np.linalg.norm(self.raw_solution.imag)) / denom


def _dispersion_phase(n: int, sample_period: float, beta2_s2_per_km: float,
                      distance_km: float) -> np.ndarray:
    omega = 2.0 * np.pi * np.fft.fftfreq(n, d=sample_period)
    return np.exp(-0.5j * omega**2 * beta2_s2_per_km * distance_km)


def dispersion_operator(wave: Waveform, link: FiberLink, z1_km: float,
                        z2_km: float) -> Waveform:
    """Apply the all-pass dispersion operator of the stretch [z1, z2]."""
    if not (0.0 <= z1_km <= z2_km <= link.total_length_km + 1e-9):
        raise ValueError(
            f"need 0 <= z1 <= z2 <= L, got z1={z1_km}, z2={z2_km}, "
            f"L={link.total_length_km}"
        )
    phase = _dispersion_phase(len(wave), wave.sample_period,
                              link.beta2_s2_per_km, z2_km - z1_km)
    return wave.with_samples(np.fft.ifft(np.fft.fft(wave.samples) * phase))


def _check_on_grid(z_km: float, dz_km: float, total_km: float) -> None:
    k = z_km / dz_km
    if abs(k - round(k)) > 1e-9 or not (0.0 <= z_km <= total_km - dz_km + 1e-9):
        raise ValueError(
            f"z={z_km} km is not on the estimation grid "
            f"{{0, {dz_km}, ..., {total_km - dz_km}}}"
        )


def perturbation_column(a_ref: Waveform, link: FiberLink, z_km: float,
                        dz_km: Optional[float] = None) -> np.ndarray:
    """Normalized perturbation waveform for one grid position.

    Computes j * dz * D_[z,L][ |D_[0,z][a]|^2 * D_[0,z][a] ] on the common
    sampling grid.
    """
    dz = link.dz_km if dz_km is None else dz_km
    _check_on_grid(z_km, dz, link.total_length_km)
    spread = dispersion_operator(a_ref, link, 0.0, z_km).samples
    nonlinear = np.abs(spread) ** 2 * spread
    phase = _dispersion_phase(len(a_ref), a_ref.sample_period,
                              link.beta2_s2_per_km, link.total_length_km - z_km)
    out = np.fft.ifft(np.fft.fft(nonlinear) * phase)
    return 1j * dz * out


def build_matrix(a_ref: Waveform, link: FiberLink, built_from: str = TX,
                 dz_km: Optional[float] = None,
                 memory_budget_bytes: int = 2**31,
                 kernel_offset_km: float = 0.0) -> PerturbationMatrix:
    """Assemble all L/dz perturbation columns for a reference field.

    The (0, z) dispersion stage is computed once per column from a cached
    spectrum; the estimated matrix size is checked against the memory budget
    before anything is allocated.

    ``kernel_offset_km`` shifts where inside each step the kernel is
    sampled.  The default 0 reproduces the left-endpoint discretization of
    the perturbation integral; dz/2 gives the midpoint rule, which has a
    much smaller quadrature error when the kernel decorrelates within a
    step (the case for wideband signals at km-scale steps).  Reported
    positions remain the step starts {0, dz, ...} either way.
    """
    dz = link.dz_km if dz_km is None else dz_km
    if not (0.0 <= kernel_offset_km < dz):
        raise ValueError("kernel_offset_km must lie in [0, dz)")
    n_cols = link.total_length_km / dz
    if abs(n_cols - round(n_cols)) > 1e-9:
        raise ValueError(f"dz={dz} km must divide the link length exactly")
    n_cols = int(round(n_cols))
    n = len(a_ref)
    required = 16 * n * n_cols
    if required > memory_budget_bytes:
        raise MatrixMemoryError(
            f"perturbation matrix needs {required} bytes "
            f"({n} samples x {n_cols} columns) but the budget is "
            f"{memory_budget_bytes} bytes"
        )
    spectrum = np.fft.fft(a_ref.samples)
    omega2 = (2.0 * np.pi * np.fft.fftfreq(n, d=a_ref.sample_period)) ** 2
    beta2 = link.beta2_s2_per_km
    total = link.total_length_km
    cols = np.empty((n, n_cols), dtype=np.complex128)
    for k in range(n_cols):
        z = k * dz + kernel_offset_km
        spread = np.fft.ifft(spectrum * np.exp(-0.5j * omega2 * beta2 * z))
        nonlinear = np.abs(spread) ** 2 * spread
        tail = np.exp(-0.5j * omega2 * beta2 * (total - z))
        cols[:, k] = 1j * dz * np.fft.ifft(np.fft.fft(nonlinear) * tail)
    return PerturbationMatrix(columns=cols, dz_km=dz, built_from=built_from)


def delta_u(a_l: Waveform, a_ref: Waveform, link: FiberLink,
            built_from: str = TX) -> PerturbationVector:
    """Received field minus the linearly propagated reference."""
    check_equal_length(a_l.samples, a_ref.samples, "a_l", "a_ref")
    linear = dispersion_operator(a_ref, link, 0.0, link.total_length_km)
    return PerturbationVector(values=a_l.samples - linear.samples,
                              built_from=built_from)


def qr_least_squares(g: np.ndarray, rhs: np.ndarray,
                     condition_limit: float = 1e12) -> tuple:
    """Solve min ||G x - rhs||_2 via a reduced QR factorization.

    ``rhs`` may hold several right-hand sides as columns; the factorization
    is shared.  Returns ``(solution, condition_number)`` and raises
    IllConditionedError when the condition estimate exceeds the limit.
    """
    if g.shape[0] < g.shape[1]:
        raise ValueError(
            f"need at least as many samples as grid positions, "
            f"got {g.shape[0]} x {g.shape[1]}"
        )
    q, r = np.linalg.qr(g, mode="reduced")
    cond = float(np.linalg.cond(r))
    if not np.isfinite(cond) or cond > condition_limit:
        raise IllConditionedError(
            f"perturbation matrix condition number {cond:.3e} exceeds "
            f"{condition_limit:.1e}: the profile inversion is unreliable at "
            f"this spatial step (known small-dz ill-posedness)"
        )
    x = solve_triangular(r, q.conj().T @ rhs, lower=False)
    return x, cond


def mmse_solve(g: PerturbationMatrix, du: PerturbationVector,
               condition_limit: float = 1e12) -> PowerProfileEstimate:
    """Least-squares profile estimate; equals the normal-equations solution.

    The physical profile is the real part of the complex solution; the
    imaginary residual stays available on the estimate as a diagnostic.
    """
    if len(du) != g.columns.shape[0]:
        raise ValueError(
            f"vector length {len(du)} does not match matrix rows "
            f"{g.columns.shape[0]}"
        )
    if du.built_from not in _COMPATIBLE.get(g.built_from, {g.built_from}):
        raise ValueError(
            f"provenance mismatch: matrix built from {g.built_from}, "
            f"vector from {du.built_from}"
        )
    x, _ = qr_least_squares(g.columns, du.values, condition_limit)
    built = HD_VIRTUAL if du.built_from == VIRTUAL_HD else du.built_from
    return PowerProfileEstimate(positions_km=g.positions_km(),
                                gamma_prime_hat=x.real.copy(),
                                raw_solution=x,
                                built_from=built)


def dump_system(g: PerturbationMatrix, du: PerturbationVector, prefix) -> dict:
    """Write G and dU as little-endian interleaved complex64 with a JSON sidecar."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    g_path = prefix.parent / (prefix.name + ".G.bin")
    du_path = prefix.parent / (prefix.name + ".dU.bin")
    g_path.write_bytes(np.ascontiguousarray(g.columns).astype("<c8").tobytes())
    du_path.write_bytes(np.ascontiguousarray(du.values).astype("<c8").tobytes())
    meta = {
        "rows": int(g.columns.shape[0]),
        "cols": int(g.columns.shape[1]),
        "dz_km": g.dz_km,
        "matrix_built_from": g.built_from,
        "vector_built_from": du.built_from,
        "dtype": "complex64 little-endian, interleaved re/im, row-major",
        "matrix_file": g_path.name,
        "vector_file": du_path.name,
    }
    sidecar = prefix.parent / (prefix.name + ".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def load_system(prefix) -> tuple:
    """Read back a dumped (G, dU) pair."""
    prefix = Path(prefix)
    meta = json.loads((prefix.parent / (prefix.name + ".json")).read_text())
    raw = (prefix.parent / (prefix.name + ".G.bin")).read_bytes()
    g = np.frombuffer(raw, dtype="<c8").reshape(
        meta["rows"], meta["cols"]).astype(np.complex128)
    raw_u = (prefix.parent / (prefix.name + ".dU.bin")).read_bytes()
    du = np.frombuffer(raw_u, dtype="<c8").astype(np.complex128)
    return (
        PerturbationMatrix(columns=g, dz_km=meta["dz_km"],
                           built_from=meta["matrix_built_from"]),
        PerturbationVector(values=du, built_from=meta["vector_built_from"]),
    )
