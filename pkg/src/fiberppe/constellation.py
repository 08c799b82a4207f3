"""Square M-QAM alphabets, hard decision, and symbol-error statistics.

All constellations are normalized to unit average symbol energy; physical
power lives entirely in waveform scaling.  The decision-error machinery
models the difference between decided and true symbols as a discrete error
vector over a finite outcome set, with per-class probabilities driven by the
edge-conditional SER of the underlying ASK rails.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .validation import check_integer, check_non_negative, check_probability

__all__ = [
    "ConstellationSpec",
    "ErrorOutcomeSet",
    "ErrorPmf",
    "build_qam",
    "hard_decide",
    "q_function",
    "ser_mask",
    "ser_mqam",
    "edge_ser_from_overall",
    "error_pmf",
]


@dataclass(frozen=True)
class ConstellationSpec:
    """Unit-energy square QAM alphabet with Gray labeling.

    ``points[i]`` is the complex amplitude of symbol index ``i``;
    ``gray_codes[i]`` is the Gray label of that index (one Gray code per
    I/Q rail, concatenated).  ``levels`` are the per-rail amplitudes shared
    by I and Q, ascending.
    """

    order: int
    points: np.ndarray
    gray_codes: np.ndarray
    levels: np.ndarray
    average_energy: float = 1.0

    def __post_init__(self):
        if len(self.points) != self.order:
            raise ValueError("points length must equal the constellation order")
        es = float(np.mean(np.abs(self.points) ** 2))
        if abs(es - 1.0) > 1e-12:
            raise ValueError(f"constellation is not unit-energy (E_s = {es})")
        self.points.setflags(write=False)
        self.gray_codes.setflags(write=False)
        self.levels.setflags(write=False)

    @property
    def rail_size(self) -> int:
        return int(round(np.sqrt(self.order)))

    @property
    def level_spacing(self) -> float:
        return float(self.levels[1] - self.levels[0])

    def index_to_rails(self, indices):
        m = self.rail_size
        idx = np.asarray(indices)
        return idx // m, idx % m


def _gray(n: np.ndarray) -> np.ndarray:
    return n ^ (n >> 1)


def build_qam(M: int) -> ConstellationSpec:
    """Build a unit-average-energy square M-QAM constellation.

    Symbol index ``i`` maps to rails ``(i // sqrt(M), i % sqrt(M))`` with
    ascending amplitude levels; Gray labels are per-rail binary-reflected
    codes.  Raises for non-square orders.
    """
    M = check_integer(M, "M", minimum=4)
    m = int(round(np.sqrt(M)))
    if m * m != M:
        raise ValueError(f"M must be a square QAM order (4, 16, 64, ...), got {M}")
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    scale = np.sqrt(3.0 / (2.0 * (M - 1)))
    levels = levels * scale
    i_lvl, q_lvl = np.divmod(np.arange(M), m)
    points = levels[i_lvl] + 1j * levels[q_lvl]
    bits_per_rail = m.bit_length() - 1
    gray_codes = (_gray(i_lvl) << bits_per_rail) | _gray(q_lvl)
    return ConstellationSpec(order=M, points=points, gray_codes=gray_codes,
                             levels=levels)


def _decide_rail(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # Boundary samples fall to the lower level, hence the lower symbol index.
    midpoints = 0.5 * (levels[:-1] + levels[1:])
    return np.searchsorted(midpoints, values, side="left")


def hard_decide(samples, spec: ConstellationSpec):
    """Nearest-point decision; returns symbol indices (scalar in, scalar out).

    Ties on a decision boundary resolve to the lowest symbol index.
    """
    arr = np.asarray(samples, dtype=np.complex128)
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples must be finite for hard decision")
    i_idx = _decide_rail(arr.real, spec.levels)
    q_idx = _decide_rail(arr.imag, spec.levels)
    idx = i_idx * spec.rail_size + q_idx
    if np.ndim(samples) == 0:
        return int(idx)
    return idx


def q_function(x) -> float:
    """Gaussian tail probability Q(x) = P(N(0,1) > x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def ser_mask(M: int, es_over_n0: float) -> float:
    """Symbol error rate of M-ASK at average symbol energy Es over noise PSD N0."""
    M = check_integer(M, "M", minimum=2)
    es_over_n0 = check_non_negative(es_over_n0, "es_over_n0")
    return 2.0 * (M - 1) / M * q_function(np.sqrt(6.0 * es_over_n0 / (M**2 - 1)))


def ser_mqam(M: int, es_over_n0: float) -> float:
    """Symbol error rate of square M-QAM as two independent sqrt(M)-ASK rails."""
    M = check_integer(M, "M", minimum=4)
    m = int(round(np.sqrt(M)))
    if m * m != M:
        raise ValueError(f"M must be a square QAM order, got {M}")
    return 1.0 - (1.0 - ser_mask(m, es_over_n0 / 2.0)) ** 2


def edge_ser_from_overall(M: int, ser_qam: float) -> float:
    """Edge-conditional rail SER recovered from the overall M-QAM SER."""
    M = check_integer(M, "M", minimum=4)
    m = int(round(np.sqrt(M)))
    if m * m != M:
        raise ValueError(f"M must be a square QAM order, got {M}")
    ser_qam = check_probability(ser_qam, "ser_qam")
    return m / (2.0 * (m - 1)) * (1.0 - np.sqrt(1.0 - ser_qam))


ZERO_CLASS = "zero"
SINGLE_RAIL_CLASS = "S1"
DIAGONAL_CLASS = "S2"


@dataclass(frozen=True)
class ErrorOutcomeSet:
    """All possible decided-minus-true symbol differences for a constellation.

    Outcomes are classified by their (|di|, |dq|) pattern in units of the
    level spacing: single-rail adjacent errors form S1, diagonal adjacent
    errors S2, the zero outcome its own class; anything further out is
    labeled by its step pattern and carries zero probability under the
    adjacent-error model.
    """

    spec: ConstellationSpec
    outcomes: np.ndarray

    def __post_init__(self):
        self.outcomes.setflags(write=False)

    def class_of(self, w: complex) -> str:
        d = w / self.spec.level_spacing
        di, dq = int(round(abs(d.real))), int(round(abs(d.imag)))
        if di == 0 and dq == 0:
            return ZERO_CLASS
        if di + dq == 1:
            return SINGLE_RAIL_CLASS
        if di == 1 and dq == 1:
            return DIAGONAL_CLASS
        return f"steps({di},{dq})"

    def classes(self) -> dict:
        out = {}
        for w in self.outcomes:
            out.setdefault(self.class_of(w), []).append(w)
        return out


def error_outcomes(spec: ConstellationSpec) -> ErrorOutcomeSet:
    """Enumerate every pairwise difference between constellation points."""
    diffs = spec.points[:, None] - spec.points[None, :]
    flat = diffs.ravel()
    # Deduplicate on the integer step grid to dodge float fuzz.
    half = 0.5 * spec.level_spacing
    steps = np.column_stack([np.round(flat.real / half).astype(np.int64),
                             np.round(flat.imag / half).astype(np.int64)])
    _, keep = np.unique(steps, axis=0, return_index=True)
    return ErrorOutcomeSet(spec=spec, outcomes=flat[np.sort(keep)])


@dataclass(frozen=True)
class ErrorPmf:
    """Probabilities of decision-error outcomes at a given overall SER.

    ``class_probabilities`` hold the conditional probability of each single
    accessible outcome in a class (the quantities that reduce to the closed
    4-QAM forms); ``class_weights`` are the expected number of accessible
    outcomes per class for a uniformly drawn true symbol, so that

        P(zero) + sum_c weight_c * prob_c = 1

    ``marginal_totals`` give P(W in class) outright, which is what empirical
    class frequencies estimate.
    """

    ser: float
    class_probabilities: dict
    class_weights: dict
    marginal_totals: dict

    def total_probability(self) -> float:
        total = self.class_probabilities[ZERO_CLASS]
        for name, p in self.class_probabilities.items():
            if name != ZERO_CLASS:
                total += self.class_weights[name] * p
        return total


def error_pmf(spec: ConstellationSpec, ser_qam: float) -> ErrorPmf:
    """Error-vector PMF under independent I/Q rails with adjacent-only errors.

    Each rail is a sqrt(M)-ASK whose edge levels err with the edge-conditional
    probability recovered from the overall SER and whose interior levels err
    at twice that rate (one chance per direction).  Multi-level decision
    errors are assigned probability zero.
    """
    ser_qam = check_probability(ser_qam, "ser_qam", allow_one=False)
    m = spec.rail_size
    e = edge_ser_from_overall(spec.order, ser_qam)
    # Marginal single-rail error probability for a uniformly drawn level.
    rail_ser = (2.0 * (m - 1) / m) * e
    # Expected accessible outcomes per class: interior levels offer two
    # directions, edges one; rails are independent.
    dirs_per_rail = 2.0 * (m - 1) / m
    probs = {
        ZERO_CLASS: (1.0 - rail_ser) ** 2,
        SINGLE_RAIL_CLASS: e * (1.0 - rail_ser),
        DIAGONAL_CLASS: e**2,
    }
    weights = {
        SINGLE_RAIL_CLASS: 2.0 * dirs_per_rail,
        DIAGONAL_CLASS: dirs_per_rail**2,
    }
    totals = {
        ZERO_CLASS: (1.0 - rail_ser) ** 2,
        SINGLE_RAIL_CLASS: 2.0 * rail_ser * (1.0 - rail_ser),
        DIAGONAL_CLASS: rail_ser**2,
    }
    return ErrorPmf(ser=ser_qam, class_probabilities=probs,
                    class_weights=weights, marginal_totals=totals)
