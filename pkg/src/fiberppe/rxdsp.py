"""Receiver chain: CD compensation, matched filtering, carrier phase
recovery, hard decision, and regeneration of the two reference waveforms.

The simulation is synchronous and frequency-locked by construction, so there
is no timing or frequency recovery; the front-end gain is known (the launch
power), so no blind AGC either.  CPR is a frame-constant blind phase search;
its quadrant ambiguity is resolved once per frame against the transmitted
symbols, which affects the TX and HD paths identically.
"""
from dataclasses import dataclass

import numpy as np

from .channel import FiberLink
from .constellation import ConstellationSpec, hard_decide
from .validation import check_equal_length, check_integer
from .waveform import (
    ShapingConfig,
    SymbolFrame,
    Waveform,
    circular_filter,
    rrc_taps,
    shape_indices,
)

__all__ = [
    "RxBundle",
    "cdc",
    "matched_filter_downsample",
    "cpr",
    "align_quadrant",
    "regenerate_references",
    "measure_ser",
    "run_receiver",
]


@dataclass(frozen=True)
class RxBundle:
    """The three profile-estimation inputs plus the measured SER.

    ``a_l`` is the raw received field (before CDC, 2 samples/symbol);
    ``a_tx0`` and ``a_hd0`` are the regenerated references, which differ
    only where decision errors occurred.
    """

    a_l: Waveform
    a_tx0: Waveform
    a_hd0: Waveform
    measured_ser: float

    def __post_init__(self):
        for name, w in (("a_tx0", self.a_tx0), ("a_hd0", self.a_hd0)):
            if len(w) != len(self.a_l) or w.sample_period != self.a_l.sample_period:
                raise ValueError(f"{name} grid does not match a_l")


def cdc(wave: Waveform, link: FiberLink) -> Waveform:
    """Compensate the accumulated dispersion of the whole link (exact inverse)."""
    omega = 2.0 * np.pi * np.fft.fftfreq(len(wave), d=wave.sample_period)
    phase = np.exp(+0.5j * omega**2 * link.beta2_s2_per_km * link.total_length_km)
    return wave.with_samples(np.fft.ifft(np.fft.fft(wave.samples) * phase))


def matched_filter_downsample(wave: Waveform, rolloff: float,
                              span_symbols: int,
                              samples_per_symbol: int = 2) -> np.ndarray:
    """RRC matched filter, then decimation at the known timing phase.

    Returns a symbol-rate complex sequence with unit end-to-end gain for the
    matched cascade (symbol m sits at sample ``m * samples_per_symbol``).
    """
    taps = rrc_taps(samples_per_symbol, rolloff, span_symbols)
    filtered = circular_filter(wave.samples, np.conj(taps[::-1]))
    return filtered[::samples_per_symbol] / samples_per_symbol


def cpr(symbols: np.ndarray, spec: ConstellationSpec,
        test_phases: int = 64) -> tuple:
    """Frame-constant blind phase search over [-pi/4, pi/4).

    Returns ``(rotated_symbols, phase_estimate)`` where the estimate is the
    common rotation that was removed.  The pi/2 ambiguity inherent to QAM is
    left to the caller (see ``align_quadrant``).
    """
    check_integer(test_phases, "test_phases", minimum=16)
    candidates = -np.pi / 4 + np.arange(test_phases) * (np.pi / 2) / test_phases
    best_phase, best_cost = 0.0, np.inf
    for phi in candidates:
        trial = symbols * np.exp(-1j * phi)
        nearest = spec.points[hard_decide(trial, spec)]
        cost = float(np.sum(np.abs(trial - nearest) ** 2))
        if cost < best_cost:
            best_phase, best_cost = float(phi), cost
    return symbols * np.exp(-1j * best_phase), best_phase


def align_quadrant(symbols: np.ndarray, reference: np.ndarray) -> tuple:
    """Remove the residual k*pi/2 rotation by cross-correlating with a reference.

    Returns ``(aligned_symbols, k)`` with k in {0, 1, 2, 3}.
    """
    check_equal_length(symbols, reference, "symbols", "reference")
    rotations = np.exp(-0.5j * np.pi * np.arange(4))
    scores = [np.real(np.vdot(reference, symbols * r)) for r in rotations]
    k = int(np.argmax(scores))
    return symbols * rotations[k], k


def regenerate_references(frame: SymbolFrame, decided: np.ndarray,
                          shaping: ShapingConfig, p0_dbm: float) -> tuple:
    """Rebuild the TX and HD reference fields with one shared transmitter gain.

    Both references run through the identical shaping pipeline; the gain
    that sets the TX reference to the configured launch power is applied to
    the HD reference too, so the two differ only within a filter span of
    each erroneous symbol.
    """
    decided = np.asarray(decided, dtype=np.int64)
    check_equal_length(frame.tx_indices, decided, "frame", "decided")
    tx_shaped = shape_indices(frame.tx_indices, frame.spec, shaping)
    hd_shaped = shape_indices(decided, frame.spec, shaping)
    target = 10.0 ** ((p0_dbm - 30.0) / 10.0)
    gain = np.sqrt(target / tx_shaped.power)
    a_tx0 = tx_shaped.with_samples(tx_shaped.samples * gain)
    a_hd0 = hd_shaped.with_samples(hd_shaped.samples * gain)
    return a_tx0, a_hd0


def measure_ser(decided, truth) -> float:
    """Fraction of mismatched symbol indices."""
    decided = np.asarray(decided)
    truth = np.asarray(truth)
    check_equal_length(decided, truth, "decided", "truth")
    return float(np.mean(decided != truth))


def run_receiver(a_l: Waveform, link: FiberLink, frame: SymbolFrame,
                 shaping: ShapingConfig, p0_dbm: float,
                 test_phases: int = 64) -> tuple:
    """Full receive chain producing the three PPE inputs and the measured SER."""
    comp = cdc(a_l, link)
    sym = matched_filter_downsample(comp, shaping.rolloff,
                                    shaping.filter_span_symbols,
                                    shaping.samples_per_symbol)
    p0_w = 10.0 ** ((p0_dbm - 30.0) / 10.0)
    sym = sym / np.sqrt(p0_w)
    sym, _ = cpr(sym, frame.spec, test_phases)
    sym, _ = align_quadrant(sym, frame.spec.points[frame.tx_indices])
    decided = hard_decide(sym, frame.spec)
    ser = measure_ser(decided, frame.tx_indices)
    a_tx0, a_hd0 = regenerate_references(frame, decided, shaping, p0_dbm)
    return RxBundle(a_l=a_l, a_tx0=a_tx0, a_hd0=a_hd0, measured_ser=ser), decided
