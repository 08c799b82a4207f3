"""Symbol generation, RRC pulse shaping, and the sampled-field container.

Frames are treated as periodic: every filter in the package is a circular
convolution, so frequency-domain operators are exact and transmit/reference
paths stay sample-aligned with no edge transients.
"""
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .constellation import ConstellationSpec
from .validation import as_complex_array, check_integer, check_positive

__all__ = [
    "Waveform",
    "SymbolFrame",
    "ShapingConfig",
    "generate_symbols",
    "rrc_taps",
    "rrc_shape",
    "shape_indices",
    "set_launch_power",
    "circular_filter",
]


@dataclass(frozen=True)
class Waveform:
    """Uniformly sampled complex baseband field.

    ``samples`` are in sqrt(W); ``sample_period`` in seconds;
    ``center_position_km`` is a provenance tag only.
    """

    samples: np.ndarray
    sample_period: float
    center_position_km: float = 0.0

    def __post_init__(self):
        samples = as_complex_array(self.samples, "samples")
        if len(samples) < 2:
            raise ValueError("a waveform needs at least 2 samples")
        object.__setattr__(self, "samples", samples)
        check_positive(self.sample_period, "sample_period")
        self.samples.setflags(write=False)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def power(self) -> float:
        """Average power, mean |sample|^2, in W."""
        return float(np.mean(np.abs(self.samples) ** 2))

    @property
    def power_dbm(self) -> float:
        return 10.0 * np.log10(self.power) + 30.0

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.sample_period

    def with_samples(self, samples, position_km: Optional[float] = None) -> "Waveform":
        pos = self.center_position_km if position_km is None else position_km
        return Waveform(np.asarray(samples, dtype=np.complex128),
                        self.sample_period, pos)


@dataclass(frozen=True)
class SymbolFrame:
    """Transmitted symbol indices plus, after reception, the decided ones."""

    tx_indices: np.ndarray
    spec: ConstellationSpec
    seed: int
    hd_indices: Optional[np.ndarray] = None

    def __post_init__(self):
        tx = np.asarray(self.tx_indices, dtype=np.int64)
        object.__setattr__(self, "tx_indices", tx)
        tx.setflags(write=False)
        if self.hd_indices is not None:
            hd = np.asarray(self.hd_indices, dtype=np.int64)
            if len(hd) != len(tx):
                raise ValueError("hd_indices must match tx_indices in length")
            object.__setattr__(self, "hd_indices", hd)
            hd.setflags(write=False)

    def __len__(self) -> int:
        return len(self.tx_indices)

    def with_decisions(self, hd_indices) -> "SymbolFrame":
        return replace(self, hd_indices=np.asarray(hd_indices, dtype=np.int64))

    def tx_points(self) -> np.ndarray:
        return self.spec.points[self.tx_indices]


@dataclass(frozen=True)
class ShapingConfig:
    """Transmitter pulse-shaping settings, reused verbatim for references."""

    samples_per_symbol: int = 2
    rolloff: float = 0.1
    filter_span_symbols: int = 64
    baud_rate_hz: float = 130e9

    def __post_init__(self):
        check_integer(self.samples_per_symbol, "samples_per_symbol", minimum=2)
        if not (0.0 < self.rolloff <= 1.0):
            raise ValueError(f"rolloff must lie in (0, 1], got {self.rolloff}")
        check_integer(self.filter_span_symbols, "filter_span_symbols", minimum=2)
        check_positive(self.baud_rate_hz, "baud_rate_hz")

    @property
    def sample_period(self) -> float:
        return 1.0 / (self.baud_rate_hz * self.samples_per_symbol)


def generate_symbols(spec: ConstellationSpec, count: int, seed: int) -> SymbolFrame:
    """Draw i.i.d. uniform symbol indices, reproducible from the seed."""
    count = check_integer(count, "count", minimum=1)
    rng = np.random.default_rng(seed)
    return SymbolFrame(tx_indices=rng.integers(0, spec.order, size=count),
                       spec=spec, seed=int(seed))


def rrc_taps(samples_per_symbol: int, rolloff: float, span_symbols: int) -> np.ndarray:
    """Root-raised-cosine taps, energy-normalized to sum |g|^2 = sps.

    With that normalization, shaping a unit-energy constellation yields unit
    average power and the matched cascade has unit gain at symbol instants.
    """
    sps = check_integer(samples_per_symbol, "samples_per_symbol", minimum=2)
    if not (0.0 < rolloff <= 1.0):
        raise ValueError(f"rolloff must lie in (0, 1], got {rolloff}")
    n = span_symbols * sps
    if n % 2:
        n += 1
    t = (np.arange(n + 1) - n // 2) / sps
    b = rolloff
    h = np.empty_like(t)
    zero = np.isclose(t, 0.0)
    sing = np.isclose(np.abs(t), 1.0 / (4.0 * b))
    rest = ~(zero | sing)
    h[zero] = 1.0 - b + 4.0 * b / np.pi
    h[sing] = (b / np.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * b))
        + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * b))
    )
    tr = t[rest]
    h[rest] = (np.sin(np.pi * tr * (1.0 - b))
               + 4.0 * b * tr * np.cos(np.pi * tr * (1.0 + b))) / (
        np.pi * tr * (1.0 - (4.0 * b * tr) ** 2)
    )
    return h * np.sqrt(sps / np.sum(h**2))


def circular_filter(samples: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Circularly convolve with taps centered at lag zero.

    Taps longer than the frame wrap around, consistent with the periodic
    frame convention.
    """
    n = len(samples)
    kernel = np.zeros(n, dtype=np.complex128)
    half = len(taps) // 2
    idx = (np.arange(len(taps)) - half) % n
    np.add.at(kernel, idx, taps)
    return np.fft.ifft(np.fft.fft(samples) * np.fft.fft(kernel))


def _tail_energy_fraction(samples_per_symbol, rolloff, span_symbols) -> float:
    wide = rrc_taps(samples_per_symbol, rolloff, max(4 * span_symbols, 256))
    narrow = rrc_taps(samples_per_symbol, rolloff, span_symbols)
    # Both are renormalized; compare captured energy on the raw (pre-norm) tail.
    half = len(narrow) // 2
    mid = len(wide) // 2
    captured = np.sum(wide[mid - half:mid + half + 1] ** 2)
    return float(1.0 - captured / np.sum(wide**2))


def rrc_shape(frame: SymbolFrame, samples_per_symbol: int = 2,
              rolloff: float = 0.1, filter_span_symbols: int = 64,
              baud_rate_hz: float = 130e9) -> Waveform:
    """Upsample and RRC-filter a symbol frame into a unit-power baseband field.

    The frame is periodic, so the shaped waveform has exactly
    ``len(frame) * samples_per_symbol`` samples with symbol m centered at
    sample ``m * samples_per_symbol``.  A warning is issued if the truncated
    filter span captures less than 99.9% of the pulse energy.
    """
    tail = _tail_energy_fraction(samples_per_symbol, rolloff, filter_span_symbols)
    if tail > 1e-3:
        warnings.warn(
            f"RRC span of {filter_span_symbols} symbols leaves "
            f"{tail:.2e} of the tap energy outside the filter",
            stacklevel=2,
        )
    shaping = ShapingConfig(samples_per_symbol=samples_per_symbol,
                            rolloff=rolloff,
                            filter_span_symbols=filter_span_symbols,
                            baud_rate_hz=baud_rate_hz)
    return shape_indices(frame.tx_indices, frame.spec, shaping)


def shape_indices(indices, spec: ConstellationSpec, shaping: ShapingConfig) -> Waveform:
    """Shape an arbitrary index sequence through the transmitter pipeline."""
    taps = rrc_taps(shaping.samples_per_symbol, shaping.rolloff,
                    shaping.filter_span_symbols)
    up = np.zeros(len(indices) * shaping.samples_per_symbol, dtype=np.complex128)
    up[::shaping.samples_per_symbol] = spec.points[np.asarray(indices, dtype=np.int64)]
    return Waveform(circular_filter(up, taps), shaping.sample_period)


def set_launch_power(wave: Waveform, p0_dbm: float) -> Waveform:
    """Scale a waveform so its average power is exactly 10^((p0_dbm-30)/10) W."""
    if wave.power <= 0.0:
        raise ValueError("cannot set the launch power of a zero-power waveform")
    target = 10.0 ** ((p0_dbm - 30.0) / 10.0)
    return wave.with_samples(wave.samples * np.sqrt(target / wave.power))
