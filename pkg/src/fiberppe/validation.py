"""Input validation helpers shared across the package."""
import numbers

import numpy as np


def as_complex_array(x, name="array"):
    """Coerce to a 1-D complex128 ndarray, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite samples")
    return arr


def as_float_array(x, name="array"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_non_negative(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a non-negative finite number, got {value!r}")
    return float(value)


def check_probability(value, name, *, allow_one=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite probability, got {value!r}")
    hi_ok = value <= 1.0 if allow_one else value < 1.0
    if not (0.0 <= value and hi_ok):
        hi = "1" if allow_one else "1 (exclusive)"
        raise ValueError(f"{name} must lie in [0, {hi}], got {value!r}")
    return float(value)


def check_integer(value, name, *, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_same_grid(positions_a, positions_b, name_a="first", name_b="second"):
    """Require two position grids to match exactly."""
    a = np.asarray(positions_a, dtype=float)
    b = np.asarray(positions_b, dtype=float)
    if a.shape != b.shape or not np.array_equal(a, b):
        raise ValueError(
            f"position grids of {name_a} and {name_b} do not match "
            f"({a.shape} vs {b.shape})"
        )
    return a


def check_equal_length(a, b, name_a="first", name_b="second"):
    if len(a) != len(b):
        raise ValueError(
            f"{name_a} and {name_b} must have equal length ({len(a)} vs {len(b)})"
        )
