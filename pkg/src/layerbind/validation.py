"""Input validation helpers shared by the numerical modules."""

import numbers

import numpy as np

from .errors import NonFiniteError, RangeError, ShapeError


def check_tokens(x, name="tokens", ndim=2, dtype=np.float64):
    """Return ``x`` as a C-contiguous float array of the given rank.

    Raises ShapeError on a rank mismatch and NonFiniteError on NaN/inf.
    """
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name}: contains non-finite values")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{names[0]} shape {np.shape(a)} != {names[1]} shape {np.shape(b)}")


def check_scalar(value, name, *, low=None, high=None, include_low=True, include_high=True, kind=numbers.Real):
    """Range-check a scalar, mirroring ``sklearn.utils.check_scalar`` but raising RangeError."""
    if not isinstance(value, kind) or isinstance(value, bool):
        raise RangeError(f"{name} must be {kind.__name__}, got {type(value).__name__}")
    if low is not None and (value < low or (value == low and not include_low)):
        raise RangeError(f"{name}={value} below allowed range")
    if high is not None and (value > high or (value == high and not include_high)):
        raise RangeError(f"{name}={value} above allowed range")
    return value


def check_random_state(seed):
    """Seeded PCG64 generator; passes a Generator through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))
