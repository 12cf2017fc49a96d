"""Small argument checkers used across the package.

These mirror the ``sklearn.utils.validation`` helpers in spirit: they either
return a cleaned value or raise a typed error with the offending name.
"""

from __future__ import annotations

import math
from numbers import Integral, Real

import numpy as np

from .exceptions import InputDomainError


def check_int(value, name, *, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, (Integral, np.integer)):
        raise InputDomainError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise InputDomainError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise InputDomainError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_real(value, name, *, minimum=None, maximum=None, strict_min=False):
    if isinstance(value, bool) or not isinstance(value, (Real, np.floating, np.integer)):
        raise InputDomainError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise InputDomainError(f"{name} must be finite, got {value}")
    if minimum is not None:
        if strict_min and value <= minimum:
            raise InputDomainError(f"{name} must be > {minimum}, got {value}")
        if not strict_min and value < minimum:
            raise InputDomainError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise InputDomainError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_probability(value, name):
    return check_real(value, name, minimum=0.0, maximum=1.0)


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Unlike sklearn's helper this never falls back to the global RNG: ``None``
    is rejected so that every stochastic call is reproducible.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (np.random.SeedSequence, Integral, np.integer)) and not isinstance(seed, bool):
        return np.random.default_rng(seed)
    from .exceptions import ConfigError

    raise ConfigError(f"a seed or numpy Generator is required, got {seed!r}")


def check_1d(values, name, *, length=None, dtype=float):
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim != 1:
        raise InputDomainError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise InputDomainError(f"{name} must have length {length}, got {arr.shape[0]}")
    if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
        raise InputDomainError(f"{name} contains non-finite values")
    return arr
