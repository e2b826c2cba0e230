"""Small argument checks shared across modules."""

from __future__ import annotations

import numpy as np


def check_open_interval(value, lo, hi, name):
    value = float(value)
    if not (lo < value < hi):
        raise ValueError(f"{name} must lie in ({lo}, {hi}), got {value}")
    return value


def check_half_open(value, lo, hi, name):
    """Check ``lo < value <= hi``."""
    value = float(value)
    if not (lo < value <= hi):
        raise ValueError(f"{name} must lie in ({lo}, {hi}], got {value}")
    return value


def check_closed(value, lo, hi, name):
    value = float(value)
    if not (lo <= value <= hi):
        raise ValueError(f"{name} must lie in [{lo}, {hi}], got {value}")
    return value


def check_positive(value, name):
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_vector(v, n, name="v"):
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != n:
        raise ValueError(f"{name} must be a vector of length {n}, got shape {v.shape}")
    return v
