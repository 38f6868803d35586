"""Input validation helpers shared by the public functions and estimators."""

import numpy as np


def check_field(values, n_elements, name="field"):
    """Return ``values`` as a finite 1D float array of length ``n_elements``."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.shape[0] != n_elements:
        raise ValueError(f"{name} has {arr.shape[0]} entries, expected {n_elements}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_density(x, n_elements, x_min=0.0, x_max=1.0, name="density"):
    arr = check_field(x, n_elements, name)
    if arr.min(initial=x_min) < x_min or arr.max(initial=x_max) > x_max:
        raise ValueError(f"{name} leaves the bounds [{x_min}, {x_max}]")
    return arr


def check_positive_int(value, name):
    if int(value) != value or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)
