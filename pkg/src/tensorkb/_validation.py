"""Input validation helpers shared across the package."""

from __future__ import annotations

import numbers

import numpy as np


def check_triples(X, n_entities=None, n_predicates=None, name="triples"):
    """Validate and canonicalize an array of (subject, predicate, object) triples.

    Accepts any (n, 3) integer-like array, including lists of tuples. Returns
    a contiguous int64 array. Bounds are checked against ``n_entities`` /
    ``n_predicates`` when given.
    """
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(
            f"{name} must have shape (n, 3), got {arr.shape}"
        )
    if arr.dtype.kind == "f":
        if not np.all(arr == np.floor(arr)):
            raise ValueError(f"{name} must contain integer indices")
        arr = arr.astype(np.int64)
    elif arr.dtype.kind in "iu":
        arr = arr.astype(np.int64)
    else:
        raise ValueError(f"{name} must be an integer array, got dtype {arr.dtype}")
    if arr.size and arr.min() < 0:
        raise ValueError(f"{name} contains negative indices")
    if arr.size and n_entities is not None:
        emax = int(max(arr[:, 0].max(), arr[:, 2].max()))
        if emax >= n_entities:
            raise ValueError(
                f"{name} references entity {emax} but n_entities={n_entities}"
            )
    if arr.size and n_predicates is not None:
        pmax = int(arr[:, 1].max())
        if pmax >= n_predicates:
            raise ValueError(
                f"{name} references predicate {pmax} but n_predicates={n_predicates}"
            )
    return np.ascontiguousarray(arr)


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive_float(value, name):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ValueError(f"{name} must be a positive real, got {value!r}")
    value = float(value)
    if not value > 0 or not np.isfinite(value):
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def check_nonnegative_float(value, name):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ValueError(f"{name} must be a nonnegative real, got {value!r}")
    value = float(value)
    if value < 0 or not np.isfinite(value):
        raise ValueError(f"{name} must be >= 0 and finite, got {value}")
    return value


def check_choice(value, name, choices):
    if value not in choices:
        raise ValueError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value


def check_index(value, name, size):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer index, got {value!r}")
    value = int(value)
    if not 0 <= value < size:
        raise IndexError(f"{name}={value} out of range [0, {size})")
    return value
