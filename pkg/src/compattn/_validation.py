"""Input validation helpers shared by every module."""

from __future__ import annotations

import numbers

import numpy as np


class ContractError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


def check_matrix(x, name="matrix", *, cols=None, allow_empty=True):
    """Return ``x`` as a 2-D float64 array, validating shape and finiteness."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if cols is not None and arr.shape[1] != cols:
        raise ContractError(f"{name} must have {cols} columns, got shape {arr.shape}")
    if not allow_empty and arr.shape[0] == 0:
        raise ContractError(f"{name} must have at least one row")
    if arr.size and not np.isfinite(arr).all():
        raise ContractError(f"{name} contains NaN or Inf")
    return arr


def check_count(value, name, *, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ContractError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ContractError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not value > 0:
        raise ContractError(f"{name} must be > 0, got {value!r}")
    return float(value)


def check_token_ids(ids, vocab, name="token ids", *, allow_empty=False):
    out = []
    for t in ids:
        if isinstance(t, bool) or not isinstance(t, numbers.Integral):
            raise ContractError(f"{name}: {t!r} is not an integer id")
        if not 0 <= t < vocab:
            raise ContractError(f"{name}: id {t} outside vocabulary [0, {vocab})")
        out.append(int(t))
    if not out and not allow_empty:
        raise ContractError(f"{name} must be non-empty")
    return out
