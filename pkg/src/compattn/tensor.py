"""Dense float64 matrix kernels, seeded RNG and a matmul FLOP counter.

Matrices are plain 2-D ``numpy.ndarray`` objects with dtype float64 in C
(row-major) order. Every matrix product in the package goes through
:func:`matmul` so that :func:`count_flops` sees it.
"""

from __future__ import annotations

import contextlib
import contextvars

import numpy as np

from ._validation import ContractError, check_count, check_matrix, check_positive

# Most-negative finite float, used in place of -inf for masked scores.
MASK_FILL = np.finfo(np.float64).min


class FlopCounter:
    """Accumulates ``2*m*n*p`` for every (m x n)(n x p) product."""

    def __init__(self):
        self.flops = 0
        self.calls = 0

    def add(self, m, n, p):
        self.flops += 2 * m * n * p
        self.calls += 1

    def __repr__(self):
        return f"FlopCounter(flops={self.flops}, calls={self.calls})"


_active_counter: contextvars.ContextVar[FlopCounter | None] = contextvars.ContextVar(
    "compattn_flop_counter", default=None
)


@contextlib.contextmanager
def count_flops():
    """Count matmul FLOPs issued in the current context.

    >>> with count_flops() as c:
    ...     _ = matmul(np.ones((2, 3)), np.ones((3, 4)))
    >>> c.flops
    48
    """
    counter = FlopCounter()
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)


def matmul(a, b):
    """Matrix product ``a @ b`` in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul needs 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractError(
            f"matmul dimension mismatch: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    counter = _active_counter.get()
    if counter is not None:
        counter.add(a.shape[0], a.shape[1], b.shape[1])
    return a @ b


def _permit_array(mask):
    return np.asarray(getattr(mask, "permit", mask), dtype=bool)


def softmax_rows_masked(scores, mask):
    """Row-wise softmax restricted to permitted entries.

    Masked entries come out exactly 0. Raises if any row has no permitted
    entry.
    """
    scores = np.asarray(scores, dtype=np.float64)
    permit = _permit_array(mask)
    if permit.shape != scores.shape:
        raise ContractError(f"mask shape {permit.shape} does not match scores shape {scores.shape}")
    if scores.shape[1] == 0 or not permit.any(axis=1).all():
        raise ContractError("softmax_rows_masked: a row has no permitted entries")
    out = np.where(permit, scores, MASK_FILL)
    with np.errstate(over="ignore"):
        out -= out.max(axis=1, keepdims=True)
    # masked entries sit at or below MASK_FILL, so exp underflows them to exactly 0
    np.exp(out, out=out)
    out /= out.sum(axis=1, keepdims=True)
    return out


def make_rng(seed=0):
    """PCG64 generator; same seed gives the same stream on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def gaussian_init(rng, rows, cols, stddev):
    rows = check_count(rows, "rows")
    cols = check_count(cols, "cols")
    stddev = check_positive(stddev, "stddev")
    return rng.normal(0.0, stddev, size=(rows, cols))


def approx_equal(a, b, atol):
    """Return ``(max_abs_diff, max_abs_diff <= atol)``."""
    a = check_matrix(a, "a")
    b = check_matrix(b, "b")
    if a.shape != b.shape:
        raise ContractError(f"approx_equal shape mismatch: {a.shape} vs {b.shape}")
    diff = float(np.max(np.abs(a - b))) if a.size else 0.0
    return diff, diff <= atol
