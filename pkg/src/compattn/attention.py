"""Causal and trapezoidal masks, multi-head self-attention over a concatenated
sequence, and composite attention where only text tokens issue queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import ContractError, check_count, check_matrix
from .tensor import matmul, softmax_rows_masked


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """Boolean permission matrix, rows are queries and columns are keys."""

    kind: str
    k: int
    n: int
    permit: np.ndarray

    @property
    def shape(self):
        return self.permit.shape

    def row_counts(self):
        return self.permit.sum(axis=1)


def build_causal_mask(n):
    n = check_count(n, "n", minimum=1)
    permit = np.tril(np.ones((n, n), dtype=bool))
    return AttentionMask("causal", 0, n, permit)


def build_trapezoidal_mask(k, n):
    """Text row ``i`` sees all ``k`` visual columns plus text columns ``0..i``."""
    k = check_count(k, "k")
    n = check_count(n, "n", minimum=1)
    permit = np.ones((n, k + n), dtype=bool)
    permit[:, k:] = np.tril(np.ones((n, n), dtype=bool))
    return AttentionMask("trapezoidal", k, n, permit)


@dataclass
class AttentionWeights:
    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    Wo: np.ndarray
    heads: int = 1

    def __post_init__(self):
        h = np.shape(self.Wq)[0]
        for name in ("Wq", "Wk", "Wv", "Wo"):
            setattr(self, name, check_matrix(getattr(self, name), name, cols=h))
            if getattr(self, name).shape != (h, h):
                raise ContractError(f"{name} must be {h}x{h}, got {getattr(self, name).shape}")
        check_count(self.heads, "heads", minimum=1)
        if h % self.heads:
            raise ContractError(f"hidden dim {h} not divisible by heads {self.heads}")

    @property
    def hidden(self):
        return self.Wq.shape[0]

    @property
    def head_dim(self):
        return self.hidden // self.heads


def scaled_dot_attention(Xq, Xk, Xv, mask, scale_dim):
    """``softmax(Xq Xk^T / sqrt(scale_dim), mask) Xv``."""
    probs = _attention_probs(Xq, Xk, mask, scale_dim)
    if Xv.shape[0] != Xk.shape[0]:
        raise ContractError(f"keys have {Xk.shape[0]} rows but values have {Xv.shape[0]}")
    return matmul(probs, Xv)


def _attention_probs(Xq, Xk, mask, scale_dim):
    if not scale_dim > 0:
        raise ContractError(f"scale_dim must be > 0, got {scale_dim}")
    permit = getattr(mask, "permit", mask)
    if permit.shape != (Xq.shape[0], Xk.shape[0]):
        raise ContractError(
            f"mask shape {permit.shape} does not match {Xq.shape[0]} queries x {Xk.shape[0]} keys"
        )
    scores = matmul(Xq, Xk.T)
    scores /= math.sqrt(scale_dim)
    return softmax_rows_masked(scores, permit)


def multihead_attend(q, k, v, mask, heads, *, keep_probs=False):
    """Split columns into ``heads`` blocks, attend per block, concatenate.

    Returns the merged context (before the output projection), and the list of
    per-head probability matrices when ``keep_probs`` is set.
    """
    dh = q.shape[1] // heads
    ctx = np.empty((q.shape[0], v.shape[1]))
    probs = []
    for i in range(heads):
        cols = slice(i * dh, (i + 1) * dh)
        p = _attention_probs(q[:, cols], k[:, cols], mask, dh)
        ctx[:, cols] = matmul(p, v[:, cols])
        if keep_probs:
            probs.append(p)
    return (ctx, probs) if keep_probs else ctx


def self_attention_forward(X, w, mask):
    X = check_matrix(X, "X", cols=w.hidden, allow_empty=False)
    permit = np.asarray(getattr(mask, "permit", mask), dtype=bool)
    L = X.shape[0]
    if permit.shape != (L, L) or not np.array_equal(permit, np.tri(L, dtype=bool)):
        raise ContractError(f"self-attention needs a causal({L}) mask, got shape {permit.shape}")
    q = matmul(X, w.Wq)
    k = matmul(X, w.Wk)
    v = matmul(X, w.Wv)
    return matmul(multihead_attend(q, k, v, mask, w.heads), w.Wo)


def _check_composite_inputs(I, T, w):
    h = w.hidden
    I = check_matrix(I, "I")
    T = check_matrix(T, "T")
    if T.shape[0] == 0:
        raise ContractError("composite attention needs at least one text token")
    if I.shape[0] == 0 and I.shape[1] != h:
        I = np.zeros((0, h))
    if I.shape[1] != h or T.shape[1] != h:
        raise ContractError(f"hidden dim mismatch: I is {I.shape}, T is {T.shape}, weights are {h}x{h}")
    return I, T


def composite_attention_forward(I, T, w, *, visual_values=None):
    """Text tokens query ``[I; T]``; visual rows issue no queries.

    ``visual_values`` may carry a precomputed ``I @ Wv`` so the aligner and the
    attention share one product.
    """
    I, T = _check_composite_inputs(I, T, w)
    return _composite_attention(I, T, w, visual_values)[0]


def _composite_attention(I, T, w, visual_values=None):
    k, n = I.shape[0], T.shape[0]
    if visual_values is None:
        visual_values = matmul(I, w.Wv)
    q = matmul(T, w.Wq)
    keys = np.vstack([matmul(I, w.Wk), matmul(T, w.Wk)])
    values = np.vstack([visual_values, matmul(T, w.Wv)])
    ctx = multihead_attend(q, keys, values, build_trapezoidal_mask(k, n), w.heads)
    return matmul(ctx, w.Wo), keys, values


def composite_attention_backward(I, T, w, upstream_grad):
    """Gradients of ``sum(upstream_grad * composite_attention_forward(I, T, w))``.

    Returns a dict keyed ``I, T, Wq, Wk, Wv, Wo``.
    """
    I, T = _check_composite_inputs(I, T, w)
    k, n = I.shape[0], T.shape[0]
    G = check_matrix(upstream_grad, "upstream_grad")
    if G.shape != (n, w.hidden):
        raise ContractError(f"upstream_grad must be {n}x{w.hidden}, got {G.shape}")

    X = np.vstack([I, T])
    q = T @ w.Wq
    keys = X @ w.Wk
    values = X @ w.Wv
    mask = build_trapezoidal_mask(k, n)
    ctx, probs = multihead_attend(q, keys, values, mask, w.heads, keep_probs=True)

    d_ctx = G @ w.Wo.T
    dq, dk, dv = _multihead_backward(q, keys, values, probs, d_ctx, w.heads)
    dX = dk @ w.Wk.T + dv @ w.Wv.T
    dT = dq @ w.Wq.T + dX[k:]
    return {
        "I": dX[:k].copy(),
        "T": dT,
        "Wq": T.T @ dq,
        "Wk": X.T @ dk,
        "Wv": X.T @ dv,
        "Wo": ctx.T @ G,
    }


def _multihead_backward(q, k, v, probs, d_ctx, heads):
    dh = q.shape[1] // heads
    scale = 1.0 / math.sqrt(dh)
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    for i, p in enumerate(probs):
        cols = slice(i * dh, (i + 1) * dh)
        g = d_ctx[:, cols]
        dv[:, cols] = p.T @ g
        dp = g @ v[:, cols].T
        # softmax Jacobian; masked entries have p == 0 so they drop out
        ds = p * (dp - (dp * p).sum(axis=1, keepdims=True)) * scale
        dq[:, cols] = ds @ k[:, cols]
        dk[:, cols] = ds.T @ q[:, cols]
    return dq, dk, dv
