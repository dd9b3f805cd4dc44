"""Property suites behind ``compattn verify``.

Each suite yields :class:`Case` records: a name, the configuration, the
measured discrepancy and the tolerance it was held to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (
    AttentionWeights,
    build_causal_mask,
    build_trapezoidal_mask,
    composite_attention_forward,
    self_attention_forward,
)
from .costmodel import CostConfig, flops_baseline_total, instrumented_flops
from .inference import generate_greedy
from .layers import (
    LayerWeights,
    ModelConfig,
    aligner_forward,
    baseline_decoder_layer,
    build_model,
    composite_decoder_layer,
    init_layer,
    model_forward,
)
from .tensor import make_rng

SLICE_TOL = 1e-9
REDUCTION_TOL = 1e-12
CACHE_TOL = 1e-9


@dataclass
class Case:
    suite: str
    config: str
    max_diff: float
    tol: float
    ok: bool

    def __str__(self):
        status = "ok  " if self.ok else "FAIL"
        return f"{status} {self.suite} [{self.config}] max_diff={self.max_diff:.3e} tol={self.tol:.0e}"


def _maxdiff(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return float("inf")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def masked_full_attention_text_rows(I, T, w):
    """Reference: attention over all ``k + n`` rows as queries, visual query
    rows limited to themselves, text rows trapezoidal; keep the text rows."""
    k, n, h = I.shape[0], T.shape[0], w.hidden
    X = np.concatenate([I, T], axis=0)
    L = k + n
    permit = np.zeros((L, L), dtype=bool)
    permit[np.arange(k), np.arange(k)] = True
    permit[k:, :k] = True
    permit[k:, k:] = np.tri(n, dtype=bool)
    Q, K, V = X @ w.Wq, X @ w.Wk, X @ w.Wv
    dh = h // w.heads
    out = np.zeros((L, h))
    for head in range(w.heads):
        c = slice(head * dh, (head + 1) * dh)
        s = (Q[:, c] @ K[:, c].T) / np.sqrt(dh)
        s = np.where(permit, s, -np.inf)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        out[:, c] = (s / s.sum(axis=1, keepdims=True)) @ V[:, c]
    return (out @ w.Wo)[k:]


def suite_masks(max_k=32, max_n=32):
    bad = 0
    for k in range(max_k + 1):
        for n in range(1, max_n + 1):
            counts = build_trapezoidal_mask(k, n).row_counts()
            bad += int(not np.array_equal(counts, k + np.arange(n) + 1))
    eq = np.array_equal(build_trapezoidal_mask(0, 7).permit, build_causal_mask(7).permit)
    return [
        Case("mask.row_count_law", f"k<={max_k} n<={max_n}", float(bad), 0, bad == 0),
        Case("mask.k0_is_causal", "n=7", 0.0 if eq else 1.0, 0, eq),
    ]


def suite_slice_equivalence(seed=0, trials=100):
    rng = make_rng(seed)
    worst, worst_cfg = 0.0, ""
    for _ in range(trials):
        k, n = int(rng.integers(0, 13)), int(rng.integers(1, 13))
        h, a = int(rng.choice([4, 8])), int(rng.choice([1, 2]))
        w = init_layer(rng, h, a, 0.5).attn
        I, T = rng.normal(size=(k, h)), rng.normal(size=(n, h))
        diff = _maxdiff(composite_attention_forward(I, T, w), masked_full_attention_text_rows(I, T, w))
        if diff >= worst:
            worst, worst_cfg = diff, f"k={k} n={n} h={h} a={a}"
    return [Case("attention.slice_equivalence", f"{trials} trials, worst {worst_cfg}", worst, SLICE_TOL, worst < SLICE_TOL)]


def suite_reductions(seed=0, max_depth=4):
    rng = make_rng(seed + 1)
    cases = []
    h, a, n = 8, 2, 5
    layer = init_layer(rng, h, a, 0.3)
    T = rng.normal(size=(n, h))
    I0 = np.zeros((0, h))
    diff = _maxdiff(composite_attention_forward(I0, T, layer.attn), self_attention_forward(T, layer.attn, build_causal_mask(n)))
    cases.append(Case("reduction.attention_k0", f"n={n} h={h} a={a}", diff, REDUCTION_TOL, diff < REDUCTION_TOL))
    I_out, T_out = composite_decoder_layer(I0, T, layer)
    diff = _maxdiff(T_out, baseline_decoder_layer(T, layer))
    ok = diff < REDUCTION_TOL and I_out.shape == (0, h)
    cases.append(Case("reduction.layer_k0", f"n={n} h={h} a={a}", diff, REDUCTION_TOL, ok))
    for d in range(1, max_depth + 1):
        model = build_model(ModelConfig(d=d, h=h, a=a, vocab=11, feat_dim=6), seed=seed + d)
        ids = [int(t) for t in rng.integers(0, 11, size=n)]
        empty = np.zeros((0, 6))
        diff = _maxdiff(model_forward(model, empty, ids), model_forward(model.with_mode("baseline"), empty, ids))
        cases.append(Case("reduction.logits_k0", f"d={d}", diff, REDUCTION_TOL, diff < REDUCTION_TOL))
    return cases


def suite_aligner(seed=0):
    rng = make_rng(seed + 2)
    h = 8
    I = rng.normal(size=(5, h))
    zero = np.zeros((h, h))
    zero_layer = LayerWeights(AttentionWeights(zero, zero, zero, zero), np.zeros((h, 4 * h)), np.zeros((4 * h, h)))
    eye = np.eye(h)
    id_layer = LayerWeights(AttentionWeights(zero, zero, eye, eye), np.zeros((h, 4 * h)), np.zeros((4 * h, h)))
    d0 = _maxdiff(aligner_forward(I, zero_layer), I)
    d1 = _maxdiff(aligner_forward(I, id_layer), 2 * I)
    return [
        Case("aligner.zero_weights_identity", f"k=5 h={h}", d0, 0, d0 == 0),
        Case("aligner.identity_doubles", f"k=5 h={h}", d1, 0, d1 == 0),
    ]


def suite_cache(seed=0, n_new=32):
    cases = []
    for mode in ("baseline", "composite"):
        model = build_model(ModelConfig(d=2, h=16, a=2, vocab=23, feat_dim=6, mode=mode), seed=seed, stddev=0.1)
        rng = make_rng(seed + 3)
        feats = rng.normal(size=(7, 6))
        prompt = [int(t) for t in rng.integers(0, 23, size=4)]
        ids_c, lg_c = generate_greedy(model, feats, prompt, n_new, return_logits=True)
        ids_r, lg_r = generate_greedy(model, feats, prompt, n_new, use_cache=False, return_logits=True)
        diff = _maxdiff(lg_c, lg_r)
        ok = ids_c == ids_r and diff < CACHE_TOL
        cases.append(Case(f"cache.{mode}_vs_recompute", f"{n_new} tokens k=7 n=4 d=2 h=16", diff, CACHE_TOL, ok))
    return cases


def suite_instrumented(seed=0, configs=10):
    rng = make_rng(seed + 4)
    worst, bad = 0, 0
    for _ in range(configs):
        a = int(rng.choice([1, 2, 4]))
        h = a * int(rng.integers(1, 33 // a))
        d = int(rng.integers(1, 4))
        k, n = int(rng.integers(0, 17)), int(rng.integers(1, 17))
        model = build_model(ModelConfig(d=d, h=h, a=a, vocab=9, feat_dim=5), seed=seed)
        counted, _ = instrumented_flops(model, k, n, seed=seed)
        gap = abs(counted - flops_baseline_total(CostConfig(n, k, h, d)))
        worst = max(worst, gap)
        bad += gap != 0
    return [Case("costmodel.instrumented_baseline_exact", f"{configs} toy configs", float(worst), 0, bad == 0)]


def run_all(seed=0, trials=100):
    cases = []
    cases += suite_masks()
    cases += suite_slice_equivalence(seed, trials)
    cases += suite_reductions(seed)
    cases += suite_aligner(seed)
    cases += suite_cache(seed)
    cases += suite_instrumented(seed)
    return cases
