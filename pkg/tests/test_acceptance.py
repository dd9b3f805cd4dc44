"""Exit criteria. Each test records one PASS/FAIL line (see conftest)."""

import time
from fractions import Fraction

import numpy as np
import pytest

import oracles
from compattn import (
    AttentionWeights,
    CostConfig,
    LayerWeights,
    ModelConfig,
    aligner_forward,
    baseline_decoder_layer,
    bench_prefill_decode,
    build_causal_mask,
    build_model,
    composite_attention_forward,
    composite_decoder_layer,
    flops_baseline_total,
    flops_ee_total,
    flops_ratio,
    generate_greedy,
    instrumented_flops,
    make_rng,
    model_forward,
    self_attention_forward,
)
from compattn.costmodel import baseline_components, ee_components, measure_ee_delta
from compattn.gradcheck import CHECKS, random_config
from compattn.layers import init_layer
from compattn.verify import masked_full_attention_text_rows

# Big-integer evaluation of both cost formulas at T=256, V=4900, h=4096.
REFERENCE_RATIO = Fraction(6714944, 9581137)  # 0.700850...


def test_01_seventy_percent_flops(criterion):
    t0 = time.perf_counter()
    ratios = [flops_ratio(CostConfig(256, 4900, 4096, d)) for d in (1, 8, 32, 80)]
    elapsed = time.perf_counter() - t0
    assert oracles.ratio(256, 4900, 4096) == REFERENCE_RATIO
    ok = all(0.6959 <= r <= 0.7059 and r == float(REFERENCE_RATIO) for r in ratios) and elapsed < 1.0
    criterion("1 70% FLOPs ratio", ok, f"ratio={ratios[0]:.6f} reference={float(REFERENCE_RATIO):.6f} t={elapsed:.3f}s")
    assert ok


def test_02_formula_edge_values(criterion):
    edge = flops_baseline_total(CostConfig(1, 0, 1, 1)) == 28 and flops_ee_total(CostConfig(1, 0, 1, 1)) == 26
    rng = make_rng(2)
    grid = [
        CostConfig(int(rng.integers(1, 5000)), int(rng.integers(0, 10000)), int(rng.integers(1, 8193)), int(rng.integers(1, 81)))
        for _ in range(50)
    ]
    sums = all(
        sum(ee_components(c).values()) == flops_ee_total(c) and sum(baseline_components(c).values()) == flops_baseline_total(c)
        for c in grid
    )
    d_inv = all(flops_ratio(c) == flops_ratio(CostConfig(c.T_len, c.V_len, c.h, 1)) for c in grid)
    ok = edge and sums and d_inv
    criterion("2 formula edge values", ok, f"edge={edge} component_sums={sums} d_invariant={d_inv} grid=50")
    assert ok


def test_03_oracle_equivalence(criterion):
    t0 = time.perf_counter()
    rng = make_rng(3)
    worst, trials = 0.0, 0
    for h in (4, 8):
        for heads in (1, 2):
            for _ in range(30):
                k, n = int(rng.integers(0, 13)), int(rng.integers(1, 13))
                w = init_layer(rng, h, heads, 0.5).attn
                I, T = rng.normal(size=(k, h)), rng.normal(size=(n, h))
                diff = np.max(np.abs(composite_attention_forward(I, T, w) - masked_full_attention_text_rows(I, T, w)))
                worst = max(worst, float(diff))
                trials += 1
    elapsed = time.perf_counter() - t0
    ok = trials >= 100 and worst < 1e-9 and elapsed < 10
    criterion("3 composite == text slice of masked full attention", ok, f"trials={trials} max_diff={worst:.2e} t={elapsed:.2f}s")
    assert ok


def test_04_degenerate_reduction(criterion):
    rng = make_rng(4)
    worst = 0.0
    for h, a in ((4, 1), (8, 2)):
        layer = init_layer(rng, h, a, 0.3)
        T = rng.normal(size=(6, h))
        empty = np.zeros((0, h))
        worst = max(worst, np.max(np.abs(composite_attention_forward(empty, T, layer.attn) - self_attention_forward(T, layer.attn, build_causal_mask(6)))))
        I_out, T_out = composite_decoder_layer(empty, T, layer)
        assert I_out.shape == (0, h)
        worst = max(worst, np.max(np.abs(T_out - baseline_decoder_layer(T, layer))))
    for d in (1, 2, 3, 4):
        model = build_model(ModelConfig(d=d, h=8, a=2, vocab=13, feat_dim=5), seed=d, stddev=0.1)
        ids = [int(t) for t in rng.integers(0, 13, size=7)]
        no_image = np.zeros((0, 5))
        worst = max(worst, np.max(np.abs(model_forward(model, no_image, ids) - model_forward(model.with_mode("baseline"), no_image, ids))))
    ok = worst < 1e-12
    criterion("4 k=0 reduces composite to baseline", ok, f"max_diff={worst:.2e} depths=1..4")
    assert ok


def test_05_aligner_identities(criterion):
    h = 8
    I = make_rng(5).normal(size=(6, h))
    zero = np.zeros((h, h))
    ffn0 = (np.zeros((h, 4 * h)), np.zeros((4 * h, h)))
    zero_ok = np.array_equal(aligner_forward(I, LayerWeights(AttentionWeights(zero, zero, zero, zero), *ffn0)), I)
    eye_ok = np.array_equal(aligner_forward(I, LayerWeights(AttentionWeights(zero, zero, np.eye(h), np.eye(h)), *ffn0)), 2 * I)
    ok = zero_ok and eye_ok
    criterion("5 aligner identities", ok, f"zero_weights->I exact={zero_ok} Wv=Wo=I,FFN=0->2I exact={eye_ok}")
    assert ok


def test_06_gradient_verification(criterion):
    t0 = time.perf_counter()
    results = []
    for seed in range(20):
        k, n, h, a = random_config(seed)
        for check in CHECKS:
            results += check(seed, k, n, h, a, eps=1e-5)
    elapsed = time.perf_counter() - t0
    targets = {r.target for r in results}
    worst = max(r.rel_error for r in results)
    ok = worst < 1e-4 and elapsed < 60 and targets == {"composite_attention", "aligner", "ffn", "composite_layer"}
    criterion("6 analytic backward vs central differences", ok, f"seeds=20 checks={len(results)} worst_rel={worst:.2e} t={elapsed:.1f}s")
    assert ok


@pytest.mark.parametrize("mode", ["baseline", "composite"])
def test_07_kv_cache_consistency(criterion, mode):
    model = build_model(ModelConfig(d=3, h=32, a=4, vocab=29, feat_dim=8, mode=mode), seed=7, stddev=0.1)
    rng = make_rng(7)
    feats = rng.normal(size=(12, 8))
    prompt = [int(t) for t in rng.integers(0, 29, size=5)]
    ids_c, lg_c = generate_greedy(model, feats, prompt, 32, return_logits=True)
    ids_r, lg_r = generate_greedy(model, feats, prompt, 32, use_cache=False, return_logits=True)
    diff = float(np.max(np.abs(lg_c - lg_r)))
    ok = ids_c == ids_r and diff < 1e-9
    criterion(f"7 KV cache == recompute ({mode})", ok, f"32 tokens ids_equal={ids_c == ids_r} max_logit_diff={diff:.2e}")
    assert ok


def test_08_instrumented_baseline_exact(criterion):
    rng = make_rng(8)
    exact, coefs = [], set()
    for _ in range(10):
        a = int(rng.choice([1, 2, 4]))
        h = a * int(rng.integers(1, 32 // a + 1))
        d = int(rng.integers(1, 4))
        k, n = int(rng.integers(0, 17)), int(rng.integers(1, 17))
        model = build_model(ModelConfig(d=d, h=h, a=a, vocab=7, feat_dim=3))
        counted_base, counted_ee = instrumented_flops(model, k, n)
        c = CostConfig(n, k, h, d)
        exact.append(counted_base == flops_baseline_total(c))
        poly = measure_ee_delta(h=h, d=d, heads=a)
        coefs.add((poly.t_coef, poly.v_coef))
        exact.append(counted_ee - flops_ee_total(c) == poly(c))
    ok = all(exact) and len(coefs) == 1
    criterion(
        "8 instrumented baseline == analytic; stable EE delta",
        ok,
        f"configs=10 exact={all(exact)} delta=" + " | ".join(f"({t}*T + {v}*V)*d*h^2" for t, v in coefs),
    )
    assert ok


@pytest.mark.slow
def test_09_inference_speed_trend(criterion):
    t0 = time.perf_counter()
    model = build_model(ModelConfig(d=4, h=256, a=4, vocab=64, feat_dim=32, mode="baseline"), seed=0)
    reports, table = bench_prefill_decode((model, model.with_mode("composite")), V=4096, T=32, gen_lengths=[8, 128], repeats=5)
    elapsed = time.perf_counter() - t0
    base_prefill = reports["baseline"][0].prefill_seconds
    comp_prefill = reports["composite"][0].prefill_seconds
    ratio8, ratio128 = table[0][3], table[1][3]
    ok = comp_prefill < base_prefill and ratio8 > ratio128 and elapsed < 300
    criterion(
        "9 inference-speed trend",
        ok,
        f"prefill composite={comp_prefill:.3f}s baseline={base_prefill:.3f}s ratio@8={ratio8:.2f} ratio@128={ratio128:.2f} t={elapsed:.0f}s",
    )
    assert ok
