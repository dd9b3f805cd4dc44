"""KV-cache prefill/decode and the prefill-vs-generation timing harness."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from ._validation import ContractError, check_count, check_token_ids
from .layers import embed_tokens, ffn_forward, model_forward
from .tensor import make_rng, matmul
from .attention import multihead_attend


class KVCache:
    """Per-layer keys/values over ``k_visual`` image rows then ``n_text`` text rows.

    Buffers grow geometrically so a decode step appends in O(h) amortised.
    """

    def __init__(self, kv_pairs, k_visual, n_text):
        self.k_visual = k_visual
        self.n_text = n_text
        length = k_visual + n_text
        self._keys = []
        self._values = []
        for keys, values in kv_pairs:
            if keys.shape[0] != length or values.shape[0] != length:
                raise ContractError(f"layer cache has {keys.shape[0]} rows, expected {length}")
            cap = max(2 * length, 16)
            kb = np.empty((cap, keys.shape[1]))
            vb = np.empty((cap, values.shape[1]))
            kb[:length] = keys
            vb[:length] = values
            self._keys.append(kb)
            self._values.append(vb)

    def __len__(self):
        return self.k_visual + self.n_text

    @property
    def n_layers(self):
        return len(self._keys)

    def keys(self, layer):
        return self._keys[layer][: len(self)]

    def values(self, layer):
        return self._values[layer][: len(self)]

    def positions_per_layer(self):
        return [len(self)] * self.n_layers

    def _append(self, layer, key_row, value_row):
        pos = len(self)
        if pos == self._keys[layer].shape[0]:
            self._keys[layer] = np.vstack([self._keys[layer], np.empty_like(self._keys[layer])])
            self._values[layer] = np.vstack([self._values[layer], np.empty_like(self._values[layer])])
        self._keys[layer][pos] = key_row
        self._values[layer][pos] = value_row


def prefill(model, visual_features, prompt_ids):
    """Build the cache for image + prompt; return ``(cache, last_logits)``.

    In composite mode the visual keys/values for layer ``l`` come from the
    aligner chain, and no visual row ever issues a query.
    """
    ids = list(prompt_ids)
    if not ids:
        raise ContractError("prompt must contain at least one token")
    kv = []
    logits = model_forward(model, visual_features, ids, kv=kv)
    k = kv[0][0].shape[0] - len(ids)
    return KVCache(kv, k, len(ids)), logits[-1]


def decode_step(model, cache, token_id):
    """Feed one token; returns ``(logits_row, cache)`` with ``cache`` extended in place.

    Identical in both modes: the new text row attends to every cached
    position, and cached visual rows are read, never recomputed.
    """
    x = embed_tokens(model, check_token_ids([token_id], model.config.vocab))
    if cache.n_layers != len(model.layers):
        raise ContractError(f"cache has {cache.n_layers} layers, model has {len(model.layers)}")
    for i, layer in enumerate(model.layers):
        w = layer.attn
        q = matmul(x, w.Wq)
        cache._append(i, matmul(x, w.Wk)[0], matmul(x, w.Wv)[0])
        n_pos = len(cache) + 1
        keys = cache._keys[i][:n_pos]
        values = cache._values[i][:n_pos]
        ctx = multihead_attend(q, keys, values, np.ones((1, n_pos), dtype=bool), w.heads)
        x_mid = x + matmul(ctx, w.Wo)
        x = x_mid + ffn_forward(x_mid, layer)
    cache.n_text += 1
    return matmul(x, model.unembed)[0], cache


def generate_greedy(model, visual_features, prompt_ids, n_new, *, use_cache=True, return_logits=False):
    """Argmax decoding; ties go to the lowest token id (``np.argmax`` semantics)."""
    n_new = check_count(n_new, "n_new", minimum=1)
    ids = check_token_ids(prompt_ids, model.config.vocab, "prompt ids")
    out, all_logits = [], []
    if use_cache:
        cache, logits = prefill(model, visual_features, ids)
        for step in range(n_new):
            if step:
                logits, cache = decode_step(model, cache, out[-1])
            all_logits.append(logits)
            out.append(int(np.argmax(logits)))
    else:
        for _ in range(n_new):
            logits = model_forward(model, visual_features, ids + out)[-1]
            all_logits.append(logits)
            out.append(int(np.argmax(logits)))
    return (out, np.vstack(all_logits)) if return_logits else out


@dataclass
class BenchReport:
    mode: str
    V: int
    T: int
    gen: int
    prefill_seconds: float
    decode_seconds: list = field(default_factory=list)

    @property
    def decode_seconds_total(self):
        return float(sum(self.decode_seconds))

    @property
    def total_seconds(self):
        return self.prefill_seconds + self.decode_seconds_total

    @property
    def tokens_per_second(self):
        return self.gen / self.total_seconds


def _timed_run(model, features, prompt, max_gen):
    t0 = time.perf_counter()
    cache, logits = prefill(model, features, prompt)
    prefill_s = time.perf_counter() - t0
    steps = []
    token = int(np.argmax(logits))
    for _ in range(max_gen - 1):
        t0 = time.perf_counter()
        logits, cache = decode_step(model, cache, token)
        steps.append(time.perf_counter() - t0)
        token = int(np.argmax(logits))
    return prefill_s, steps


def bench_prefill_decode(models, V, T, gen_lengths, repeats=5, seed=0):
    """Time prefill + greedy decoding for a baseline/composite model pair.

    Each repeat runs one prefill and ``max(gen_lengths) - 1`` decode steps;
    the report for length ``g`` uses the prefill plus the first ``g - 1``
    steps, so totals increase strictly with ``g``. Timings are medians over
    ``repeats`` runs after one discarded warm-up.

    Returns ``(reports, ratio_table)``: ``reports[mode]`` is a list of
    :class:`BenchReport` in ``gen_lengths`` order, and each ratio-table row
    is ``(gen, baseline_tok_s, composite_tok_s, speed_ratio)``.
    """
    by_mode = {m.config.mode: m for m in models}
    if set(by_mode) != {"baseline", "composite"}:
        raise ContractError("bench needs exactly one baseline and one composite model")
    cb, cc = by_mode["baseline"].config, by_mode["composite"].config
    if (cb.d, cb.h, cb.a, cb.vocab, cb.feat_dim) != (cc.d, cc.h, cc.a, cc.vocab, cc.feat_dim):
        raise ContractError("bench models must share every config field except mode")
    repeats = check_count(repeats, "repeats", minimum=3)
    V = check_count(V, "V")
    T = check_count(T, "T", minimum=1)
    gens = [check_count(g, "gen length", minimum=1) for g in gen_lengths]
    if not gens:
        raise ContractError("gen_lengths must be non-empty")
    max_gen = max(gens)

    rng = make_rng(seed)
    features = rng.normal(size=(V, cb.feat_dim))
    prompt = [int(t) for t in rng.integers(0, cb.vocab, size=T)]

    reports = {}
    for mode in ("baseline", "composite"):
        model = by_mode[mode]
        _timed_run(model, features, prompt, min(max_gen, 2))
        runs = [_timed_run(model, features, prompt, max_gen) for _ in range(repeats)]
        prefill_s = statistics.median(r[0] for r in runs)
        step_s = [statistics.median(r[1][i] for r in runs) for i in range(max_gen - 1)]
        reports[mode] = [BenchReport(mode, V, T, g, prefill_s, step_s[: g - 1]) for g in gens]

    table = []
    for rb, rc in zip(reports["baseline"], reports["composite"]):
        table.append((rb.gen, rb.tokens_per_second, rc.tokens_per_second, rc.tokens_per_second / rb.tokens_per_second))
    return reports, table


def bench_to_csv(reports):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mode", "V", "T", "gen", "prefill_s", "decode_s_total", "tok_per_s"])
    for mode in ("baseline", "composite"):
        for r in reports[mode]:
            writer.writerow(
                [r.mode, r.V, r.T, r.gen, f"{r.prefill_seconds:.6f}", f"{r.decode_seconds_total:.6f}", f"{r.tokens_per_second:.3f}"]
            )
    return buf.getvalue()
