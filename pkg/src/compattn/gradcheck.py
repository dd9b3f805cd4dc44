"""Central finite-difference checks for the hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import composite_attention_backward, composite_attention_forward
from .layers import (
    aligner_backward,
    aligner_forward,
    composite_decoder_layer,
    composite_decoder_layer_backward,
    ffn_backward,
    ffn_forward,
    init_layer,
)
from .tensor import make_rng

GRAD_TOL = 1e-4
DEFAULT_EPS = 1e-5
# larger than the model init so the GELU and softmax curvature actually shows up
CHECK_STD = 0.3


def numerical_gradient(f, x, eps=DEFAULT_EPS):
    """d f() / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    """``max|a - n| / max(max|a|, max|n|)``; 0 for empty or all-zero arrays."""
    if analytic.size == 0:
        return 0.0
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


@dataclass
class GradCheck:
    target: str
    param: str
    config: tuple
    rel_error: float
    tol: float = GRAD_TOL

    @property
    def ok(self):
        return self.rel_error < self.tol

    def __str__(self):
        k, n, h, a, seed = self.config
        status = "ok" if self.ok else "FAIL"
        return (
            f"{status} {self.target}.{self.param} k={k} n={n} h={h} a={a} seed={seed} "
            f"rel_err={self.rel_error:.3e} tol={self.tol:.0e}"
        )


def _setup(seed, k, n, h, a):
    rng = make_rng(seed)
    layer = init_layer(rng, h, a, CHECK_STD)
    I = rng.normal(size=(k, h))
    T = rng.normal(size=(n, h))
    return rng, layer, I, T


def _params(layer):
    w = layer.attn
    return {"Wq": w.Wq, "Wk": w.Wk, "Wv": w.Wv, "Wo": w.Wo, "ffn_W1": layer.ffn_W1, "ffn_W2": layer.ffn_W2}


def _compare(target, cfg, analytic, loss, arrays, eps):
    out = []
    for name, arr in arrays.items():
        numeric = numerical_gradient(loss, arr, eps)
        out.append(GradCheck(target, name, cfg, relative_error(analytic[name], numeric)))
    return out


def check_composite_attention(seed, k, n, h, a, eps=DEFAULT_EPS):
    rng, layer, I, T = _setup(seed, k, n, h, a)
    w = layer.attn
    G = rng.normal(size=(n, h))
    analytic = composite_attention_backward(I, T, w, G)

    def loss():
        return float(np.sum(G * composite_attention_forward(I, T, w)))

    arrays = {"I": I, "T": T, "Wq": w.Wq, "Wk": w.Wk, "Wv": w.Wv, "Wo": w.Wo}
    return _compare("composite_attention", (k, n, h, a, seed), analytic, loss, arrays, eps)


def check_ffn(seed, k, n, h, a, eps=DEFAULT_EPS):
    rng, layer, _, T = _setup(seed, k, n, h, a)
    G = rng.normal(size=T.shape)
    g = ffn_backward(T, layer, G)

    def loss():
        return float(np.sum(G * ffn_forward(T, layer)))

    arrays = {"X": T, "ffn_W1": layer.ffn_W1, "ffn_W2": layer.ffn_W2}
    return _compare("ffn", (k, n, h, a, seed), g, loss, arrays, eps)


def check_aligner(seed, k, n, h, a, eps=DEFAULT_EPS):
    rng, layer, I, _ = _setup(seed, max(k, 1), n, h, a)
    G = rng.normal(size=I.shape)
    g = aligner_backward(I, layer, G)

    def loss():
        return float(np.sum(G * aligner_forward(I, layer)))

    p = _params(layer)
    arrays = {"I": I, "Wv": p["Wv"], "Wo": p["Wo"], "ffn_W1": p["ffn_W1"], "ffn_W2": p["ffn_W2"]}
    return _compare("aligner", (I.shape[0], n, h, a, seed), g, loss, arrays, eps)


def check_composite_layer(seed, k, n, h, a, eps=DEFAULT_EPS):
    rng, layer, I, T = _setup(seed, k, n, h, a)
    GI = rng.normal(size=I.shape)
    GT = rng.normal(size=T.shape)
    g = composite_decoder_layer_backward(I, T, layer, GI, GT)

    def loss():
        I_out, T_out = composite_decoder_layer(I, T, layer)
        return float(np.sum(GI * I_out) + np.sum(GT * T_out))

    arrays = {"I": I, "T": T, **_params(layer)}
    return _compare("composite_layer", (k, n, h, a, seed), g, loss, arrays, eps)


CHECKS = (check_composite_attention, check_aligner, check_ffn, check_composite_layer)


def random_config(seed):
    rng = make_rng(10_000 + seed)
    h = int(rng.choice([4, 8]))
    a = int(rng.choice([1, 2]))
    return int(rng.integers(0, 5)), int(rng.integers(1, 5)), h, a


def run_gradchecks(seed=0, n_seeds=20, eps=DEFAULT_EPS):
    """Every check over ``n_seeds`` consecutive seeds starting at ``seed``."""
    results = []
    for s in range(seed, seed + n_seeds):
        k, n, h, a = random_config(s)
        for check in CHECKS:
            results += check(s, k, n, h, a, eps)
    return results
