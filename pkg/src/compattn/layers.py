"""Projector, FFN, aligner and the baseline / composite decoder layers.

The aligner owns no parameters. It reads ``Wv``, ``Wo`` and the FFN matrices
straight off the layer it belongs to, so it cannot drift from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List

import numpy as np
from scipy.special import erf

from ._validation import ContractError, check_count, check_matrix, check_token_ids
from .attention import (
    AttentionWeights,
    _check_composite_inputs,
    _composite_attention,
    build_causal_mask,
    composite_attention_backward,
    composite_attention_forward,
    multihead_attend,
)
from .tensor import gaussian_init, make_rng, matmul

MODES = ("baseline", "composite")
INIT_STD = 0.02
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


@dataclass
class LayerWeights:
    attn: AttentionWeights
    ffn_W1: np.ndarray
    ffn_W2: np.ndarray

    def __post_init__(self):
        h = self.attn.hidden
        self.ffn_W1 = check_matrix(self.ffn_W1, "ffn_W1")
        self.ffn_W2 = check_matrix(self.ffn_W2, "ffn_W2")
        if self.ffn_W1.shape != (h, 4 * h) or self.ffn_W2.shape != (4 * h, h):
            raise ContractError(
                f"FFN must be {h}x{4 * h} and {4 * h}x{h}, got {self.ffn_W1.shape} and {self.ffn_W2.shape}"
            )

    @property
    def hidden(self):
        return self.attn.hidden


@dataclass(frozen=True)
class ModelConfig:
    d: int
    h: int
    a: int = 1
    vocab: int = 32
    feat_dim: int = 16
    mode: str = "composite"

    def __post_init__(self):
        check_count(self.d, "d", minimum=1)
        check_count(self.h, "h", minimum=1)
        check_count(self.a, "a", minimum=1)
        check_count(self.vocab, "vocab", minimum=2)
        check_count(self.feat_dim, "feat_dim", minimum=1)
        if self.a > self.h or self.h % self.a:
            raise ContractError(f"heads a={self.a} must divide hidden h={self.h}")
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class Model:
    config: ModelConfig
    embed: np.ndarray
    unembed: np.ndarray
    projector_W1: np.ndarray
    projector_W2: np.ndarray
    layers: List[LayerWeights] = field(default_factory=list)

    def __post_init__(self):
        c = self.config
        expected = {
            "embed": (c.vocab, c.h),
            "unembed": (c.h, c.vocab),
            "projector_W1": (c.feat_dim, c.h),
            "projector_W2": (c.h, c.h),
        }
        for name, shape in expected.items():
            arr = check_matrix(getattr(self, name), name)
            if arr.shape != shape:
                raise ContractError(f"{name} must be {shape}, got {arr.shape}")
            setattr(self, name, arr)
        if len(self.layers) != c.d:
            raise ContractError(f"config says d={c.d} layers, got {len(self.layers)}")
        for layer in self.layers:
            if layer.hidden != c.h or layer.attn.heads != c.a:
                raise ContractError("layer weights disagree with config h/a")

    def with_mode(self, mode):
        """Same weights, other wiring."""
        return replace(self, config=replace(self.config, mode=mode))


def init_layer(rng, h, heads, stddev=INIT_STD):
    attn = AttentionWeights(*(gaussian_init(rng, h, h, stddev) for _ in range(4)), heads=heads)
    return LayerWeights(attn, gaussian_init(rng, h, 4 * h, stddev), gaussian_init(rng, 4 * h, h, stddev))


def build_model(config, seed=0, stddev=INIT_STD):
    """Gaussian-initialised model; draw order matches the weight file layout."""
    rng = make_rng(seed)
    c = config
    embed = gaussian_init(rng, c.vocab, c.h, stddev)
    unembed = gaussian_init(rng, c.h, c.vocab, stddev)
    pw1 = gaussian_init(rng, c.feat_dim, c.h, stddev)
    pw2 = gaussian_init(rng, c.h, c.h, stddev)
    layers = [init_layer(rng, c.h, c.a, stddev) for _ in range(c.d)]
    return Model(c, embed, unembed, pw1, pw2, layers)


def projector_forward(features, model):
    c = model.config
    if features is None:
        return np.zeros((0, c.h))
    features = check_matrix(features, "visual features")
    if features.shape[0] == 0:
        return np.zeros((0, c.h))
    if features.shape[1] != c.feat_dim:
        raise ContractError(f"visual features must have {c.feat_dim} columns, got {features.shape[1]}")
    return matmul(gelu(matmul(features, model.projector_W1)), model.projector_W2)


def ffn_forward(X, layer):
    X = check_matrix(X, "X", cols=layer.hidden)
    return matmul(gelu(matmul(X, layer.ffn_W1)), layer.ffn_W2)


def aligner_forward(I, layer, *, visual_values=None):
    """``H = I Wv Wo + I``; ``O = FFN(H) + H`` using the layer's own weights."""
    I = check_matrix(I, "I", cols=layer.hidden)
    if visual_values is None:
        visual_values = matmul(I, layer.attn.Wv)
    H = matmul(visual_values, layer.attn.Wo) + I
    return ffn_forward(H, layer) + H


def _composite_layer(I, T, layer):
    """One composite layer, also returning the full key/value matrices."""
    w = layer.attn
    I, T = _check_composite_inputs(I, T, w)
    iv = matmul(I, w.Wv)
    attn_out, keys, values = _composite_attention(I, T, w, iv)
    T_mid = T + attn_out
    T_out = T_mid + ffn_forward(T_mid, layer)
    I_out = aligner_forward(I, layer, visual_values=iv)
    return I_out, T_out, keys, values


def _baseline_layer(X, layer):
    w = layer.attn
    X = check_matrix(X, "X", cols=layer.hidden, allow_empty=False)
    q = matmul(X, w.Wq)
    keys = matmul(X, w.Wk)
    values = matmul(X, w.Wv)
    ctx = multihead_attend(q, keys, values, build_causal_mask(X.shape[0]), w.heads)
    X_mid = X + matmul(ctx, w.Wo)
    return X_mid + ffn_forward(X_mid, layer), keys, values


def composite_decoder_layer(I, T, layer):
    """Returns ``(I', T')``. Keys/values come from the layer-input ``I``."""
    I_out, T_out, _, _ = _composite_layer(I, T, layer)
    return I_out, T_out


def baseline_decoder_layer(X, layer):
    return _baseline_layer(X, layer)[0]


def embed_tokens(model, ids):
    ids = check_token_ids(ids, model.config.vocab)
    return model.embed[ids]


def decoder_stack(model, I, T, kv=None):
    """Run all decoder layers on projected visual rows ``I`` and text rows ``T``.

    Returns the final text rows. If ``kv`` is a list, per-layer ``(keys,
    values)`` over all ``k + n`` positions are appended to it.
    """
    if model.config.mode == "composite":
        for layer in model.layers:
            I, T, keys, values = _composite_layer(I, T, layer)
            if kv is not None:
                kv.append((keys, values))
        return T
    k = I.shape[0]
    X = np.vstack([I, T])
    for layer in model.layers:
        X, keys, values = _baseline_layer(X, layer)
        if kv is not None:
            kv.append((keys, values))
    return X[k:]


def model_forward(model, visual_features, text_ids, *, kv=None):
    """Logits for every text position, shape ``n x vocab``."""
    T = embed_tokens(model, text_ids)
    I = projector_forward(visual_features, model)
    return matmul(decoder_stack(model, I, T, kv=kv), model.unembed)


def ffn_backward(X, layer, G):
    X = check_matrix(X, "X", cols=layer.hidden)
    Z = X @ layer.ffn_W1
    A = gelu(Z)
    dA = G @ layer.ffn_W2.T
    dZ = dA * gelu_grad(Z)
    return {"X": dZ @ layer.ffn_W1.T, "ffn_W1": X.T @ dZ, "ffn_W2": A.T @ G}


def aligner_backward(I, layer, G):
    """Gradients of ``sum(G * aligner_forward(I, layer))``."""
    I = check_matrix(I, "I", cols=layer.hidden)
    w = layer.attn
    iv = I @ w.Wv
    H = iv @ w.Wo + I
    f = ffn_backward(H, layer, G)
    dH = G + f["X"]
    d_iv = dH @ w.Wo.T
    return {
        "I": dH + d_iv @ w.Wv.T,
        "Wv": I.T @ d_iv,
        "Wo": iv.T @ dH,
        "ffn_W1": f["ffn_W1"],
        "ffn_W2": f["ffn_W2"],
    }


def composite_decoder_layer_backward(I, T, layer, grad_I_out, grad_T_out):
    """Gradients of ``sum(gI * I') + sum(gT * T')`` for one composite layer.

    Keys: ``I, T, Wq, Wk, Wv, Wo, ffn_W1, ffn_W2``. Shared weights collect
    contributions from both the text path and the aligner.
    """
    w = layer.attn
    I, T = _check_composite_inputs(I, T, w)
    T_mid = T + composite_attention_forward(I, T, w)
    f = ffn_backward(T_mid, layer, grad_T_out)
    dT_mid = grad_T_out + f["X"]
    att = composite_attention_backward(I, T, w, dT_mid)
    al = aligner_backward(I, layer, grad_I_out)
    return {
        "I": att["I"] + al["I"],
        "T": dT_mid + att["T"],
        "Wq": att["Wq"],
        "Wk": att["Wk"],
        "Wv": att["Wv"] + al["Wv"],
        "Wo": att["Wo"] + al["Wo"],
        "ffn_W1": f["ffn_W1"] + al["ffn_W1"],
        "ffn_W2": f["ffn_W2"] + al["ffn_W2"],
    }
