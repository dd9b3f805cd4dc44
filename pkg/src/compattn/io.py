"""Little-endian binary weight and visual-feature files.

Weight file::

    b"EEML" | u32 version=1 | u32 d, h, a, vocab, feat_dim, mode
    | f64 matrices, row-major: embed, unembed, projector_W1, projector_W2,
      then per layer Wq, Wk, Wv, Wo, ffn_W1, ffn_W2

``mode`` is 0 for baseline, 1 for composite. Feature file::

    u32 rows | u32 cols | f64 data, row-major
"""

from __future__ import annotations

import struct

import numpy as np

from ._validation import ContractError, check_matrix
from .attention import AttentionWeights
from .layers import MODES, LayerWeights, Model, ModelConfig

MAGIC = b"EEML"
VERSION = 1
_HEADER = struct.Struct("<4s7I")
_F64 = np.dtype("<f8")


def _matrix_shapes(c):
    shapes = [(c.vocab, c.h), (c.h, c.vocab), (c.feat_dim, c.h), (c.h, c.h)]
    for _ in range(c.d):
        shapes += [(c.h, c.h)] * 4 + [(c.h, 4 * c.h), (4 * c.h, c.h)]
    return shapes


def model_to_bytes(model):
    c = model.config
    parts = [_HEADER.pack(MAGIC, VERSION, c.d, c.h, c.a, c.vocab, c.feat_dim, MODES.index(c.mode))]
    mats = [model.embed, model.unembed, model.projector_W1, model.projector_W2]
    for layer in model.layers:
        w = layer.attn
        mats += [w.Wq, w.Wk, w.Wv, w.Wo, layer.ffn_W1, layer.ffn_W2]
    parts += [np.ascontiguousarray(m, dtype=_F64).tobytes() for m in mats]
    return b"".join(parts)


def model_from_bytes(buf):
    if len(buf) < _HEADER.size:
        raise ContractError("weight file truncated before header end")
    magic, version, d, h, a, vocab, feat_dim, mode = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ContractError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContractError(f"unsupported weight file version {version}")
    if mode >= len(MODES):
        raise ContractError(f"unknown mode code {mode}")
    c = ModelConfig(d=d, h=h, a=a, vocab=vocab, feat_dim=feat_dim, mode=MODES[mode])
    shapes = _matrix_shapes(c)
    expected = _HEADER.size + 8 * sum(r * k for r, k in shapes)
    if len(buf) != expected:
        raise ContractError(f"weight file is {len(buf)} bytes, expected {expected} for {c}")
    mats, offset = [], _HEADER.size
    for rows, cols in shapes:
        count = rows * cols
        arr = np.frombuffer(buf, dtype=_F64, count=count, offset=offset).reshape(rows, cols)
        mats.append(arr.astype(np.float64))
        offset += 8 * count
    embed, unembed, pw1, pw2 = mats[:4]
    layers = []
    for i in range(d):
        wq, wk, wv, wo, w1, w2 = mats[4 + 6 * i : 10 + 6 * i]
        layers.append(LayerWeights(AttentionWeights(wq, wk, wv, wo, heads=a), w1, w2))
    return Model(c, embed, unembed, pw1, pw2, layers)


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def features_to_bytes(features):
    features = check_matrix(features, "features")
    rows, cols = features.shape
    return struct.pack("<2I", rows, cols) + np.ascontiguousarray(features, dtype=_F64).tobytes()


def features_from_bytes(buf):
    if len(buf) < 8:
        raise ContractError("feature file truncated before header end")
    rows, cols = struct.unpack_from("<2I", buf)
    if len(buf) != 8 + 8 * rows * cols:
        raise ContractError(f"feature file is {len(buf)} bytes, expected {8 + 8 * rows * cols} for {rows}x{cols}")
    return np.frombuffer(buf, dtype=_F64, offset=8).reshape(rows, cols).astype(np.float64)


def save_features(features, path):
    with open(path, "wb") as fh:
        fh.write(features_to_bytes(features))


def load_features(path):
    with open(path, "rb") as fh:
        return features_from_bytes(fh.read())
