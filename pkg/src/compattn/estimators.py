"""scikit-learn style wrappers.

There is no training here: ``fit`` draws seeded Gaussian weights, the way
random projections do, and records input widths. The wrappers exist so the
projector and aligner drop into a :class:`sklearn.pipeline.Pipeline`.
"""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import ContractError
from .costmodel import instrumented_flops
from .inference import generate_greedy, prefill
from .layers import INIT_STD, LayerWeights, ModelConfig, aligner_forward, build_model, gelu, model_forward
from .tensor import gaussian_init, make_rng, matmul


def _check_seed(random_state):
    if random_state is None:
        return 0
    if isinstance(random_state, numbers.Integral) and random_state >= 0:
        return int(random_state)
    raise ContractError(f"random_state must be a non-negative int, got {random_state!r}")


class Projector(TransformerMixin, BaseEstimator):
    """Two-layer GELU MLP from raw visual features to ``hidden`` columns."""

    def __init__(self, hidden=32, init_std=INIT_STD, random_state=0):
        self.hidden = hidden
        self.init_std = init_std
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        rng = make_rng(_check_seed(self.random_state))
        self.n_features_in_ = X.shape[1]
        self.W1_ = gaussian_init(rng, X.shape[1], self.hidden, self.init_std)
        self.W2_ = gaussian_init(rng, self.hidden, self.hidden, self.init_std)
        return self

    def transform(self, X):
        check_is_fitted(self, "W1_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"X has {X.shape[1]} features, projector was fit on {self.n_features_in_}")
        return matmul(gelu(matmul(X, self.W1_)), self.W2_)


class Aligner(TransformerMixin, BaseEstimator):
    """Maps visual rows through one layer's ``Wv``, ``Wo`` and FFN.

    ``layer`` is held by reference; the aligner has no weights of its own.
    """

    def __init__(self, layer=None):
        self.layer = layer

    def fit(self, X, y=None):
        if not isinstance(self.layer, LayerWeights):
            raise ContractError("Aligner needs a LayerWeights instance as `layer`")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != self.layer.hidden:
            raise ContractError(f"X has {X.shape[1]} columns, layer hidden size is {self.layer.hidden}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        return aligner_forward(X, self.layer)


class CompositeLM(BaseEstimator):
    """Toy decoder LM over (visual features, token ids) in either wiring.

    >>> lm = CompositeLM(n_layers=1, hidden=8, heads=2, vocab=10, feat_dim=3).fit()
    >>> lm.predict_logits(np.zeros((2, 3)), [1, 2]).shape
    (2, 10)
    """

    def __init__(
        self,
        n_layers=2,
        hidden=32,
        heads=2,
        vocab=64,
        feat_dim=16,
        mode="composite",
        init_std=INIT_STD,
        random_state=0,
    ):
        self.n_layers = n_layers
        self.hidden = hidden
        self.heads = heads
        self.vocab = vocab
        self.feat_dim = feat_dim
        self.mode = mode
        self.init_std = init_std
        self.random_state = random_state

    def _config(self):
        return ModelConfig(self.n_layers, self.hidden, self.heads, self.vocab, self.feat_dim, self.mode)

    def fit(self, X=None, y=None):
        """Draw weights. ``X``, if given, only checks the feature width."""
        cfg = self._config()
        if X is not None:
            X = check_array(X, dtype=np.float64, ensure_min_samples=0)
            if X.shape[1] != cfg.feat_dim:
                raise ContractError(f"X has {X.shape[1]} features, feat_dim is {cfg.feat_dim}")
        self.model_ = build_model(cfg, seed=_check_seed(self.random_state), stddev=self.init_std)
        self.n_features_in_ = cfg.feat_dim
        return self

    @classmethod
    def from_model(cls, model):
        c = model.config
        est = cls(c.d, c.h, c.a, c.vocab, c.feat_dim, c.mode, random_state=None)
        est.model_ = model
        est.n_features_in_ = c.feat_dim
        return est

    def _fitted_model(self):
        check_is_fitted(self, "model_")
        if self.model_.config.mode != self.mode:
            return self.model_.with_mode(self.mode)
        return self.model_

    def predict_logits(self, features, prompt_ids):
        return model_forward(self._fitted_model(), features, list(prompt_ids))

    def predict(self, features, prompt_ids):
        """Greedy next-token id after ``prompt_ids``."""
        _, logits = prefill(self._fitted_model(), features, list(prompt_ids))
        return int(np.argmax(logits))

    def generate(self, features, prompt_ids, n_new, use_cache=True):
        return generate_greedy(self._fitted_model(), features, list(prompt_ids), n_new, use_cache=use_cache)

    def count_flops(self, k, n):
        """Counted decoder FLOPs ``(baseline, composite)`` for ``k`` visual and ``n`` text tokens."""
        return instrumented_flops(self._fitted_model(), k, n)
