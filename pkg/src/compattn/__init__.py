"""Composite attention (text-only queries over image + text keys) with
weight-sharing aligners, next to a concatenation self-attention baseline."""

from ._validation import ContractError
from .attention import (
    AttentionMask,
    AttentionWeights,
    build_causal_mask,
    build_trapezoidal_mask,
    composite_attention_backward,
    composite_attention_forward,
    scaled_dot_attention,
    self_attention_forward,
)
from .costmodel import (
    CostConfig,
    FlopsReport,
    flops_baseline_total,
    flops_ee_total,
    flops_ratio,
    flops_report,
    instrumented_flops,
    sweep_to_csv,
)
from .estimators import Aligner, CompositeLM, Projector
from .inference import KVCache, BenchReport, bench_prefill_decode, decode_step, generate_greedy, prefill
from .layers import (
    LayerWeights,
    Model,
    ModelConfig,
    aligner_forward,
    baseline_decoder_layer,
    build_model,
    composite_decoder_layer,
    ffn_forward,
    model_forward,
    projector_forward,
)
from .tensor import approx_equal, count_flops, gaussian_init, make_rng, matmul, softmax_rows_masked

__version__ = "0.1.0"

__all__ = [
    "Aligner",
    "AttentionMask",
    "AttentionWeights",
    "BenchReport",
    "CompositeLM",
    "ContractError",
    "CostConfig",
    "FlopsReport",
    "KVCache",
    "LayerWeights",
    "Model",
    "ModelConfig",
    "Projector",
    "aligner_forward",
    "approx_equal",
    "baseline_decoder_layer",
    "bench_prefill_decode",
    "build_causal_mask",
    "build_model",
    "build_trapezoidal_mask",
    "composite_attention_backward",
    "composite_attention_forward",
    "composite_decoder_layer",
    "count_flops",
    "decode_step",
    "ffn_forward",
    "flops_baseline_total",
    "flops_ee_total",
    "flops_ratio",
    "flops_report",
    "gaussian_init",
    "generate_greedy",
    "instrumented_flops",
    "make_rng",
    "matmul",
    "model_forward",
    "prefill",
    "projector_forward",
    "scaled_dot_attention",
    "self_attention_forward",
    "softmax_rows_masked",
    "sweep_to_csv",
]
