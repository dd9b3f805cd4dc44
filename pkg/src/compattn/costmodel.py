"""Analytic FLOPs for the concat baseline and the composite model, and a
counted-matmul cross-check.

FLOP convention: ``2*m*n*p`` per (m x n)(n x p) product. Softmax, activations
and residual adds are not counted. All formula arithmetic is exact Python
integers; only the ratio is a float.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._validation import ContractError, check_count
from .layers import ModelConfig, build_model, decoder_stack, embed_tokens, projector_forward
from .tensor import count_flops, make_rng


@dataclass(frozen=True)
class CostConfig:
    T_len: int
    V_len: int
    h: int
    d: int = 1

    def __post_init__(self):
        check_count(self.T_len, "T_len", minimum=1)
        check_count(self.V_len, "V_len")
        check_count(self.h, "h", minimum=1)
        check_count(self.d, "d", minimum=1)


def baseline_components(c):
    L = c.T_len + c.V_len
    return {
        "attention": c.d * (8 * L * c.h**2 + 4 * L**2 * c.h),
        "ffn": c.d * 16 * L * c.h**2,
        "aligner": 0,
    }


def ee_components(c):
    T, V, h = c.T_len, c.V_len, c.h
    return {
        "attention": c.d * ((6 * T + 2 * V) * h**2 + 4 * V * T * h + 4 * T**2 * h),
        "ffn": c.d * 16 * (V + T) * h**2,
        "aligner": c.d * 2 * V * h**2,
    }


def flops_baseline_total(c):
    """``24(T+V)dh^2 + 4(T+V)^2 dh``."""
    T, V, h, d = c.T_len, c.V_len, c.h, c.d
    return 24 * (T + V) * d * h**2 + 4 * (T + V) ** 2 * d * h


def flops_ee_total(c):
    """``2(11T+10V)dh^2 + 4VTdh + 4T^2dh``."""
    T, V, h, d = c.T_len, c.V_len, c.h, c.d
    return 2 * (11 * T + 10 * V) * d * h**2 + 4 * V * T * d * h + 4 * T**2 * d * h


def flops_ratio_exact(c):
    return Fraction(flops_ee_total(c), flops_baseline_total(c))


def flops_ratio(c):
    return float(flops_ratio_exact(c))


def instrumented_flops(model, k, n, seed=0):
    """Counted decoder-stack FLOPs for ``(baseline, composite)`` on ``k`` visual
    and ``n`` text tokens.

    Projector and LM head are outside the count, as in the analytic formulas.
    """
    k = check_count(k, "k")
    n = check_count(n, "n", minimum=1)
    cfg = model.config
    rng = make_rng(seed)
    features = rng.normal(size=(k, cfg.feat_dim))
    ids = [int(t) for t in rng.integers(0, cfg.vocab, size=n)]
    I = projector_forward(features, model)
    T = embed_tokens(model, ids)
    counts = []
    for mode in ("baseline", "composite"):
        with count_flops() as counter:
            decoder_stack(model.with_mode(mode), I, T)
        counts.append(counter.flops)
    return tuple(counts)


@dataclass(frozen=True)
class DeltaPolynomial:
    """``instrumented_ee - analytic_ee == (t_coef*T + v_coef*V) * d * h^2``."""

    t_coef: Fraction
    v_coef: Fraction

    def __call__(self, c):
        value = (self.t_coef * c.T_len + self.v_coef * c.V_len) * c.d * c.h**2
        return int(value) if value.denominator == 1 else value


def measure_ee_delta(h=4, d=1, heads=1, seed=0):
    """Fit the per-layer gap between counted and analytic composite FLOPs.

    Two probes, ``(V, T) = (0, 1)`` and ``(1, 1)``, pin both coefficients.
    """
    model = build_model(ModelConfig(d=d, h=h, a=heads, vocab=8, feat_dim=4), seed=seed)
    scale = d * h * h
    gaps = []
    for k in (0, 1):
        _, ee = instrumented_flops(model, k, 1, seed=seed)
        gaps.append(Fraction(ee - flops_ee_total(CostConfig(1, k, h, d)), scale))
    return DeltaPolynomial(t_coef=gaps[0], v_coef=gaps[1] - gaps[0])


@dataclass
class FlopsReport:
    config: CostConfig
    baseline_total: int
    ee_total: int
    components: dict
    baseline_components: dict
    ratio: float
    instrumented_baseline: int | None = None
    instrumented_ee: int | None = None
    instrumented_delta_vs_analytic: dict = field(default_factory=dict)

    def lines(self):
        c = self.config
        out = [
            f"config: T={c.T_len} V={c.V_len} h={c.h} d={c.d}",
            f"baseline_total: {self.baseline_total}",
        ]
        out += [f"  baseline.{name}: {v}" for name, v in self.baseline_components.items()]
        out.append(f"ee_total: {self.ee_total}")
        out += [f"  ee.{name}: {v}" for name, v in self.components.items()]
        out.append(f"ratio: {self.ratio:.6f}")
        if self.instrumented_baseline is not None:
            out.append(f"instrumented_baseline: {self.instrumented_baseline}")
            out.append(f"instrumented_ee: {self.instrumented_ee}")
        if self.instrumented_delta_vs_analytic:
            dlt = self.instrumented_delta_vs_analytic
            out.append(
                f"instrumented_ee - analytic_ee: {dlt['value']} = ({dlt['t_coef']}*T + {dlt['v_coef']}*V)*d*h^2"
            )
        return out


def flops_report(c, *, instrument=False, heads=1, seed=0):
    """Analytic report; with ``instrument`` also run a toy model at ``(h, d)``.

    The composite-vs-analytic gap is always reported from a small probe model,
    since it is a fixed polynomial in ``(T, V)``.
    """
    base = flops_baseline_total(c)
    ee = flops_ee_total(c)
    report = FlopsReport(
        config=c,
        baseline_total=base,
        ee_total=ee,
        components=ee_components(c),
        baseline_components=baseline_components(c),
        ratio=flops_ratio(c),
    )
    poly = measure_ee_delta(seed=seed)
    report.instrumented_delta_vs_analytic = {"t_coef": poly.t_coef, "v_coef": poly.v_coef, "value": poly(c)}
    if instrument:
        model = build_model(ModelConfig(d=c.d, h=c.h, a=heads, vocab=8, feat_dim=4), seed=seed)
        ib, ie = instrumented_flops(model, c.V_len, c.T_len, seed=seed)
        report.instrumented_baseline = ib
        report.instrumented_ee = ie
        report.instrumented_delta_vs_analytic["value"] = ie - ee
    return report


def _as_cost_config(entry):
    if isinstance(entry, CostConfig):
        return entry
    try:
        if isinstance(entry, dict):
            return CostConfig(
                T_len=entry.get("T", entry.get("T_len")),
                V_len=entry.get("V", entry.get("V_len")),
                h=entry["h"],
                d=entry.get("d", 1),
            )
        return CostConfig(*entry)
    except (ContractError, TypeError, KeyError) as exc:
        raise ContractError(f"bad grid entry {entry!r}: {exc}") from exc


def sweep_to_csv(grid):
    configs = [_as_cost_config(e) for e in grid]
    if not configs:
        raise ContractError("sweep grid must be non-empty")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["T", "V", "h", "d", "baseline_flops", "ee_flops", "ratio"])
    for c in configs:
        writer.writerow([c.T_len, c.V_len, c.h, c.d, flops_baseline_total(c), flops_ee_total(c), f"{flops_ratio(c):.6f}"])
    return buf.getvalue()


def ratio_grid(T_len, h, V_values):
    """Ratios over visual-token counts, as a float array (for monotonicity checks)."""
    return np.array([flops_ratio(CostConfig(T_len, v, h)) for v in V_values])
