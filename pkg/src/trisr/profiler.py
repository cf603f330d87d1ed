"""Attention-cost formulas, parameter/MAC counting, and empirical checks.

All counts are exact Python integers (arbitrary precision, overflow-free).
Convention: one multiply-accumulate = 1; only matrix-product terms are
counted, softmax and normalization arithmetic is excluded.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import attention, geometry
from .blocks import SE_SQUEEZE
from .model import _tail_stages, param_specs


@dataclass(frozen=True)
class CostReport:
    formula: str
    H: int
    W: int
    C: int
    L: int | None
    S: int | None
    macs: int

    def csv_row(self):
        l = "" if self.L is None else str(self.L)
        s = "" if self.S is None else str(self.S)
        return f"{self.formula},{self.H},{self.W},{self.C},{l},{s},{self.macs}"


CSV_HEADER = "formula,H,W,C,L,S,macs"


def _check_positive(**kw):
    for name, v in kw.items():
        if int(v) != v or v <= 0:
            raise ValueError(f"{name} must be a positive integer, got {v}")


def msa_cost(H, W, C):
    """Global attention cost: 4*HW*C^2 + 2*(HW)^2*C."""
    _check_positive(H=H, W=W, C=C)
    H, W, C = int(H), int(W), int(C)
    hw = H * W
    return 4 * hw * C * C + 2 * hw * hw * C


def dense_window_cost(H, W, C, L):
    """Windowed attention with L^2-token windows: 4*HW*C^2 + 2*HW*L^2*C."""
    _check_positive(H=H, W=W, C=C, L=L)
    H, W, C, L = int(H), int(W), int(C), int(L)
    if L * L > H * W:
        raise ValueError(f"L^2={L * L} exceeds HW={H * W}")
    hw = H * W
    return 4 * hw * C * C + 2 * hw * L * L * C


def sparse_window_cost(H, W, C, S):
    """Interval-sparse attention: 4*HW*C^2 + 2*(HW/S)^2*C."""
    _check_positive(H=H, W=W, C=C, S=S)
    H, W, C, S = int(H), int(W), int(C), int(S)
    hw = H * W
    if hw % S:
        raise ValueError(f"S={S} must divide HW={hw}")
    sub = hw // S
    return 4 * hw * C * C + 2 * sub * sub * C


def cost_reports(hs, ws, cs, ls, ss):
    """Cross-product sweep of the three formulas into CostReport rows."""
    rows = []
    for H in hs:
        for W in ws:
            for C in cs:
                rows.append(CostReport("msa", H, W, C, None, None, msa_cost(H, W, C)))
                for L in ls:
                    rows.append(CostReport("dense_window", H, W, C, L, None,
                                           dense_window_cost(H, W, C, L)))
                for S in ss:
                    rows.append(CostReport("sparse_window", H, W, C, None, S,
                                           sparse_window_cost(H, W, C, S)))
    return rows


# ---------------------------------------------------------------------------
# whole-model accounting


def model_params(cfg):
    """Exact trainable-parameter count by structural traversal."""
    return sum(math.prod(shape) for _, shape, _ in param_specs(cfg))


def model_macs(cfg, H, W):
    """(params, macs) for one batch-1 forward at input H x W.

    The input is padded up to the layout period exactly as the model pads,
    and only matrix-product terms are counted (convs, linears, attention
    score/value products).
    """
    cfg.validate()
    P = cfg.period
    Hp, Wp = H + (-H) % P, W + (-W) % P
    hw = Hp * Wp
    C = cfg.channels
    r_se = max(C // SE_SQUEEZE, 1)

    unit_attn = 4 * hw * C * C
    mlp = 2 * hw * C * (cfg.mlp_ratio * C)
    cwab = 2 * (9 * hw * C + hw * C * C) + C * r_se + r_se * C
    t_rect = cfg.rect_window ** 2
    t_tri = cfg.tri_square ** 2 // 4
    rect_unit = unit_attn + 2 * hw * t_rect * C + cwab + mlp
    tri_unit = unit_attn + 2 * hw * t_tri * C + cwab + mlp

    R0, _ = geometry.overlap_params(cfg.rect_window, cfg.overlap_k)
    overlap = 4 * hw * C * C + 2 * hw * (R0 * R0) * C + mlp

    per_block = len(cfg.shifts) * cfg.pairs_per_shift * (rect_unit + tri_unit)
    per_block += overlap + 9 * hw * C * C
    total = cfg.n_blocks * per_block

    total += 9 * hw * cfg.in_channels * C  # head
    total += 9 * hw * C * C  # body conv
    h, w = Hp, Wp
    for cout, r in _tail_stages(cfg):
        total += 9 * h * w * C * cout
        h, w = h * r, w * r
    total += 9 * h * w * C * cfg.in_channels  # final conv
    return model_params(cfg), total


def measured_window_attention_mults(scheme, H, W, M, shift, interval, C, heads):
    """Run the instrumented attention once; return its counted multiplies."""
    layout = geometry.build_layout(scheme, H, W, M, shift, interval)
    rng = np.random.default_rng(0)
    p = attention.random_attn_params(C, layout.tokens, heads, rng, dtype=np.float32)
    fm = rng.standard_normal((H, W, C)).astype(np.float32)
    groups = geometry.TokenGroups(layout.partition(fm), layout)
    with attention.count_mults() as counter:
        attention.w_msa(groups, None, p)
    return counter["score_mults"] + counter["value_mults"]


def simple_timer(fn, repeats=3):
    """Uncalibrated wall-clock timing helper: returns best-of-N seconds."""
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best
