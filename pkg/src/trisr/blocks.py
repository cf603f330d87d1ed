"""Composite blocks: windowed transformer units fused with channel attention.

A transformer unit adds three branches -- window attention, a weighted
conv/squeeze-excitation channel path, and the residual input -- then runs a
tokenwise MLP with its own residual. Units pair up (rect window, then tri
window at double the side) per shift size; four shifted pairs plus an
overlapping cross-attention block and a conv form one residual window group.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry, nn
from .attention import AttnParams, attention_core, overlap_attention_core
from .autodiff import Tensor

SE_SQUEEZE = 4  # channel reduction of the squeeze-excitation bottleneck


@dataclass(frozen=True)
class UnitConfig:
    """Hyperparameters shared by the paired rect/tri units of one stack.

    `masked` applies the wrap-seam attention mask of shifted layouts. The
    full model runs on a torus (wrap-padded convs), where cross-seam
    neighbours are real neighbours, so it leaves masking off; the masks
    exist for flat (zero-padded) use and for the attention-level tests.
    """

    channels: int
    heads: int
    rect_window: int
    tri_square: int
    shift: int = 0
    interval: int = 1
    alpha: float = 0.01
    beta: float = 0.015
    mlp_ratio: int = 2
    pad_mode: str = "zeros"
    masked: bool = False

    def __post_init__(self):
        if self.tri_square != 2 * self.rect_window:
            raise ValueError(
                f"tri square {self.tri_square} must be twice the rect window "
                f"{self.rect_window}"
            )
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("channel-attention weights must be >= 0")


# ---------------------------------------------------------------------------
# parameter plans


def attn_param_specs(prefix, C, T_q, T_kv=None):
    T_kv = T_q if T_kv is None else T_kv
    specs = []
    for nm in ("wq", "wk", "wv", "wo"):
        specs.append((f"{prefix}.{nm}", (C, C), "proj"))
        specs.append((f"{prefix}.b{nm[1]}", (C,), "zeros"))
    specs.append((f"{prefix}.bias", (T_q, T_kv), "proj"))
    return specs


def channel_attn_param_specs(prefix, C):
    r = max(C // SE_SQUEEZE, 1)
    specs = []
    for layer in ("dw1", "dw2"):
        specs.append((f"{prefix}.{layer}.w", (3, 3, C), "proj"))
        specs.append((f"{prefix}.{layer}.b", (C,), "zeros"))
    for layer in ("pw1", "pw2"):
        specs.append((f"{prefix}.{layer}.w", (C, C), "proj"))
        specs.append((f"{prefix}.{layer}.b", (C,), "zeros"))
    specs.append((f"{prefix}.se1.w", (C, r), "proj"))
    specs.append((f"{prefix}.se1.b", (r,), "zeros"))
    specs.append((f"{prefix}.se2.w", (r, C), "proj"))
    specs.append((f"{prefix}.se2.b", (C,), "zeros"))
    return specs


def _norm_mlp_specs(prefix, C, ratio):
    return [
        (f"{prefix}.ln1.g", (C,), "ones"),
        (f"{prefix}.ln1.b", (C,), "zeros"),
        (f"{prefix}.ln2.g", (C,), "ones"),
        (f"{prefix}.ln2.b", (C,), "zeros"),
        (f"{prefix}.mlp.w1", (C, ratio * C), "proj"),
        (f"{prefix}.mlp.b1", (ratio * C,), "zeros"),
        (f"{prefix}.mlp.w2", (ratio * C, C), "proj"),
        (f"{prefix}.mlp.b2", (C,), "zeros"),
    ]


def unit_param_specs(prefix, C, tokens, ratio):
    """One transformer unit: norms, attention (T x T bias), CA branch, MLP."""
    specs = attn_param_specs(f"{prefix}.attn", C, tokens)
    specs += channel_attn_param_specs(f"{prefix}.ca", C)
    specs += _norm_mlp_specs(prefix, C, ratio)
    return specs


def overlap_param_specs(prefix, C, T_q, T_kv, ratio):
    """Overlapping cross-attention block: norms, attention (Tq x Tkv), MLP."""
    return attn_param_specs(f"{prefix}.attn", C, T_q, T_kv) + _norm_mlp_specs(prefix, C, ratio)


def attn_view(params, prefix, heads):
    return AttnParams(
        wq=params[f"{prefix}.wq"], bq=params[f"{prefix}.bq"],
        wk=params[f"{prefix}.wk"], bk=params[f"{prefix}.bk"],
        wv=params[f"{prefix}.wv"], bv=params[f"{prefix}.bv"],
        wo=params[f"{prefix}.wo"], bo=params[f"{prefix}.bo"],
        bias=params[f"{prefix}.bias"], heads=heads,
    )


# ---------------------------------------------------------------------------
# tensor-level forward pieces (token tensors are (B, H*W, C))


def channel_attention_t(x_map, params, prefix, pad_mode):
    """Conv channel mixer: dwpw -> GELU -> dwpw, then squeeze-excitation."""
    h = nn.dwpw_conv(x_map, params[f"{prefix}.dw1.w"], params[f"{prefix}.dw1.b"],
                     params[f"{prefix}.pw1.w"], params[f"{prefix}.pw1.b"], pad_mode)
    h = ad.gelu(h)
    h = nn.dwpw_conv(h, params[f"{prefix}.dw2.w"], params[f"{prefix}.dw2.b"],
                     params[f"{prefix}.pw2.w"], params[f"{prefix}.pw2.b"], pad_mode)
    pooled = ad.mean_axes(h, (1, 2), keepdims=True)  # (B,1,1,C)
    se = nn.linear(pooled, params[f"{prefix}.se1.w"], params[f"{prefix}.se1.b"])
    se = ad.gelu(se)
    se = nn.linear(se, params[f"{prefix}.se2.w"], params[f"{prefix}.se2.b"])
    se = ad.sigmoid(se)
    return ad.mul(h, se)


def _windowed_attention(x_tokens, B, C, layout, params, prefix, heads, masked):
    toks = ad.take_tokens(x_tokens, layout.source_flat, inv=layout.inverse_flat)
    toks = ad.reshape(toks, (B, layout.groups, layout.tokens, C))
    mask = geometry.shift_mask(layout) if masked else None
    if mask is not None and not mask.any():
        mask = None
    out = attention_core(toks, toks, attn_view(params, prefix, heads), mask)
    out = ad.reshape(out, (B, layout.groups * layout.tokens, C))
    return ad.take_tokens(out, layout.inverse_flat, inv=layout.source_flat)


def transformer_unit_t(x, H, W, layout, ca_weight, cfg, params, prefix):
    """One unit: window attention + weighted channel attention + MLP residual."""
    B, N, C = x.shape
    x1 = nn.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    att = _windowed_attention(x1, B, C, layout, params, f"{prefix}.attn", cfg.heads,
                              cfg.masked)
    ca = channel_attention_t(ad.reshape(x1, (B, H, W, C)), params, f"{prefix}.ca",
                             cfg.pad_mode)
    ca = ad.reshape(ca, (B, N, C))
    x_int = ad.add(ad.add(att, ad.scale(ca, ca_weight)), x)
    x2 = nn.layer_norm(x_int, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    out = nn.mlp(x2, params[f"{prefix}.mlp.w1"], params[f"{prefix}.mlp.b1"],
                 params[f"{prefix}.mlp.w2"], params[f"{prefix}.mlp.b2"])
    return ad.add(out, x_int)


def rect_unit_t(x, H, W, cfg, params, prefix):
    scheme = "rect" if cfg.interval == 1 else "sparse-rect"
    layout = geometry.build_layout(scheme, H, W, cfg.rect_window,
                                   cfg.shift % cfg.rect_window, cfg.interval)
    return transformer_unit_t(x, H, W, layout, cfg.alpha, cfg, params, prefix)


def tri_unit_t(x, H, W, cfg, params, prefix):
    scheme = "tri" if cfg.interval == 1 else "sparse-tri"
    layout = geometry.build_layout(scheme, H, W, cfg.tri_square, cfg.shift, cfg.interval)
    return transformer_unit_t(x, H, W, layout, cfg.beta, cfg, params, prefix)


def hybrid_block_t(x, H, W, cfg, params, prefix, n_pairs):
    """n_pairs successive (rect unit -> tri unit) at this block's shift."""
    for p in range(n_pairs):
        x = rect_unit_t(x, H, W, cfg, params, f"{prefix}.pair{p}.rect")
        x = tri_unit_t(x, H, W, cfg, params, f"{prefix}.pair{p}.tri")
    return x


def overlap_block_t(x, H, W, cfg, params, prefix, overlap_k):
    """Overlapping cross-attention with its own norm/residual/MLP wrapper."""
    B, N, C = x.shape
    x1 = nn.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    att = overlap_attention_core(x1, H, W, cfg.rect_window, overlap_k,
                                 attn_view(params, f"{prefix}.attn", cfg.heads),
                                 cfg.pad_mode)
    x_int = ad.add(att, x)
    x2 = nn.layer_norm(x_int, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    out = nn.mlp(x2, params[f"{prefix}.mlp.w1"], params[f"{prefix}.mlp.b1"],
                 params[f"{prefix}.mlp.w2"], params[f"{prefix}.mlp.b2"])
    return ad.add(out, x_int)


def window_group_t(x, H, W, cfg, params, prefix, shifts, n_pairs, overlap_k):
    """One residual group: shifted hybrid blocks, overlap block, conv, +input."""
    B, N, C = x.shape
    y = x
    for j, s in enumerate(shifts):
        jcfg = _with_shift(cfg, s)
        y = hybrid_block_t(y, H, W, jcfg, params, f"{prefix}.hyb{j}", n_pairs)
    y = overlap_block_t(y, H, W, _with_shift(cfg, 0), params, f"{prefix}.overlap",
                        overlap_k)
    y_map = ad.reshape(y, (B, H, W, C))
    y_map = nn.conv2d(y_map, params[f"{prefix}.conv.w"], params[f"{prefix}.conv.b"],
                      cfg.pad_mode)
    return ad.add(ad.reshape(y_map, (B, N, C)), x)


def _with_shift(cfg, s):
    if cfg.shift == s:
        return cfg
    return UnitConfig(channels=cfg.channels, heads=cfg.heads,
                      rect_window=cfg.rect_window, tri_square=cfg.tri_square,
                      shift=s, interval=cfg.interval, alpha=cfg.alpha, beta=cfg.beta,
                      mlp_ratio=cfg.mlp_ratio, pad_mode=cfg.pad_mode,
                      masked=cfg.masked)


# ---------------------------------------------------------------------------
# numpy-facing wrappers (build standalone params, run one block on a map)


def _tokens_from_map(fm, dtype=None):
    arr = np.asarray(fm, dtype=dtype)
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[None]
    B, H, W, C = arr.shape
    return Tensor(arr.reshape(B, H * W, C)), (B, H, W, C), squeeze


def _map_from_tokens(t, shape, squeeze):
    out = t.data.reshape(shape)
    return out[0] if squeeze else out


def build_unit_params(cfg, seed, kind="rect", dtype=np.float32, prefix="unit"):
    """Standalone parameter store for a single unit (tests, probes)."""
    rng = np.random.default_rng(seed)
    tokens = cfg.rect_window ** 2 if kind == "rect" else cfg.tri_square ** 2 // 4
    params = nn.Params()
    for name, shape, init in unit_param_specs(prefix, cfg.channels, tokens,
                                              cfg.mlp_ratio):
        params.add(name, nn.init_array(init, shape, rng, dtype))
    return params


def rect_unit(fm, cfg, params, prefix="unit"):
    x, shape, squeeze = _tokens_from_map(fm)
    out = rect_unit_t(x, shape[1], shape[2], cfg, params, prefix)
    return _map_from_tokens(out, shape, squeeze)


def tri_unit(fm, cfg, params, prefix="unit"):
    x, shape, squeeze = _tokens_from_map(fm)
    out = tri_unit_t(x, shape[1], shape[2], cfg, params, prefix)
    return _map_from_tokens(out, shape, squeeze)


def channel_block(fm, params, prefix="unit.ca", pad_mode="zeros"):
    arr = np.asarray(fm)
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[None]
    out = channel_attention_t(Tensor(arr), params, prefix, pad_mode).data
    return out[0] if squeeze else out
