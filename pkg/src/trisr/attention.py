"""Multi-head attention over token groups.

One shared core serves every non-overlapping layout (rect / tri, dense /
sparse, shifted or not); a cross-attention variant consumes enlarged
overlapping key/value windows. `reference_attention` is the deliberately
naive per-pair oracle the fast path is tested against.
"""

import contextlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry, nn
from .autodiff import Tensor
from .geometry import TokenGroups

_mult_counter = None


@contextlib.contextmanager
def count_mults():
    """Count multiplies of the attention-score and value matrix products."""
    global _mult_counter
    prev = _mult_counter
    _mult_counter = {"score_mults": 0, "value_mults": 0}
    try:
        yield _mult_counter
    finally:
        _mult_counter = prev


@dataclass
class AttnParams:
    """Per-layer attention parameters.

    Projections are C x C; the additive pairwise bias table is T x T for
    self-attention (T_q x T_kv for the overlapping variant) and is shared
    across heads.
    """

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    bias: Tensor
    heads: int

    @property
    def channels(self):
        return self.wq.shape[0]


def random_attn_params(C, T_q, heads, rng, T_kv=None, dtype=np.float64, zero_bias=False):
    """Independent random parameters for tests and oracles."""
    if C % heads:
        raise ValueError(f"channels {C} not divisible by heads {heads}")
    T_kv = T_q if T_kv is None else T_kv

    def proj():
        return Tensor((rng.standard_normal((C, C)) * 0.1).astype(dtype), requires_grad=True)

    def bias_vec():
        return Tensor((rng.standard_normal(C) * 0.05).astype(dtype), requires_grad=True)

    bias = np.zeros((T_q, T_kv), dtype=dtype) if zero_bias else \
        (rng.standard_normal((T_q, T_kv)) * 0.1).astype(dtype)
    return AttnParams(
        wq=proj(), bq=bias_vec(), wk=proj(), bk=bias_vec(),
        wv=proj(), bv=bias_vec(), wo=proj(), bo=bias_vec(),
        bias=Tensor(bias, requires_grad=True), heads=heads,
    )


def _split_heads(x, heads):
    """(B, G, T, C) -> (B, G, h, T, d)."""
    B, G, T, C = x.shape
    d = C // heads
    x = ad.reshape(x, (B, G, T, heads, d))
    return ad.transpose(x, (0, 1, 3, 2, 4))


def _merge_heads(x):
    """(B, G, h, T, d) -> (B, G, T, C)."""
    B, G, h, T, d = x.shape
    x = ad.transpose(x, (0, 1, 3, 2, 4))
    return ad.reshape(x, (B, G, T, h * d))


def attention_core(xq, xkv, p, mask=None):
    """Cross attention between token tensors (B, G, Tq, C) and (B, G, Tkv, C).

    Per head: softmax(q k^T / sqrt(d) + bias + mask) v, heads concatenated
    and output-projected. mask is a constant (G, Tq, Tkv) additive array.
    """
    B, G, Tq, C = xq.shape
    Tkv = xkv.shape[2]
    h = p.heads
    d = C // h
    q = _split_heads(nn.linear(xq, p.wq, p.bq), h)
    k = _split_heads(nn.linear(xkv, p.wk, p.bk), h)
    v = _split_heads(nn.linear(xkv, p.wv, p.bv), h)

    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 2, 4, 3))), 1.0 / np.sqrt(d))
    scores = ad.add(scores, p.bias)  # (Tq, Tkv) broadcast over (B, G, h)
    if _mult_counter is not None:
        _mult_counter["score_mults"] += B * G * h * Tq * Tkv * d

    const_mask = None
    if mask is not None:
        const_mask = np.asarray(mask, dtype=xq.dtype).reshape(1, G, 1, Tq, Tkv)
    attn = ad.softmax_last(scores, const_mask)

    out = ad.matmul(attn, v)
    if _mult_counter is not None:
        _mult_counter["value_mults"] += B * G * h * Tq * Tkv * d
    return nn.linear(_merge_heads(out), p.wo, p.bo)


def _as_batched_tensor(data):
    arr = np.asarray(data)
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[None]
    return Tensor(arr), squeeze


def w_msa(groups, mask, p):
    """Window attention over TokenGroups from any non-overlapping layout."""
    data = groups.data if isinstance(groups, TokenGroups) else groups
    x, squeeze = _as_batched_tensor(data)
    if mask is not None:
        G, Tq = x.shape[1], x.shape[2]
        mask = np.asarray(mask)
        if mask.shape != (G, Tq, Tq):
            raise ValueError(f"mask {mask.shape} does not match groups {(G, Tq, Tq)}")
    out = attention_core(x, x, p, mask).data
    if squeeze:
        out = out[0]
    layout = groups.layout if isinstance(groups, TokenGroups) else None
    return TokenGroups(out, layout)


def reference_attention(groups, mask, p):
    """Naive per-window attention with explicit loops over token pairs.

    Same contract as w_msa; no batching tricks, kept independent of the
    vectorized path on purpose.
    """
    data = groups.data if isinstance(groups, TokenGroups) else groups
    arr = np.asarray(data)
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[None]
    B, G, T, C = arr.shape
    h = p.heads
    d = C // h
    wq, bq = p.wq.data, p.bq.data
    wk, bk = p.wk.data, p.bk.data
    wv, bv = p.wv.data, p.bv.data
    wo, bo = p.wo.data, p.bo.data
    bias = p.bias.data
    out = np.zeros_like(arr)
    for b in range(B):
        for g in range(G):
            x = arr[b, g]  # (T, C)
            q = x @ wq + bq
            k = x @ wk + bk
            v = x @ wv + bv
            merged = np.zeros((T, C), dtype=arr.dtype)
            for head in range(h):
                sl = slice(head * d, (head + 1) * d)
                for t in range(T):
                    logits = np.empty(T, dtype=arr.dtype)
                    for u in range(T):
                        logits[u] = float(np.dot(q[t, sl], k[u, sl])) / np.sqrt(d)
                        logits[u] += bias[t, u]
                        if mask is not None:
                            logits[u] += mask[g, t, u]
                    logits -= logits.max()
                    weights = np.exp(logits)
                    weights /= weights.sum()
                    acc = np.zeros(d, dtype=arr.dtype)
                    for u in range(T):
                        acc += weights[u] * v[u, sl]
                    merged[t, sl] = acc
            out[b, g] = merged @ wo + bo
    if squeeze:
        out = out[0]
    layout = groups.layout if isinstance(groups, TokenGroups) else None
    return TokenGroups(out, layout)


# ---------------------------------------------------------------------------
# overlapping cross-fusion attention


def overlap_attention_core(x, H, W, R, k, p, pad_mode="zeros"):
    """Cross attention: queries from R-windows, keys/values from (1+k)R windows.

    x is a token tensor (B, H*W, C). Queries come from the plain rect
    partition; keys and values are projected first and then unfolded into
    the enlarged aligned windows. Output is scattered back to (B, H*W, C).
    """
    B, N, C = x.shape
    if N != H * W:
        raise ValueError(f"token count {N} != H*W = {H * W}")
    layout = geometry.build_layout("rect", H, W, R, 0)
    idx, pad = geometry.overlap_indices(H, W, R, k, wrap=(pad_mode == "wrap"))
    G, Tq, Tkv = layout.groups, layout.tokens, idx.shape[1]

    q = nn.linear(x, p.wq, p.bq)
    q = ad.take_tokens(q, layout.source_flat, inv=layout.inverse_flat)
    q = ad.reshape(q, (B, G, Tq, C))

    kx = nn.linear(x, p.wk, p.bk)
    vx = nn.linear(x, p.wv, p.bv)
    if pad:
        Hp, Wp = H + 2 * pad, W + 2 * pad
        kx = ad.reshape(ad.pad2d_zero(ad.reshape(kx, (B, H, W, C)), pad), (B, Hp * Wp, C))
        vx = ad.reshape(ad.pad2d_zero(ad.reshape(vx, (B, H, W, C)), pad), (B, Hp * Wp, C))
    kt = ad.reshape(ad.take_tokens(kx, idx.reshape(-1)), (B, G, Tkv, C))
    vt = ad.reshape(ad.take_tokens(vx, idx.reshape(-1)), (B, G, Tkv, C))

    h = p.heads
    d = C // h
    qh = _split_heads(q, h)
    kh = _split_heads(kt, h)
    vh = _split_heads(vt, h)
    scores = ad.scale(ad.matmul(qh, ad.transpose(kh, (0, 1, 2, 4, 3))), 1.0 / np.sqrt(d))
    scores = ad.add(scores, p.bias)
    if _mult_counter is not None:
        _mult_counter["score_mults"] += B * G * h * Tq * Tkv * d
    attn = ad.softmax_last(scores)
    out = ad.matmul(attn, vh)
    if _mult_counter is not None:
        _mult_counter["value_mults"] += B * G * h * Tq * Tkv * d
    out = nn.linear(_merge_heads(out), p.wo, p.bo)

    out = ad.reshape(out, (B, G * Tq, C))
    out = ad.take_tokens(out, layout.inverse_flat, inv=layout.source_flat)
    return out


def ocfa(fm, R, k, p, pad_mode="zeros"):
    """Overlapping cross attention on a feature map (numpy in, numpy out)."""
    arr = np.asarray(fm)
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[None]
    B, H, W, C = arr.shape
    x = Tensor(arr.reshape(B, H * W, C))
    out = overlap_attention_core(x, H, W, R, k, p, pad_mode).data.reshape(B, H, W, C)
    return out[0] if squeeze else out
