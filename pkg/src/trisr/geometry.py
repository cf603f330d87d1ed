"""Window geometry: pure index arithmetic for every partition scheme.

A WindowLayout is a bijection between pixels of an H x W map and (group,
token) slots. Schemes:

  rect        cyclic shift, then non-overlapping M x M tiles
  tri         cyclic shift, then M x M tiles each split into 4 triangles
  sparse-rect shift, gather every I-th pixel into I^2 sub-maps, tile each
  sparse-tri  same with triangular tiles

All functions here are pure and operate on plain ndarrays; layouts are
immutable and cached, so they can be shared freely across threads.
"""

import enum
import functools
from dataclasses import dataclass, field

import numpy as np

MASK_NEG = -1e4  # additive pre-softmax sentinel standing in for -inf

SCHEMES = ("rect", "tri", "sparse-rect", "sparse-tri")


class TriangleKind(enum.Enum):
    UPPER = 0
    RIGHT = 1
    LOWER = 2
    LEFT = 3


def tri_classify(i, j, M):
    """Classify pixel (i, j) of an M x M square into its triangle.

    The two diagonals cut the square into upper/right/lower/left; diagonal
    pixels are tie-broken so each triangle gets exactly M^2/4 pixels.
    """
    if M % 2 != 0:
        raise ValueError(f"square size must be even, got {M}")
    if not (0 <= i < M and 0 <= j < M):
        raise ValueError(f"pixel ({i},{j}) outside square of size {M}")
    anti = i + j
    if i == j:
        return TriangleKind.UPPER if anti < M - 1 else TriangleKind.LOWER
    if anti == M - 1:
        return TriangleKind.RIGHT if i < j else TriangleKind.LEFT
    if i < j:
        return TriangleKind.UPPER if anti < M - 1 else TriangleKind.RIGHT
    return TriangleKind.LOWER if anti > M - 1 else TriangleKind.LEFT


@functools.lru_cache(maxsize=None)
def _triangle_offsets(M):
    """(4, M^2/4) within-square flat offsets per triangle, row-major order."""
    buckets = [[], [], [], []]
    for i in range(M):
        for j in range(M):
            buckets[tri_classify(i, j, M).value].append(i * M + j)
    out = np.array(buckets, dtype=np.int64)
    assert out.shape == (4, M * M // 4)
    return out


@dataclass(frozen=True, eq=False)
class WindowLayout:
    """Bijective pixel <-> (group, token) map for one partition scheme.

    source[g, t] is the flat index (i*W + j) of the original pixel stored in
    token slot (g, t); virtual[g, t] is the pixel's flat position in the
    shifted map, which is what the shift-mask region bands are built from.
    """

    scheme: str
    square: int
    shift: int
    interval: int
    height: int
    width: int
    source: np.ndarray = field(repr=False)
    virtual: np.ndarray = field(repr=False)

    @property
    def groups(self):
        return self.source.shape[0]

    @property
    def tokens(self):
        return self.source.shape[1]

    @functools.cached_property
    def source_flat(self):
        return np.ascontiguousarray(self.source.reshape(-1))

    @functools.cached_property
    def inverse_flat(self):
        """Position of each original pixel in the flattened token stream."""
        return np.argsort(self.source_flat, kind="stable")

    def forward_map(self):
        """(H*W, 2) array: row p holds (g, t) for flat pixel p."""
        inv = self.inverse_flat
        T = self.tokens
        return np.stack([inv // T, inv % T], axis=1)

    def partition(self, fm):
        """Feature map (..., H, W, C) -> token groups (..., G, T, C)."""
        fm = np.asarray(fm)
        if fm.shape[-3] != self.height or fm.shape[-2] != self.width:
            raise ValueError(
                f"feature map {fm.shape} does not match layout "
                f"{self.height}x{self.width}"
            )
        lead = fm.shape[:-3]
        C = fm.shape[-1]
        flat = fm.reshape(lead + (self.height * self.width, C))
        toks = np.take(flat, self.source_flat, axis=len(lead))
        return toks.reshape(lead + (self.groups, self.tokens, C))

    def reverse(self, groups):
        """Token groups (..., G, T, C) -> feature map (..., H, W, C)."""
        groups = np.asarray(groups)
        if groups.shape[-3] != self.groups or groups.shape[-2] != self.tokens:
            raise ValueError(
                f"groups {groups.shape} do not match layout "
                f"G={self.groups} T={self.tokens}"
            )
        lead = groups.shape[:-3]
        C = groups.shape[-1]
        flat = groups.reshape(lead + (self.groups * self.tokens, C))
        pix = np.take(flat, self.inverse_flat, axis=len(lead))
        return pix.reshape(lead + (self.height, self.width, C))


@dataclass
class TokenGroups:
    """Grouped token matrix (..., G, T, C) plus the layout that produced it."""

    data: np.ndarray
    layout: WindowLayout | None = None


def _validate(scheme, H, W, M, interval):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if "tri" in scheme and M % 2 != 0:
        raise ValueError(f"triangular square size must be even, got {M}")
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    period = M * interval
    if H % period or W % period:
        raise ValueError(
            f"H={H}, W={W} must be multiples of interval*M={period} for {scheme}"
        )


@functools.lru_cache(maxsize=None)
def build_layout(scheme, H, W, M, shift=0, interval=1):
    """Construct (and cache) the layout for one partition scheme.

    The cyclic shift applies to the full map before any gathering or tiling;
    it is canonicalized modulo the tiling period M*interval, under which the
    pixel -> group map is exactly periodic.
    """
    if scheme in ("rect", "tri"):
        interval = 1
    _validate(scheme, H, W, M, interval)
    I = interval
    s = shift % (M * I)

    Hs, Ws = H // I, W // I
    nh, nw = Hs // M, Ws // M

    # virtual sub-map pixel coordinates for every token, ordered per scheme
    if "tri" in scheme:
        offs = _triangle_offsets(M)  # (4, T)
        T = M * M // 4
        g_per_sub = nh * nw * 4
        sub_rows = np.empty((g_per_sub, T), dtype=np.int64)
        sub_cols = np.empty((g_per_sub, T), dtype=np.int64)
        g = 0
        for wi in range(nh):
            for wj in range(nw):
                for kind in range(4):
                    oi, oj = offs[kind] // M, offs[kind] % M
                    sub_rows[g] = wi * M + oi
                    sub_cols[g] = wj * M + oj
                    g += 1
    else:
        T = M * M
        g_per_sub = nh * nw
        oi, oj = np.divmod(np.arange(T, dtype=np.int64), M)
        sub_rows = np.empty((g_per_sub, T), dtype=np.int64)
        sub_cols = np.empty((g_per_sub, T), dtype=np.int64)
        g = 0
        for wi in range(nh):
            for wj in range(nw):
                sub_rows[g] = wi * M + oi
                sub_cols[g] = wj * M + oj
                g += 1

    G = g_per_sub * I * I
    virt = np.empty((G, T), dtype=np.int64)
    g0 = 0
    for a in range(I):
        for b in range(I):
            iv = sub_rows * I + a
            jv = sub_cols * I + b
            virt[g0 : g0 + g_per_sub] = iv * W + jv
            g0 += g_per_sub

    io = (virt // W + s) % H
    jo = (virt % W + s) % W
    source = io * W + jo
    return WindowLayout(
        scheme=scheme,
        square=M,
        shift=s,
        interval=I,
        height=H,
        width=W,
        source=source,
        virtual=virt,
    )


# ---------------------------------------------------------------------------
# partition / reverse entry points


def rect_partition(fm, M, s=0):
    fm = np.asarray(fm)
    layout = build_layout("rect", fm.shape[-3], fm.shape[-2], M, s)
    return TokenGroups(layout.partition(fm), layout), layout


def rect_reverse(groups, layout):
    data = groups.data if isinstance(groups, TokenGroups) else groups
    return layout.reverse(data)


def tri_partition(fm, M, s=0):
    fm = np.asarray(fm)
    layout = build_layout("tri", fm.shape[-3], fm.shape[-2], M, s)
    return TokenGroups(layout.partition(fm), layout), layout


def tri_reverse(groups, layout):
    data = groups.data if isinstance(groups, TokenGroups) else groups
    return layout.reverse(data)


def shift_modes(M_rect, M_tri):
    """Canonical shift schedules: 2 unique rect modes, 4 unique tri modes."""
    if M_tri != 2 * M_rect:
        raise ValueError(f"expected M_tri = 2*M_rect, got {M_rect}, {M_tri}")
    if M_rect % 2 != 0:
        raise ValueError(f"rect window must be even, got {M_rect}")
    half = M_rect // 2
    return [0, half], [0, half, 2 * half, 3 * half]


# ---------------------------------------------------------------------------
# shift masks


@functools.lru_cache(maxsize=None)
def _shift_mask_cached(scheme, H, W, M, shift, interval):
    layout = build_layout(scheme, H, W, M, shift, interval)
    G, T = layout.groups, layout.tokens
    if layout.shift == 0:
        return np.zeros((G, T, T), dtype=np.float32)
    I = layout.interval
    s = layout.shift
    Hs, Ws = H // I, W // I

    iv = layout.virtual // W
    jv = layout.virtual % W
    p, q = iv // I, jv // I

    # band construction on each sub-map: rows split at the last window
    # boundary and at the wrap seam left by the cyclic shift
    row_band = (p >= Hs - M).astype(np.int8)
    row_band[iv >= H - s] = 2
    col_band = (q >= Ws - M).astype(np.int8)
    col_band[jv >= W - s] = 2
    region = row_band * 3 + col_band

    diff = region[:, :, None] != region[:, None, :]
    return np.where(diff, np.float32(MASK_NEG), np.float32(0.0))


def shift_mask(layout):
    """Per-group (G, T, T) additive mask: 0 allowed, -1e4 forbidden.

    Tokens separated by the wrap seam of the cyclic shift may not attend to
    each other; with shift 0 the mask is all zeros.
    """
    return _shift_mask_cached(
        layout.scheme, layout.height, layout.width, layout.square,
        layout.shift, layout.interval,
    )


# ---------------------------------------------------------------------------
# sparse interval gather / scatter


def sparse_gather(fm, interval):
    """Split (..., H, W, C) into interval^2 sub-maps, row-major (a, b) order."""
    fm = np.asarray(fm)
    H, W = fm.shape[-3], fm.shape[-2]
    if H % interval or W % interval:
        raise ValueError(f"H={H}, W={W} must be multiples of interval {interval}")
    return [
        np.ascontiguousarray(fm[..., a::interval, b::interval, :])
        for a in range(interval)
        for b in range(interval)
    ]


def sparse_scatter(sub_maps, interval):
    """Exact inverse of sparse_gather."""
    if len(sub_maps) != interval * interval:
        raise ValueError(f"expected {interval * interval} sub-maps, got {len(sub_maps)}")
    first = np.asarray(sub_maps[0])
    Hs, Ws = first.shape[-3], first.shape[-2]
    out = np.empty(first.shape[:-3] + (Hs * interval, Ws * interval, first.shape[-1]),
                   dtype=first.dtype)
    k = 0
    for a in range(interval):
        for b in range(interval):
            out[..., a::interval, b::interval, :] = sub_maps[k]
            k += 1
    return out


# ---------------------------------------------------------------------------
# overlapping unfold


def overlap_params(R, k):
    """Resolve (window, kv-window, pad) for the overlapping unfold."""
    kr = k * R
    if abs(kr - round(kr)) > 1e-9 or round(kr) % 2 != 0:
        raise ValueError(f"k*R must be an even integer, got k={k}, R={R}")
    kr = int(round(kr))
    return R + kr, kr // 2


@functools.lru_cache(maxsize=None)
def overlap_indices(H, W, R, k, wrap=False):
    """Token gather indices for the overlapping unfold.

    Returns (idx, pad): idx has shape (G, R0*R0). With wrap=True the indices
    address the unpadded H*W map through cyclic wrapping and pad is 0; else
    they address the zero-padded (H+2p) x (W+2p) map.
    """
    if H % R or W % R:
        raise ValueError(f"H={H}, W={W} must be multiples of R={R}")
    R0, p = overlap_params(R, k)
    nh, nw = H // R, W // R
    off = np.arange(R0, dtype=np.int64)
    idx = np.empty((nh * nw, R0 * R0), dtype=np.int64)
    g = 0
    for u in range(nh):
        for v in range(nw):
            rows = u * R - p + off
            cols = v * R - p + off
            if wrap:
                rr, cc = rows % H, cols % W
                idx[g] = (rr[:, None] * W + cc[None, :]).reshape(-1)
            else:
                rr, cc = rows + p, cols + p
                idx[g] = (rr[:, None] * (W + 2 * p) + cc[None, :]).reshape(-1)
            g += 1
    return idx, (0 if wrap else p)


def overlap_unfold(fm, R, k, pad_mode="zeros"):
    """Extract aligned kv windows of size R0 = (1+k)R at stride R.

    Window (u, v) is centred on the non-overlapping R-window (u, v); borders
    come from zero padding of k*R/2 (or cyclic wrap with pad_mode='wrap').
    """
    fm = np.asarray(fm)
    H, W = fm.shape[-3], fm.shape[-2]
    idx, p = overlap_indices(H, W, R, k, wrap=(pad_mode == "wrap"))
    if p:
        widths = [(0, 0)] * (fm.ndim - 3) + [(p, p), (p, p), (0, 0)]
        fm = np.pad(fm, widths)
    lead = fm.shape[:-3]
    C = fm.shape[-1]
    flat = fm.reshape(lead + (-1, C))
    toks = np.take(flat, idx.reshape(-1), axis=len(lead))
    return TokenGroups(toks.reshape(lead + idx.shape + (C,)), None)
