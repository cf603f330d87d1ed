"""Layer primitives, parameter store, checkpoint format, gradient checker."""

import numpy as np
from scipy.special import ndtr, ndtri

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"TRISR-CKPT v1"


class CheckpointError(Exception):
    """Raised for unreadable or inconsistent checkpoint files."""


class Params:
    """Ordered name -> Tensor store. Names are unique, shapes fixed."""

    def __init__(self):
        self._store = {}

    def add(self, name, array):
        if name in self._store:
            raise ValueError(f"duplicate parameter {name!r}")
        self._store[name] = Tensor(array, requires_grad=True)
        return self._store[name]

    def __getitem__(self, name):
        return self._store[name]

    def __contains__(self, name):
        return name in self._store

    def __iter__(self):
        return iter(self._store.items())

    def __len__(self):
        return len(self._store)

    def names(self):
        return list(self._store)

    def tensors(self):
        return list(self._store.values())

    def zero_grad(self):
        for t in self._store.values():
            t.grad = None

    def count(self):
        return sum(t.data.size for t in self._store.values())

    def astype(self, dtype):
        out = Params()
        for name, t in self._store.items():
            out.add(name, t.data.astype(dtype))
        return out


def trunc_normal(shape, std, rng):
    """Truncated normal on [-2*std, 2*std] via inverse-CDF sampling."""
    lo, hi = ndtr(-2.0), ndtr(2.0)
    u = rng.uniform(lo, hi, size=shape)
    return (ndtri(u) * std).astype(np.float64)


def init_array(kind, shape, rng, dtype):
    if kind == "proj":
        return trunc_normal(shape, 0.02, rng).astype(dtype)
    if kind == "zeros":
        return np.zeros(shape, dtype=dtype)
    if kind == "ones":
        return np.ones(shape, dtype=dtype)
    raise ValueError(f"unknown init kind {kind!r}")


# ---------------------------------------------------------------------------
# layer primitives


def linear(x, w, b=None):
    """x (..., Cin) @ w (Cin, Cout) + b."""
    out = ad.matmul(x, w)
    if b is not None:
        out = ad.add(out, b)
    return out


def softmax_masked(logits, mask=None):
    """Row softmax of logits plus an additive 0 / -1e4 mask."""
    if mask is not None:
        mask = np.asarray(mask, dtype=logits.dtype)
    return ad.softmax_last(logits, mask)


def layer_norm(x, scale, bias, eps=1e-5):
    return ad.layer_norm(x, scale, bias, eps)


def gelu(x):
    return ad.gelu(x)


def mlp(x, w1, b1, w2, b2):
    """linear -> GELU -> linear."""
    return linear(gelu(linear(x, w1, b1)), w2, b2)


def conv2d(x, w, b=None, pad_mode="zeros"):
    return ad.conv2d(x, w, b, pad_mode)


def dwpw_conv(x, dw_w, dw_b, pw_w, pw_b, pad_mode="zeros"):
    """Depthwise 3x3 followed by pointwise 1x1."""
    h = ad.depthwise_conv(x, dw_w, dw_b, pad_mode)
    return linear(h, pw_w, pw_b)


def pixel_shuffle(x, r):
    """Depth-to-space: (B,H,W,r*r*C) -> (B,rH,rW,C)."""
    B, H, W, C2 = x.shape
    if C2 % (r * r) != 0:
        raise ValueError(f"channels {C2} not divisible by r^2={r * r}")
    C = C2 // (r * r)
    x = ad.reshape(x, (B, H, W, r, r, C))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (B, H * r, W * r, C))


def l1_loss(pred, target):
    """Mean absolute error; target is a constant array."""
    diff = ad.add_const(pred, -np.asarray(target, dtype=pred.dtype))
    return ad.mean_all(ad.absolute(diff))


# ---------------------------------------------------------------------------
# checkpoint format
#
# ASCII header, then raw payload:
#   line 0: "TRISR-CKPT v1 <n_records>"
#   lines 1..n: "<name> f32 <d0>x<d1>x..."  (scalar-free; all params are arrays)
#   a single blank line
#   payload: each record's float32 little-endian C-order bytes, header order


def save_checkpoint(path, params):
    names = params.names()
    lines = [CHECKPOINT_MAGIC.decode() + f" {len(names)}"]
    for name in names:
        shape = "x".join(str(d) for d in params[name].data.shape)
        lines.append(f"{name} f32 {shape}")
    header = ("\n".join(lines) + "\n\n").encode()
    with open(path, "wb") as fh:
        fh.write(header)
        for name in names:
            arr = np.ascontiguousarray(params[name].data, dtype="<f4")
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint into a dict name -> float32 ndarray."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(str(exc)) from exc
    head_end = blob.find(b"\n\n")
    if head_end < 0 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    lines = blob[:head_end].decode(errors="replace").split("\n")
    try:
        n = int(lines[0].split()[-1])
    except (ValueError, IndexError) as exc:
        raise CheckpointError(f"{path}: bad header") from exc
    if len(lines) != n + 1:
        raise CheckpointError(f"{path}: header lists {len(lines) - 1} records, expected {n}")
    offset = head_end + 2
    out = {}
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != 3 or parts[1] != "f32":
            raise CheckpointError(f"{path}: bad record line {line!r}")
        name, _, shape_s = parts
        shape = tuple(int(d) for d in shape_s.split("x"))
        nbytes = int(np.prod(shape)) * 4
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated payload at {name!r}")
        out[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return out


def load_into(params, path):
    loaded = load_checkpoint(path)
    missing = set(params.names()) - set(loaded)
    extra = set(loaded) - set(params.names())
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing={sorted(missing)[:3]} extra={sorted(extra)[:3]}")
    for name, arr in loaded.items():
        t = params[name]
        if t.data.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}: {t.data.shape} vs {arr.shape}")
        t.data = arr.astype(t.data.dtype)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, params, eps=1e-4, n_coords=200, rng=None, sabotage=False):
    """Max relative error between analytic and central-difference gradients.

    f() evaluates the scalar loss from the current parameter values and must
    be deterministic. Coordinates are subsampled uniformly across all
    parameter tensors. Denominator is max(|analytic|, |numeric|, 1e-8).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    params.zero_grad()
    out = f()
    if not np.isfinite(out.data):
        raise FloatingPointError("non-finite objective in grad_check")
    out.backward()
    tensors = params.tensors()
    sizes = np.array([t.data.size for t in tensors])
    total = int(sizes.sum())
    n = min(n_coords, total)
    flat_ids = rng.choice(total, size=n, replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for fid in flat_ids:
        ti = int(np.searchsorted(bounds, fid, side="right"))
        off = int(fid - (bounds[ti - 1] if ti > 0 else 0))
        t = tensors[ti]
        flat = t.data.reshape(-1)
        analytic = float(t.grad.reshape(-1)[off]) if t.grad is not None else 0.0
        if sabotage:
            analytic *= 2.0
        orig = flat[off]
        with ad.no_grad():
            flat[off] = orig + eps
            f_plus = float(f().data)
            flat[off] = orig - eps
            f_minus = float(f().data)
        flat[off] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        denom = max(abs(analytic), abs(numeric), 1e-8)
        err = abs(analytic - numeric) / denom
        worst = max(worst, err)
    return worst
