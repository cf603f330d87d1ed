"""Training loop: Adam on L1 loss with a halving learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import no_grad

# fractions of total steps at which the learning rate halves
DEFAULT_MILESTONES = (0.45, 0.70, 0.80, 0.90)


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite."""


@dataclass
class TrainConfig:
    patch_lr: int = 32
    batch_size: int = 1
    total_steps: int = 2000
    base_lr: float = 2e-4
    milestones: tuple = DEFAULT_MILESTONES
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 1

    def validate(self, period=None):
        ms = tuple(self.milestones)
        if any(not (0.0 < m < 1.0) for m in ms) or list(ms) != sorted(set(ms)):
            raise ValueError(f"milestones must be strictly increasing in (0,1): {ms}")
        if period is not None and self.patch_lr % period:
            raise ValueError(f"patch size {self.patch_lr} must be a multiple of {period}")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be >= 1")
        return self


def lr_at(step, cfg):
    """Learning rate for a 0-based step index: halved at each milestone."""
    frac = step / cfg.total_steps
    halvings = sum(1 for m in cfg.milestones if frac >= m)
    return cfg.base_lr * (0.5 ** halvings)


class Adam:
    """Adam with zero weight decay; state arrays match parameter dtype."""

    def __init__(self, params, cfg):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self._m = [np.zeros_like(t.data) for t in params.tensors()]
        self._v = [np.zeros_like(t.data) for t in params.tensors()]

    def step(self, lr):
        cfg = self.cfg
        self.t += 1
        b1t = 1.0 - cfg.beta1 ** self.t
        b2t = 1.0 - cfg.beta2 ** self.t
        for i, t in enumerate(self.params.tensors()):
            if t.grad is None:
                continue
            g = t.grad
            m, v = self._m[i], self._v[i]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            t.data -= lr * (m / b1t) / (np.sqrt(v / b2t) + cfg.eps)


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)

    def record(self, step, loss, lr):
        self.steps.append((step, loss, lr))

    def to_csv(self):
        lines = ["step,loss,lr"]
        lines += [f"{s},{l:.8e},{r:.8e}" for s, l, r in self.steps]
        return "\n".join(lines) + "\n"

    def window_means(self, window):
        losses = [l for _, l, _ in self.steps]
        return [float(np.mean(losses[i : i + window]))
                for i in range(0, len(losses) - window + 1, window)]


def train(model, sampler, cfg, on_step=None):
    """Optimize the model on sampled LR/HR pairs; returns a TrainLog.

    Deterministic for a fixed config seed and sampler: data order, init and
    updates all derive from seeded generators.
    """
    cfg.validate(period=None)
    opt = Adam(model.params, cfg)
    log = TrainLog()
    for step in range(cfg.total_steps):
        lr_batch, hr_batch = sampler.batch(cfg.batch_size)
        model.params.zero_grad()
        pred = model.forward_t(lr_batch.astype(model.dtype))
        loss = nn.l1_loss(pred, hr_batch.astype(model.dtype))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at step {step}")
        loss.backward()
        lr = lr_at(step, cfg)
        opt.step(lr)
        if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
            log.record(step, value, lr)
        if on_step is not None:
            on_step(step, value, lr)
    return log


class FixedPairSampler:
    """Always returns the same LR/HR pair (overfit harness)."""

    def __init__(self, pair):
        self.pair = pair

    def batch(self, n):
        lr = np.stack([self.pair.lr] * n)
        hr = np.stack([self.pair.hr] * n)
        return lr, hr


def evaluate(model, images, scale, metric_fns):
    """Upscale bicubic-downscaled copies of HR images; per-image metrics."""
    rows = []
    from .data import bicubic_downscale

    for idx, hr in enumerate(images):
        H = hr.shape[0] - hr.shape[0] % scale
        W = hr.shape[1] - hr.shape[1] % scale
        hr_c = hr[:H, :W]
        lr = bicubic_downscale(hr_c, scale)
        with no_grad():
            sr = model.forward(lr[None].astype(model.dtype))[0]
        sr = np.clip(sr.astype(np.float64), 0.0, 1.0)
        rows.append(tuple(fn(sr, hr_c, scale) for fn in metric_fns))
    return rows
