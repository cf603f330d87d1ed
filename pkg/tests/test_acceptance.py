"""Acceptance gate: every release criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. The gradient-check and overfit criteria dominate the runtime
(several minutes each); deselect them during development with
`pytest -m "not slow"`.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from trisr import attention as A
from trisr import cli
from trisr import data as D
from trisr import geometry as G
from trisr import metrics as ME
from trisr import model as M
from trisr import nn
from trisr import profiler as P
from trisr import train as T

SEED = 20240601


def _report(criterion, detail):
    print(f"ACCEPTANCE {criterion}: PASS ({detail})")


def test_c1_geometry_round_trips():
    """Exact partition/reverse identity and triangle cardinality, < 10 s."""
    t0 = time.time()
    rng = np.random.default_rng(SEED)
    trips = 0
    for M_ in (4, 8, 16, 32):
        rect_shifts, tri_shifts = G.shift_modes(M_ // 2, M_)
        H = W = 2 * M_
        inputs = [rng.standard_normal((H, W, 3)) for _ in range(7)]
        for fm in inputs:
            for s in (0, M_ // 4):  # rect schedule for window M_: {0, M_/2} too
                for shift in {0, M_ // 2, s}:
                    lay = G.build_layout("rect", H, W, M_, shift)
                    assert np.array_equal(lay.reverse(lay.partition(fm)), fm)
                    trips += 1
            for shift in tri_shifts:
                lay = G.build_layout("tri", H, W, M_, shift)
                assert lay.tokens == M_ * M_ // 4
                assert np.array_equal(lay.reverse(lay.partition(fm)), fm)
                trips += 1
        counts = {k: 0 for k in G.TriangleKind}
        for i in range(M_):
            for j in range(M_):
                counts[G.tri_classify(i, j, M_)] += 1
        assert all(c == M_ * M_ // 4 for c in counts.values())
    elapsed = time.time() - t0
    assert trips >= 50
    assert elapsed < 10.0
    _report("C1 geometry-round-trips", f"{trips} exact round trips in {elapsed:.1f}s")


def test_c2_shift_mode_uniqueness():
    """Tri shifts {0,8,16,24} pairwise distinct; rect s=16 == s=0; exact."""
    maps = {s: G.build_layout("tri", 64, 64, 32, s).forward_map()
            for s in (0, 8, 16, 24)}
    for a in (0, 8, 16, 24):
        for b in (0, 8, 16, 24):
            if a < b:
                assert not np.array_equal(maps[a][:, 0], maps[b][:, 0]), (a, b)
    r0 = G.build_layout("rect", 64, 64, 16, 0).forward_map()
    r16 = G.build_layout("rect", 64, 64, 16, 16).forward_map()
    assert np.array_equal(r0, r16)
    _report("C2 shift-mode-uniqueness",
            "4 tri maps pairwise distinct, rect s=16 identical to s=0 on 64x64")


def test_c3_attention_oracle():
    """Vectorized attention vs naive double-loop oracle, 1e-5, 20 seeds, < 60 s."""
    t0 = time.time()
    worst = 0.0
    runs = 0
    schemes = [("rect", 4, 1), ("tri", 4, 1), ("sparse-rect", 4, 2), ("sparse-tri", 4, 2)]
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        for scheme, M_, interval in schemes:
            H = W = 8
            for masked in (False, True):
                s = 2 if masked else 0
                lay = G.build_layout(scheme, H, W, M_, s, interval)
                p = A.random_attn_params(16, lay.tokens, 2, rng)
                fm = rng.standard_normal((H, W, 16))
                groups = G.TokenGroups(lay.partition(fm), lay)
                mask = G.shift_mask(lay) if masked else None
                fast = A.w_msa(groups, mask, p).data
                ref = A.reference_attention(groups, mask, p).data
                worst = max(worst, float(np.abs(fast - ref).max()))
                runs += 1
    elapsed = time.time() - t0
    assert worst < 1e-5
    assert elapsed < 60.0
    _report("C3 attention-oracle",
            f"{runs} comparisons, worst |diff| {worst:.2e} in {elapsed:.1f}s")


def test_c4_overlap_degeneration():
    """k=0 overlap attention equals plain window attention within 1e-6."""
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(2000 + seed)
        lay = G.build_layout("rect", 8, 8, 4, 0)
        p = A.random_attn_params(16, lay.tokens, 2, rng)
        fm = rng.standard_normal((8, 8, 16))
        o1 = A.ocfa(fm, 4, 0.0, p)
        o2 = lay.reverse(A.w_msa(G.TokenGroups(lay.partition(fm), lay), None, p).data)
        worst = max(worst, float(np.abs(o1 - o2).max()))
    assert worst < 1e-6
    _report("C4 overlap-degeneration", f"worst |diff| {worst:.2e} over 5 seeds")


@pytest.mark.slow
def test_c5_full_model_gradient_check():
    """Tiny-preset model, L1 loss, 500 coords, 64-bit central differences."""
    t0 = time.time()
    cfg = M.preset("tiny", scale=4)
    m = M.build(cfg, seed=SEED, dtype=np.float64)
    rng = np.random.default_rng(SEED)
    x = rng.random((1, 16, 16, 3))
    y = rng.random((1, 64, 64, 3))

    def f():
        return nn.l1_loss(m.forward_t(x), y)

    err = nn.grad_check(f, m.params, eps=1e-4, n_coords=500,
                        rng=np.random.default_rng(SEED + 1))
    elapsed = time.time() - t0
    assert err < 1e-3
    assert elapsed < 600.0
    _report("C5 gradient-check",
            f"max relative error {err:.2e} over 500 coordinates in {elapsed:.0f}s")


def test_c6_complexity_formulas():
    """Exact integer matches against independent exact-rational evaluation."""
    targets = {
        "msa": (P.msa_cost(64, 64, 180), 6_570_639_360),
        "dense": (P.dense_window_cost(64, 64, 180, 16), 908_328_960),
        "sparse": (P.sparse_window_cost(64, 64, 180, 2), 2_040_791_040),
    }
    for name, (got, want) in targets.items():
        assert got == want, name
    hw = Fraction(64 * 64)
    assert targets["msa"][0] == int(4 * hw * 180 ** 2 + 2 * hw ** 2 * 180)
    assert targets["dense"][0] == int(4 * hw * 180 ** 2 + 2 * hw * 16 ** 2 * 180)
    assert targets["sparse"][0] == int(4 * hw * 180 ** 2 + 2 * (hw / 2) ** 2 * 180)
    _report("C6 complexity-formulas",
            "6,570,639,360 / 908,328,960 / 2,040,791,040 all exact")


@pytest.mark.slow
def test_c7_overfit_sanity():
    """2000-step single-patch overfit: PSNR_Y > 40 dB, monotone windows."""
    t0 = time.time()
    cfg = M.preset("tiny", scale=4)
    m = M.build(cfg, seed=SEED)
    hr = D.smooth_texture(7, size=128)
    pair = D.SamplePair(D.bicubic_downscale(hr, 4), hr)
    tc = T.TrainConfig(patch_lr=32, total_steps=2000, base_lr=2e-3, seed=SEED)
    tc.validate(period=cfg.period)
    log = T.train(m, T.FixedPairSampler(pair), tc)
    elapsed = time.time() - t0

    windows = log.window_means(200)
    assert len(windows) == 10
    for k in range(len(windows) - 1):
        assert windows[k + 1] <= windows[k], (k, windows)
    sr = np.clip(m.forward(pair.lr[None].astype(np.float32))[0].astype(np.float64), 0, 1)
    psnr = ME.psnr_y(sr, pair.hr, 4)
    assert psnr > 40.0
    assert elapsed < 1200.0
    _report("C7 overfit-sanity",
            f"train PSNR_Y {psnr:.2f} dB, windows {['%.4f' % w for w in windows]}, "
            f"{elapsed:.0f}s")


def test_c8_metric_correctness():
    """PSNR of a one-level luma offset, SSIM(x,x), independent references."""
    g = np.full((48, 48, 3), 0.4)
    g2 = g + 1.0 / (ME._YR + ME._YG + ME._YB)
    p = ME.psnr_y(g, g2, 4)
    assert abs(p - 48.1308) < 0.01
    rng = np.random.default_rng(SEED)
    img = rng.random((32, 32, 3))
    assert ME.ssim_y(img, img, 4) == pytest.approx(1.0, abs=1e-9)

    # second independent implementations (explicit loops)
    def ref_psnr(sr, hr, r):
        def luma(x):
            return 16.0 + 65.481 * x[..., 0] + 128.553 * x[..., 1] + 24.966 * x[..., 2]

        ys = luma(sr)[r:-r, r:-r]
        yh = luma(hr)[r:-r, r:-r]
        return 10 * math.log10(255.0 ** 2 / np.mean((ys - yh) ** 2))

    ramp = np.linspace(0, 1, 28 * 28 * 3).reshape(28, 28, 3)
    noisy = np.clip(0.5 * ramp + 0.5 * rng.random((28, 28, 3)), 0, 1)
    assert abs(ME.psnr_y(ramp, noisy, 2) - ref_psnr(ramp, noisy, 2)) < 0.01

    half = 5
    gk = np.exp(-((np.arange(11) - half) ** 2) / (2 * 1.5 ** 2))
    w = np.outer(gk, gk)
    w /= w.sum()

    def ref_ssim(sr, hr, r):
        def luma(x):
            return 16.0 + 65.481 * x[..., 0] + 128.553 * x[..., 1] + 24.966 * x[..., 2]

        ys = luma(sr)[r:-r, r:-r]
        yh = luma(hr)[r:-r, r:-r]
        c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
        vals = []
        for i in range(ys.shape[0] - 10):
            for j in range(ys.shape[1] - 10):
                a = ys[i : i + 11, j : j + 11]
                b = yh[i : i + 11, j : j + 11]
                m1, m2 = (w * a).sum(), (w * b).sum()
                v1 = (w * a * a).sum() - m1 * m1
                v2 = (w * b * b).sum() - m2 * m2
                cv = (w * a * b).sum() - m1 * m2
                vals.append(((2 * m1 * m2 + c1) * (2 * cv + c2)) /
                            ((m1 ** 2 + m2 ** 2 + c1) * (v1 + v2 + c2)))
        return float(np.mean(vals))

    assert abs(ME.ssim_y(ramp, noisy, 2) - ref_ssim(ramp, noisy, 2)) < 1e-3
    _report("C8 metric-correctness",
            f"uniform offset {p:.4f} dB, references agree within 0.01 dB / 0.001")


def test_c9_shapes_and_equivariance():
    """Exactly scale x dims on 10 irregular sizes; period-shift equivariance."""
    sizes = [(17, 23), (19, 31), (16, 45), (33, 18), (21, 21),
             (25, 40), (47, 16), (18, 27), (39, 22), (29, 35)]
    models = {r: M.build(M.preset("tiny", scale=r), seed=SEED) for r in (2, 3, 4)}
    rng = np.random.default_rng(SEED)
    for idx, (h, w) in enumerate(sizes):
        r = (2, 3, 4)[idx % 3]
        y = models[r].forward(rng.random((1, h, w, 3)).astype(np.float32))
        assert y.shape == (1, r * h, r * w, 3), (h, w, r)

    m = models[4]
    P_ = m.cfg.period
    x = rng.random((1, 2 * P_, 2 * P_, 3)).astype(np.float32)
    y1 = m.forward(x)
    y2 = m.forward(np.roll(x, (P_, P_), axis=(1, 2)))
    diff = float(np.abs(np.roll(y1, (4 * P_, 4 * P_), axis=(1, 2)) - y2).max())
    assert diff < 1e-5
    _report("C9 shapes-and-equivariance",
            f"10 irregular sizes exact, period-shift diff {diff:.2e}")


def test_c10_determinism(tmp_path):
    """Identical seeds give bit-identical checkpoints and logs, twice."""
    outs = []
    for run in ("a", "b"):
        out = tmp_path / f"{run}.bin"
        code = cli.main(["train", "--preset", "tiny", "--steps", "8",
                         "--seed", "123", "--out", str(out)])
        assert code == 0
        outs.append(out)
    a, b = outs
    assert a.read_bytes() == b.read_bytes()
    assert (str(a) + ".log.csv") != (str(b) + ".log.csv")
    log_a = open(str(a) + ".log.csv", "rb").read()
    log_b = open(str(b) + ".log.csv", "rb").read()
    assert log_a == log_b
    assert a.with_suffix(".bin.cfg").read_bytes() == b.with_suffix(".bin.cfg").read_bytes()
    _report("C10 determinism",
            f"two 8-step runs byte-identical ({len(a.read_bytes())} byte checkpoints)")
