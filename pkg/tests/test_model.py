import numpy as np
import pytest

from trisr import autodiff as ad
from trisr import model as M
from trisr import nn

RNG = np.random.default_rng(2718)

TINY2 = M.preset("tiny", scale=2)


def small_cfg(scale=4):
    # one dense + one sparse group, single pair, half-size windows: quick
    return M.ModelConfig(scale=scale, channels=8, heads=2, rect_window=4,
                         tri_square=8, shifts=(0, 2), n_blocks=2,
                         pairs_per_shift=1, interval=2).validate()


def test_presets_validate():
    for name in M.PRESETS:
        for r in (2, 3, 4):
            cfg = M.preset(name, scale=r)
            assert cfg.scale == r
    with pytest.raises(ValueError):
        M.preset("huge")


def test_paper_preset_fields():
    cfg = M.preset("paper")
    assert (cfg.channels, cfg.heads) == (180, 6)
    assert (cfg.rect_window, cfg.tri_square) == (16, 32)
    assert cfg.shifts == (0, 8, 16, 24)
    assert cfg.n_blocks == 6 and cfg.pairs_per_shift == 1
    assert (cfg.alpha, cfg.beta, cfg.overlap_k, cfg.interval) == (0.01, 0.015, 0.5, 2)


def test_config_validation_rejects_bad():
    with pytest.raises(ValueError):
        M.ModelConfig(scale=5).validate()
    with pytest.raises(ValueError):
        M.ModelConfig(tri_square=24).validate()
    with pytest.raises(ValueError):
        M.ModelConfig(channels=30, heads=4).validate()
    with pytest.raises(ValueError):
        M.ModelConfig(shifts=()).validate()


def test_build_deterministic():
    cfg = small_cfg()
    a = M.build(cfg, seed=11)
    b = M.build(cfg, seed=11)
    assert a.param_count == b.param_count
    for name in a.params.names():
        assert np.array_equal(a.params[name].data, b.params[name].data)
    c = M.build(cfg, seed=12)
    assert any(not np.array_equal(a.params[n].data, c.params[n].data)
               for n in a.params.names())


def test_param_count_matches_hand_sum():
    cfg = small_cfg()
    m = M.build(cfg, seed=0)
    # independent route: sum the actual allocated array sizes
    assert m.param_count == sum(t.data.size for t in m.params.tensors())
    from math import prod

    assert m.param_count == sum(prod(s) for _, s, _ in M.param_specs(cfg))


def test_forward_shape_exact_multiple():
    cfg = small_cfg()
    m = M.build(cfg, seed=0)
    x = RNG.random((1, 16, 16, 3)).astype(np.float32)
    assert m.forward(x).shape == (1, 64, 64, 3)


@pytest.mark.parametrize("hw", [(17, 23), (19, 31), (16, 45), (33, 18), (24, 24)])
def test_forward_irregular_sizes(hw):
    cfg = small_cfg()
    m = M.build(cfg, seed=0)
    h, w = hw
    y = m.forward(RNG.random((1, h, w, 3)).astype(np.float32))
    assert y.shape == (1, 4 * h, 4 * w, 3)


@pytest.mark.parametrize("r", [2, 3, 4])
def test_forward_scales(r):
    cfg = small_cfg(scale=r)
    m = M.build(cfg, seed=1)
    y = m.forward(RNG.random((2, 16, 16, 3)).astype(np.float32))
    assert y.shape == (2, 16 * r, 16 * r, 3)


def test_forward_deterministic():
    cfg = small_cfg()
    m = M.build(cfg, seed=0)
    x = RNG.random((1, 16, 16, 3)).astype(np.float32)
    assert np.array_equal(m.forward(x), m.forward(x))


def test_forward_rejects_tiny_input():
    cfg = small_cfg()
    m = M.build(cfg, seed=0)
    with pytest.raises(ValueError):
        m.forward(RNG.random((1, 7, 7, 3)).astype(np.float32))
    with pytest.raises(ValueError):
        m.forward(RNG.random((1, 16, 16, 4)).astype(np.float32))


def test_zero_residual_reduces_to_head_tail():
    cfg = small_cfg()
    m = M.zero_residual(M.build(cfg, seed=3))
    x = RNG.random((1, 16, 16, 3)).astype(np.float32)
    full = m.forward(x)
    with ad.no_grad():
        t = nn.conv2d(ad.tensor(x), m.params["head.w"], m.params["head.b"],
                      cfg.pad_mode)
        for si, (_, r) in enumerate(M._tail_stages(cfg)):
            t = nn.conv2d(t, m.params[f"tail.up{si}.w"], m.params[f"tail.up{si}.b"],
                          cfg.pad_mode)
            t = nn.pixel_shuffle(t, r)
        t = nn.conv2d(t, m.params["tail.out.w"], m.params["tail.out.b"], cfg.pad_mode)
    assert np.array_equal(full, t.data)


def test_cyclic_shift_equivariance():
    cfg = small_cfg()
    m = M.build(cfg, seed=4)
    P = cfg.period  # 16
    x = RNG.random((1, 2 * P, 2 * P, 3)).astype(np.float32)
    y = m.forward(x)
    y_shifted = m.forward(np.roll(x, (P, P), axis=(1, 2)))
    assert np.abs(np.roll(y, (4 * P, 4 * P), axis=(1, 2)) - y_shifted).max() < 1e-5


def test_checkpoint_round_trip_through_model(tmp_path):
    cfg = small_cfg()
    m = M.build(cfg, seed=5)
    path = tmp_path / "m.bin"
    nn.save_checkpoint(path, m.params)
    m2 = M.build(cfg, seed=99)
    nn.load_into(m2.params, path)
    x = RNG.random((1, 16, 16, 3)).astype(np.float32)
    assert np.array_equal(m.forward(x), m2.forward(x))


def test_model_gradient_small():
    cfg = M.ModelConfig(scale=2, channels=4, heads=2, rect_window=4,
                        tri_square=8, shifts=(0, 2), n_blocks=1,
                        pairs_per_shift=1, interval=1).validate()
    m = M.build(cfg, seed=6, dtype=np.float64)
    x = RNG.random((1, 8, 8, 3))
    y = RNG.random((1, 16, 16, 3))

    def f():
        return nn.l1_loss(m.forward_t(x), y)

    err = nn.grad_check(f, m.params, eps=1e-4, n_coords=60,
                        rng=np.random.default_rng(13))
    assert err < 1e-3


# ---------------------------------------------------------------------------
# flat config files


def test_config_text_round_trip():
    cfg = M.preset("tiny", scale=3)
    assert M.config_from_text(M.config_to_text(cfg)) == cfg


def test_config_parsing_features(tmp_path):
    text = """# comment line
scale = 2
channels = 8   # trailing comment
heads = 2
rect_window = 4
tri_square = 8
shifts = 0,2
n_blocks = 1
pairs_per_shift = 1
interval = 1
"""
    cfg = M.config_from_text(text)
    assert cfg.scale == 2 and cfg.shifts == (0, 2)
    with pytest.raises(ValueError):
        M.config_from_text("unknown_key = 3\n")
    with pytest.raises(ValueError):
        M.config_from_text("just some words\n")
    p = tmp_path / "m.cfg"
    M.save_config(p, cfg)
    assert M.load_config(p) == cfg
