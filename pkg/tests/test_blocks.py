import numpy as np
import pytest

from trisr import autodiff as ad
from trisr import blocks, geometry, nn
from trisr.autodiff import Tensor

RNG = np.random.default_rng(31337)

UCFG = blocks.UnitConfig(channels=8, heads=2, rect_window=4, tri_square=8,
                         shift=0, mlp_ratio=2)


def _zero_residual_unit(params):
    for name in params.names():
        if name.endswith(("attn.wo", "attn.bo", "mlp.w2", "mlp.b2",
                          "ca.pw2.w", "ca.pw2.b")):
            params[name].data[...] = 0


def test_channel_block_shape_and_zero_input():
    params = blocks.build_unit_params(UCFG, seed=0, dtype=np.float64)
    fm = RNG.standard_normal((2, 8, 8, 8))
    out = blocks.channel_block(fm, params, "unit.ca")
    assert out.shape == fm.shape
    # biases start at zero, so zero input stays zero through both convs and
    # the squeeze-excitation scaling
    zero = blocks.channel_block(np.zeros_like(fm), params, "unit.ca")
    assert np.abs(zero).max() == 0.0


def test_channel_block_gradients():
    params = blocks.build_unit_params(UCFG, seed=1, dtype=np.float64)
    # inflate the weights: at the 0.02-sigma init the stacked convs emit
    # values of order 1e-6, where an |.|-based objective sits on its kinks
    # and central differences are meaningless
    rng = np.random.default_rng(99)
    for name in params.names():
        if ".ca." in name and name.endswith(".w"):
            params[name].data[...] = rng.standard_normal(params[name].data.shape) * 0.4
    fm = RNG.standard_normal((1, 8, 8, 8))

    def f():
        out = blocks.channel_attention_t(Tensor(fm), params, "unit.ca", "zeros")
        return ad.mean_all(ad.mul(out, out))

    err = nn.grad_check(f, params, eps=1e-4, n_coords=100,
                        rng=np.random.default_rng(8))
    assert err < 1e-3


@pytest.mark.parametrize("kind", ["rect", "tri"])
def test_unit_shape_preserved(kind):
    cfg = blocks.UnitConfig(channels=16, heads=2, rect_window=8, tri_square=16,
                            shift=4, mlp_ratio=2)
    params = blocks.build_unit_params(cfg, seed=2, kind=kind, dtype=np.float64)
    fm = RNG.standard_normal((1, 32, 32, 16))
    fn = blocks.rect_unit if kind == "rect" else blocks.tri_unit
    assert fn(fm, cfg, params).shape == fm.shape


@pytest.mark.parametrize("kind", ["rect", "tri"])
def test_unit_identity_at_zero_residual_init(kind):
    params = blocks.build_unit_params(UCFG, seed=3, kind=kind, dtype=np.float64)
    _zero_residual_unit(params)
    fm = RNG.standard_normal((1, 8, 8, 8))
    fn = blocks.rect_unit if kind == "rect" else blocks.tri_unit
    assert np.array_equal(fn(fm, UCFG, params), fm)


def test_alpha_zero_excises_channel_branch():
    # alpha = 0 must equal a run whose channel-attention weights are trashed
    cfg0 = blocks.UnitConfig(channels=8, heads=2, rect_window=4, tri_square=8,
                             alpha=0.0, mlp_ratio=2)
    params = blocks.build_unit_params(cfg0, seed=4, dtype=np.float64)
    fm = RNG.standard_normal((1, 8, 8, 8))
    base = blocks.rect_unit(fm, cfg0, params)
    for name in params.names():
        if ".ca." in name:
            params[name].data[...] = RNG.standard_normal(params[name].data.shape)
    again = blocks.rect_unit(fm, cfg0, params)
    assert np.array_equal(base, again)


def test_alpha_scales_only_channel_branch():
    cfg_a = blocks.UnitConfig(channels=8, heads=2, rect_window=4, tri_square=8,
                              alpha=0.02, mlp_ratio=2)
    params = blocks.build_unit_params(cfg_a, seed=5, dtype=np.float64)
    fm = RNG.standard_normal((1, 8, 8, 8))
    out_a = blocks.rect_unit(fm, cfg_a, params)
    out_b = blocks.rect_unit(fm, blocks.UnitConfig(
        channels=8, heads=2, rect_window=4, tri_square=8, alpha=0.07,
        mlp_ratio=2), params)
    assert not np.array_equal(out_a, out_b)


def test_rect_and_tri_layouts_structurally_different():
    cfg = blocks.UnitConfig(channels=8, heads=2, rect_window=8, tri_square=16)
    rect = geometry.build_layout("rect", 32, 32, cfg.rect_window, 0)
    tri = geometry.build_layout("tri", 32, 32, cfg.tri_square, 0)
    rect_groups = {frozenset(row.tolist()) for row in rect.source}
    tri_groups = {frozenset(row.tolist()) for row in tri.source}
    assert rect_groups != tri_groups
    assert not rect_groups & tri_groups


def _model_like_params(cfg, shifts, n_pairs, seed, dtype=np.float64, prefix="blk"):
    rng = np.random.default_rng(seed)
    params = nn.Params()
    t_rect = cfg.rect_window ** 2
    t_tri = cfg.tri_square ** 2 // 4
    R0, _ = geometry.overlap_params(cfg.rect_window, 0.5)
    specs = []
    for j in range(len(shifts)):
        for p in range(n_pairs):
            specs += blocks.unit_param_specs(f"{prefix}.hyb{j}.pair{p}.rect",
                                             cfg.channels, t_rect, cfg.mlp_ratio)
            specs += blocks.unit_param_specs(f"{prefix}.hyb{j}.pair{p}.tri",
                                             cfg.channels, t_tri, cfg.mlp_ratio)
    specs += blocks.overlap_param_specs(f"{prefix}.overlap", cfg.channels,
                                        t_rect, R0 * R0, cfg.mlp_ratio)
    specs += [(f"{prefix}.conv.w", (3, 3, cfg.channels, cfg.channels), "proj"),
              (f"{prefix}.conv.b", (cfg.channels,), "zeros")]
    for name, shape, init in specs:
        params.add(name, nn.init_array(init, shape, rng, dtype))
    return params


def test_hybrid_block_is_pairs_of_units():
    cfg = blocks.UnitConfig(channels=8, heads=2, rect_window=4, tri_square=8,
                            shift=2, mlp_ratio=2)
    params = _model_like_params(cfg, [2], 1, seed=6)
    fm = RNG.standard_normal((1, 8, 8, 8))
    x = Tensor(fm.reshape(1, 64, 8))
    with ad.no_grad():
        chained = blocks.hybrid_block_t(x, 8, 8, cfg, params, "blk.hyb0", 1).data
        step1 = blocks.rect_unit_t(x, 8, 8, cfg, params, "blk.hyb0.pair0.rect")
        step2 = blocks.tri_unit_t(step1, 8, 8, cfg, params, "blk.hyb0.pair0.tri").data
    assert np.array_equal(chained, step2)


def test_window_group_residual_at_zero_conv():
    cfg = blocks.UnitConfig(channels=8, heads=2, rect_window=4, tri_square=8,
                            mlp_ratio=2, pad_mode="wrap")
    shifts = [0, 2]
    params = _model_like_params(cfg, shifts, 1, seed=7)
    _zero_residual_unit(params)
    params["blk.conv.w"].data[...] = 0
    params["blk.conv.b"].data[...] = 0
    fm = RNG.standard_normal((1, 16, 16, 8))
    x = Tensor(fm.reshape(1, 256, 8))
    with ad.no_grad():
        out = blocks.window_group_t(x, 16, 16, cfg, params, "blk", shifts, 1, 0.5).data
    assert np.array_equal(out, fm.reshape(1, 256, 8))


def test_dense_vs_sparse_group_constant_and_random():
    dense_cfg = blocks.UnitConfig(channels=8, heads=2, rect_window=4, tri_square=8,
                                  interval=1, mlp_ratio=2, pad_mode="wrap")
    sparse_cfg = blocks.UnitConfig(channels=8, heads=2, rect_window=4, tri_square=8,
                                   interval=2, mlp_ratio=2, pad_mode="wrap")
    shifts = [0, 2]
    params = _model_like_params(dense_cfg, shifts, 1, seed=8)
    const = np.full((1, 16, 16, 8), 0.37)
    rand = RNG.standard_normal((1, 16, 16, 8))
    with ad.no_grad():
        run = lambda cfg, fm: blocks.window_group_t(  # noqa: E731
            Tensor(fm.reshape(1, 256, 8)), 16, 16, cfg, params, "blk",
            shifts, 1, 0.5).data
        d_const, s_const = run(dense_cfg, const), run(sparse_cfg, const)
        d_rand, s_rand = run(dense_cfg, rand), run(sparse_cfg, rand)
    assert np.abs(d_const - s_const).max() < 1e-10
    assert np.abs(d_rand - s_rand).max() > 1e-6


def test_shift_schedule_covers_all_pixels():
    # every pixel appears in exactly one group of every layout in the chain
    for scheme, M in [("rect", 4), ("tri", 8)]:
        for s in (0, 2, 4, 6):
            lay = geometry.build_layout(scheme, 16, 16, M, s)
            assert np.array_equal(np.sort(lay.source_flat), np.arange(256))


def test_window_group_gradients():
    cfg = blocks.UnitConfig(channels=4, heads=2, rect_window=4, tri_square=8,
                            mlp_ratio=2, pad_mode="wrap")
    params = _model_like_params(cfg, [2], 1, seed=9)
    fm = RNG.standard_normal((1, 8, 8, 4))

    def f():
        out = blocks.window_group_t(Tensor(fm.reshape(1, 64, 4)), 8, 8, cfg,
                                    params, "blk", [2], 1, 0.5)
        return ad.mean_all(ad.absolute(out))

    err = nn.grad_check(f, params, eps=1e-4, n_coords=120,
                        rng=np.random.default_rng(12))
    assert err < 1e-3


def test_unit_config_validation():
    with pytest.raises(ValueError):
        blocks.UnitConfig(channels=8, heads=2, rect_window=4, tri_square=10)
    with pytest.raises(ValueError):
        blocks.UnitConfig(channels=9, heads=2, rect_window=4, tri_square=8)
    with pytest.raises(ValueError):
        blocks.UnitConfig(channels=8, heads=2, rect_window=4, tri_square=8,
                          alpha=-0.1)
