"""Command-line tool: train / infer / check / profile / viz.

Exit codes: 0 success, 2 usage or argument error, 3 data/checkpoint error,
4 invariant-check failure.
"""

import argparse
import colorsys
import os
import sys

import numpy as np

from . import data, geometry, metrics, model, nn, profiler, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CHECK = 4


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip() != ""]


def _resolve_config(args):
    if getattr(args, "config", None):
        cfg = model.load_config(args.config)
    else:
        cfg = model.preset(args.preset, scale=args.scale)
    overrides = {}
    if getattr(args, "scale", None) and args.config:
        overrides["scale"] = args.scale
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides).validate()
    return cfg


# ---------------------------------------------------------------------------
# train


def cmd_train(args):
    cfg = _resolve_config(args)
    tc = train.TrainConfig(patch_lr=args.patch, batch_size=args.batch,
                           total_steps=args.steps, base_lr=args.lr,
                           seed=args.seed, log_every=args.log_every)
    tc.validate(period=cfg.period)
    if args.data:
        if not os.path.isdir(args.data):
            print(f"error: data directory {args.data!r} does not exist", file=sys.stderr)
            return EXIT_USAGE
        try:
            images, _ = data.load_folder(args.data)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
    else:
        size = max(args.patch * cfg.scale, 128)
        images = data.synthetic_images(args.seed, count=8, size=size)
    sampler = data.PatchSampler(images, tc.patch_lr, cfg.scale, seed=tc.seed)
    m = model.build(cfg, seed=args.seed)
    print(f"training: {m.param_count} parameters, {tc.total_steps} steps")
    try:
        log = train.train(m, sampler, tc)
    except train.TrainingDiverged as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_DATA
    nn.save_checkpoint(args.out, m.params)
    model.save_config(args.out + ".cfg", cfg)
    with open(args.out + ".log.csv", "w") as fh:
        fh.write(log.to_csv())
    final = log.steps[-1]
    print(f"final step {final[0]}: loss {final[1]:.6f}, lr {final[2]:.2e}")
    print(f"wrote {args.out}, {args.out}.cfg, {args.out}.log.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer


def _infer_one(m, in_path, out_path, ref_path):
    lr = data.load_png(in_path)
    sr = np.clip(m.forward(lr[None].astype(m.dtype))[0].astype(np.float64), 0, 1)
    data.save_png(out_path, sr)
    row = None
    if ref_path:
        hr = data.load_png(ref_path)
        if hr.shape != sr.shape:
            raise ValueError(f"reference {hr.shape} does not match output {sr.shape}")
        row = (metrics.psnr_y(sr, hr, m.cfg.scale), metrics.ssim_y(sr, hr, m.cfg.scale))
    return row


def cmd_infer(args):
    cfg_path = args.config or args.checkpoint + ".cfg"
    try:
        cfg = model.load_config(cfg_path)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config {cfg_path!r}: {exc}", file=sys.stderr)
        return EXIT_DATA
    m = model.build(cfg, seed=0)
    try:
        nn.load_into(m.params, args.checkpoint)
    except nn.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA

    try:
        if os.path.isdir(args.input):
            os.makedirs(args.output, exist_ok=True)
            names = sorted(n for n in os.listdir(args.input) if n.lower().endswith(".png"))
            if not names:
                print(f"error: no .png files in {args.input!r}", file=sys.stderr)
                return EXIT_DATA
            rows = []
            for n in names:
                ref = os.path.join(args.ref, n) if args.ref else None
                row = _infer_one(m, os.path.join(args.input, n),
                                 os.path.join(args.output, n), ref)
                if row:
                    rows.append((n, *row))
                    print(f"{n}: psnr_y {row[0]:.4f} dB, ssim_y {row[1]:.5f}")
            if rows and args.report:
                with open(args.report, "w") as fh:
                    fh.write("image,psnr_y,ssim_y\n")
                    for n, p, s in rows:
                        fh.write(f"{n},{p:.6f},{s:.6f}\n")
        else:
            row = _infer_one(m, args.input, args.output, args.ref)
            if row:
                print(f"psnr_y {row[0]:.4f} dB, ssim_y {row[1]:.5f}")
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------------------
# check


def _run_checks(fast, sabotage, seed):
    rng = np.random.default_rng(seed)
    results = []

    def record(name, fn):
        try:
            fn()
            results.append((name, True, ""))
        except AssertionError as exc:
            results.append((name, False, str(exc)))
        except Exception as exc:  # noqa: BLE001 - report, do not crash the table
            results.append((name, False, f"{type(exc).__name__}: {exc}"))

    def geometry_roundtrip():
        for scheme, M, interval in [("rect", 8, 1), ("tri", 8, 1),
                                    ("sparse-rect", 4, 2), ("sparse-tri", 4, 2)]:
            H = W = M * interval * 2
            for s in (0, M // 2):
                lay = geometry.build_layout(scheme, H, W, M, s, interval)
                fm = rng.standard_normal((H, W, 3))
                assert np.array_equal(lay.reverse(lay.partition(fm)), fm), scheme

    def triangle_cardinality():
        for M in (4, 8, 16, 32):
            offs = geometry._triangle_offsets(M)
            assert offs.shape == (4, M * M // 4), M
            assert len(np.unique(offs)) == M * M, M

    def shift_uniqueness():
        maps = [geometry.build_layout("tri", 64, 64, 32, s).forward_map()[:, 0]
                for s in (0, 8, 16, 24)]
        for a in range(4):
            for b in range(a + 1, 4):
                assert not np.array_equal(maps[a], maps[b]), (a, b)
        r0 = geometry.build_layout("rect", 64, 64, 16, 0).forward_map()
        r16 = geometry.build_layout("rect", 64, 64, 16, 16).forward_map()
        assert np.array_equal(r0, r16)

    def mask_soundness():
        for s in (0, 2, 4):
            lay = geometry.build_layout("rect", 16, 16, 8, s)
            m = geometry.shift_mask(lay)
            vals = set(np.unique(m).tolist())
            assert vals <= {0.0, float(np.float32(geometry.MASK_NEG))}, vals
            if s == 0:
                assert not m.any()

    def attention_oracle():
        from . import attention

        for scheme, M, interval in [("rect", 4, 1), ("tri", 4, 1),
                                    ("sparse-rect", 4, 2), ("sparse-tri", 4, 2)]:
            lay = geometry.build_layout(scheme, 8, 8, M, 2, interval)
            p = attention.random_attn_params(8, lay.tokens, 2, rng)
            fm = rng.standard_normal((8, 8, 8))
            groups = geometry.TokenGroups(lay.partition(fm), lay)
            mask = geometry.shift_mask(lay)
            fast_out = attention.w_msa(groups, mask, p).data
            ref = attention.reference_attention(groups, mask, p).data
            assert np.abs(fast_out - ref).max() < 1e-5, scheme

    def overlap_k0():
        from . import attention

        lay = geometry.build_layout("rect", 8, 8, 4, 0)
        p = attention.random_attn_params(8, lay.tokens, 2, rng)
        fm = rng.standard_normal((8, 8, 8))
        o1 = attention.ocfa(fm, 4, 0.0, p)
        o2 = lay.reverse(attention.w_msa(geometry.TokenGroups(lay.partition(fm), lay),
                                         None, p).data)
        assert np.abs(o1 - o2).max() < 1e-6

    def kernel_backends():
        from . import kernels

        try:
            nb = kernels.load_backend("numba")
        except ImportError:
            return
        npb = kernels.load_backend("numpy")
        x = rng.standard_normal((2, 8, 8, 4))
        w = rng.standard_normal((3, 3, 4, 6))
        assert np.allclose(nb.conv2d_forward(x, w, None, "wrap"),
                           npb.conv2d_forward(x, w, None, "wrap"), atol=1e-10)

    def metrics_reference():
        g = np.full((24, 24, 3), 0.4)
        g2 = g + 1.0 / (metrics._YR + metrics._YG + metrics._YB)
        assert abs(metrics.psnr_y(g, g2, 2) - 48.1308) < 0.01
        assert abs(metrics.ssim_y(g, g, 2) - 1.0) < 1e-9

    def gradients():
        err = _gradient_probe(sabotage=(sabotage == "grad"))
        assert err < 1e-3, f"max relative error {err:.3e}"

    record("geometry_roundtrip", geometry_roundtrip)
    record("triangle_cardinality", triangle_cardinality)
    record("shift_uniqueness", shift_uniqueness)
    record("mask_soundness", mask_soundness)
    record("attention_oracle", attention_oracle)
    record("overlap_k0", overlap_k0)
    record("kernel_backends", kernel_backends)
    record("metrics_reference", metrics_reference)
    if not fast:
        record("gradients", gradients)
    return results


def _gradient_probe(sabotage=False):
    from . import autodiff as ad
    from . import blocks

    rng = np.random.default_rng(11)
    ucfg = blocks.UnitConfig(channels=8, heads=2, rect_window=4, tri_square=8,
                             shift=2, mlp_ratio=2, pad_mode="wrap")
    params = blocks.build_unit_params(ucfg, seed=3, kind="rect", dtype=np.float64)
    fm = rng.standard_normal((1, 8, 8, 8))

    def f():
        out = blocks.rect_unit_t(ad.Tensor(fm.reshape(1, 64, 8)), 8, 8,
                                 ucfg, params, "unit")
        return ad.mean_all(ad.absolute(out))

    return nn.grad_check(f, params, eps=1e-4, n_coords=120,
                         rng=np.random.default_rng(5), sabotage=sabotage)


def cmd_check(args):
    results = _run_checks(args.fast, args.sabotage, args.seed)
    width = max(len(n) for n, _, _ in results)
    ok = True
    for name, passed, detail in results:
        status = "PASS" if passed else "FAIL"
        ok &= passed
        line = f"{status}  {name.ljust(width)}"
        if detail:
            line += f"  {detail}"
        print(line)
    print(f"{sum(p for _, p, _ in results)}/{len(results)} checks passed")
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------------------
# viz


def _group_palette(n):
    cols = []
    for g in range(n):
        h = (g * 0.61803398875) % 1.0
        s = 0.55 + 0.3 * ((g // 7) % 2)
        v = 0.75 + 0.2 * ((g // 3) % 2)
        cols.append(tuple(int(255 * c) for c in colorsys.hsv_to_rgb(h, s, v)))
    return np.array(cols, dtype=np.uint8)


def layout_png_array(layout, cell=8):
    """Group-id map rendered as an RGB image, `cell` pixels per map pixel."""
    fwd = layout.forward_map()[:, 0].reshape(layout.height, layout.width)
    pal = _group_palette(layout.groups)
    img = pal[fwd]
    return np.kron(img, np.ones((cell, cell, 1), dtype=np.uint8))


def layout_text_dump(layout):
    """One line `i j g t` per pixel, row-major."""
    fwd = layout.forward_map()
    W = layout.width
    lines = [f"{p // W} {p % W} {g} {t}" for p, (g, t) in enumerate(fwd)]
    return "\n".join(lines) + "\n"


def cmd_viz(args):
    from PIL import Image

    os.makedirs(args.out_dir, exist_ok=True)
    written = []
    for s in args.shifts:
        try:
            lay = geometry.build_layout(args.scheme, args.height, args.width,
                                        args.square, s, args.interval)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        stem = f"layout_{args.scheme}_M{args.square}_s{s}"
        png = os.path.join(args.out_dir, stem + ".png")
        txt = os.path.join(args.out_dir, stem + ".txt")
        Image.fromarray(layout_png_array(lay)).save(png)
        with open(txt, "w") as fh:
            fh.write(layout_text_dump(lay))
        written += [png, txt]
    print("\n".join(written))
    return EXIT_OK


# ---------------------------------------------------------------------------
# profile


def cmd_profile(args):
    try:
        rows = profiler.cost_reports(args.heights, args.widths, args.channels,
                                     args.windows, args.intervals)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    lines = [profiler.CSV_HEADER] + [r.csv_row() for r in rows]
    if args.model_preset:
        cfg = model.preset(args.model_preset, scale=args.scale)
        params, macs = profiler.model_macs(cfg, args.model_hw, args.model_hw)
        print(f"model {args.model_preset} x{cfg.scale} at {args.model_hw}^2: "
              f"{params} params, {macs} macs")
        lines.append(f"model_forward,{args.model_hw},{args.model_hw},"
                     f"{cfg.channels},,,{macs}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out} ({len(lines) - 1} rows)")
    else:
        print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="trisr",
                                 description="Triangular-window super-resolution tool")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a PNG folder or synthetic textures")
    p.add_argument("--preset", default="tiny", choices=sorted(model.PRESETS))
    p.add_argument("--config", help="model config file (flat key = value)")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--data", help="folder of HR PNGs (default: synthetic textures)")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--patch", type=int, default=32, help="LR patch size")
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=1)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="upscale PNG file(s) with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="model config (default: <checkpoint>.cfg)")
    p.add_argument("--input", required=True, help="PNG file or folder")
    p.add_argument("--output", required=True, help="output PNG file or folder")
    p.add_argument("--ref", help="reference PNG file or folder for metrics")
    p.add_argument("--report", help="metrics CSV path (folder mode)")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("check", help="run the invariant suite and print a table")
    p.add_argument("--fast", action="store_true", help="skip gradient checks")
    p.add_argument("--sabotage", choices=["grad"], help="inject a fault (self-test)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("viz", help="render window-partition maps as PNG + text")
    p.add_argument("--scheme", default="tri", choices=list(geometry.SCHEMES))
    p.add_argument("--square", type=int, default=32, help="window/square size M")
    p.add_argument("--shifts", type=_int_list, default=[0])
    p.add_argument("--interval", type=int, default=1)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_viz)

    p = sub.add_parser("profile", help="evaluate attention-cost formulas, write CSV")
    p.add_argument("--heights", type=_int_list, default=[])
    p.add_argument("--widths", type=_int_list, default=[])
    p.add_argument("--channels", type=_int_list, default=[])
    p.add_argument("--windows", type=_int_list, default=[],
                   help="window token sides L for the dense formula")
    p.add_argument("--intervals", type=_int_list, default=[],
                   help="interval sizes S for the sparse formula")
    p.add_argument("--model-preset", choices=sorted(model.PRESETS))
    p.add_argument("--model-hw", type=int, default=64)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_profile)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        code = args.fn(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except nn.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    return code


if __name__ == "__main__":
    sys.exit(main())
