#!/usr/bin/env python3
"""Benchmark the numba kernel backend against the pure-numpy fallback.

Times the hot kernels at shapes the model actually runs. Select what the
package uses at import time with TRISR_KERNELS=numba|numpy|auto.

Findings on a 2-core box: the jitted depthwise conv wins; the dense convs
lose to the BLAS shift-add formulation once channel counts grow, which is
why `auto` resolution is worth checking per machine before long runs.
"""

import argparse
import time

import numpy as np

from trisr import kernels


def timeit(fn, *args, repeat=7):
    fn(*args)  # warm (and trigger jit compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def bench_case(name, nb_fn, np_fn, args, rows):
    t_nb = timeit(nb_fn, *args)
    t_np = timeit(np_fn, *args)
    rows.append((name, t_nb, t_np, t_np / t_nb))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    ap.add_argument("--batch", type=int, default=1)
    args = ap.parse_args()
    dt = np.dtype(args.dtype)
    rng = np.random.default_rng(0)

    try:
        nb = kernels.load_backend("numba")
    except ImportError:
        print("numba not importable; nothing to compare")
        return
    npb = kernels.load_backend("numpy")

    rows = []
    B = args.batch
    for (H, Ci, Co) in [(32, 32, 32), (64, 32, 128), (64, 180, 180)]:
        x = rng.standard_normal((B, H, H, Ci)).astype(dt)
        w = rng.standard_normal((3, 3, Ci, Co)).astype(dt)
        b = np.zeros(Co, dt)
        gy = rng.standard_normal((B, H, H, Co)).astype(dt)
        bench_case(f"conv3x3 fwd {H}x{H} {Ci}->{Co}",
                   nb.conv2d_forward, npb.conv2d_forward, (x, w, b, "wrap"), rows)
        bench_case(f"conv3x3 bwd {H}x{H} {Ci}->{Co}",
                   nb.conv2d_backward, npb.conv2d_backward, (x, w, gy, "wrap"), rows)

    for (H, C) in [(32, 32), (64, 180)]:
        x = rng.standard_normal((B, H, H, C)).astype(dt)
        w = rng.standard_normal((3, 3, C)).astype(dt)
        b = np.zeros(C, dt)
        gy = rng.standard_normal((B, H, H, C)).astype(dt)
        bench_case(f"dwconv fwd {H}x{H} C={C}",
                   nb.dwconv_forward, npb.dwconv_forward, (x, w, b, "wrap"), rows)
        bench_case(f"dwconv bwd {H}x{H} C={C}",
                   nb.dwconv_backward, npb.dwconv_backward, (x, w, gy, "wrap"), rows)

    idx = rng.integers(0, 1024, size=2304).astype(np.int64)
    src = rng.standard_normal((2304, 64)).astype(dt)

    def sc_nb():
        nb.scatter_add_rows(np.zeros((1024, 64), dt), idx, src)

    def sc_np():
        npb.scatter_add_rows(np.zeros((1024, 64), dt), idx, src)

    bench_case("scatter_add 2304->1024 x64", sc_nb, sc_np, (), rows)

    print(f"\nactive backend: {kernels.BACKEND}   dtype: {args.dtype}   batch: {B}\n")
    name_w = max(len(r[0]) for r in rows)
    print(f"{'kernel'.ljust(name_w)}  {'numba ms':>9}  {'numpy ms':>9}  {'numpy/numba':>11}")
    for name, t_nb, t_np, ratio in rows:
        print(f"{name.ljust(name_w)}  {t_nb:9.3f}  {t_np:9.3f}  {ratio:11.2f}x")


if __name__ == "__main__":
    main()
