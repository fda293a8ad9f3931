"""Time the numba and numpy convolution kernels on the feature-extractor shapes.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both paths are called directly, so the ``VPFC_NUMBA`` flag does not matter here.
"""
import argparse
import statistics
import time

import numpy as np

from vpfc.nn import kernels as K

# (batch, in_channels, H, W, out_channels, kernel, stride): the three conv blocks
# of the default extractor at 32x64 input, batch 25 (5 windows x 5 steps).
SHAPES = [
    (25, 6, 32, 64, 8, 3, 2),
    (25, 8, 16, 32, 16, 3, 2),
    (25, 16, 8, 16, 32, 3, 2),
]


def timeit(fn, repeat):
    fn()  # warm-up, includes numba compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'shape':<28}{'pass':<10}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}{'max diff':>11}")
    for n, c, h, w, o, k, s in SHAPES:
        x = rng.standard_normal((n, c, h, w))
        wt = rng.standard_normal((o, c, k, k))
        b = rng.standard_normal(o)
        pad = k // 2
        y = K.conv2d_forward_numpy(x, wt, b, s, pad)
        dy = rng.standard_normal(y.shape)
        label = f"{n}x{c}x{h}x{w}->{o}"
        fwd = [lambda: (K.conv2d_forward_numpy(x, wt, b, s, pad),),
               lambda: (K.conv2d_forward_numba(x, wt, b, s, pad),)]
        bwd = [lambda: K.conv2d_backward_numpy(x, wt, dy, s, pad), lambda: K.conv2d_backward_numba(x, wt, dy, s, pad)]
        for name, (f_np, f_nb) in (("forward", fwd), ("backward", bwd)):
            diff = max(float(np.max(np.abs(p - q))) for p, q in zip(f_np(), f_nb()))
            t_np, t_nb = timeit(f_np, args.repeat), timeit(f_nb, args.repeat)
            print(f"{label:<28}{name:<10}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
