"""Timing comparison of the compiled kernels against the numpy fallback.

Run as: python benchmarks/bench_kernels.py [repeats]
Shapes match the desk backbone (56x56 sketch, stages 32/64/128, stride 2).
"""

import sys
import time

import numpy as np

from sketchreid import kernels_py
from sketchreid.diffcore import pad2d

try:
    from sketchreid import _kernels
except ImportError:
    _kernels = None

BACKBONE_SHAPES = [  # (c_in, side, c_out)
    (1, 56, 32),
    (32, 28, 64),
    (64, 14, 128),
]


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_conv(mod, repeats):
    rng = np.random.default_rng(0)
    rows = []
    for c_in, side, c_out in BACKBONE_SHAPES:
        x = rng.random((c_in, side, side))
        k = rng.standard_normal((c_out, c_in, 3, 3)) * 0.1
        xp = pad2d(x, 1)
        out_side = (side - 1) // 2 + 1
        up = rng.random((c_out, out_side, out_side))
        fwd = timeit(lambda: mod.conv2d_forward(xp, k, 2), repeats)
        bwd = timeit(lambda: mod.conv2d_backward(xp, k, up, 2), repeats)
        flops = 2 * c_out * out_side * out_side * c_in * 9
        rows.append((f"conv {c_in:>3}->{c_out:<3} {side}x{side}",
                     fwd, bwd, flops / fwd / 1e9))
    return rows


def bench_bilinear(mod, repeats):
    rng = np.random.default_rng(1)
    u = rng.random((56, 56))
    xt = rng.uniform(-10, 66, size=(56, 56))
    yt = rng.uniform(-10, 66, size=(56, 56))
    up = rng.random((56, 56))
    fwd = timeit(lambda: mod.bilinear_forward(u, xt, yt), repeats)
    bwd = timeit(lambda: mod.bilinear_coord_grad(u, xt, yt, up), repeats)
    return [("bilinear 56x56 grid", fwd, bwd, float("nan"))]


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 30
    backends = [("numpy", kernels_py)]
    if _kernels is not None:
        backends.insert(0, ("compiled", _kernels))
    else:
        print("compiled extension not built; numpy fallback only\n")
    results = {}
    for name, mod in backends:
        results[name] = bench_conv(mod, repeats) + bench_bilinear(mod, repeats)
    header = f"{'kernel':<24}"
    for name, _ in backends:
        header += f"{name + ' fwd':>14}{name + ' bwd':>14}"
    if len(backends) == 2:
        header += f"{'speedup fwd':>13}{'speedup bwd':>13}"
    print(header)
    n_rows = len(results[backends[0][0]])
    total = {name: [0.0, 0.0] for name, _ in backends}
    for i in range(n_rows):
        label = results[backends[0][0]][i][0]
        line = f"{label:<24}"
        for name, _ in backends:
            _, fwd, bwd, _ = results[name][i]
            total[name][0] += fwd
            total[name][1] += bwd
            line += f"{fwd * 1e3:>11.3f} ms{bwd * 1e3:>11.3f} ms"
        if len(backends) == 2:
            _, cf, cb, _ = results["compiled"][i]
            _, pf, pb, _ = results["numpy"][i]
            line += f"{pf / cf:>12.2f}x{pb / cb:>12.2f}x"
        print(line)
    print()
    for name, _ in backends:
        f, b = total[name]
        print(f"{name}: one image, one stream fwd {f * 1e3:.2f} ms, "
              f"fwd+bwd {(f + b) * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
