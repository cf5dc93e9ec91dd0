"""Time the compiled and pure-Python kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--size 32] [--repeat 3]
"""
import argparse
import time

import numpy as np

from attnwnet._kernels import backends


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--classes", type=int, default=4)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    img = rng.random((args.size,) * 3)
    q = rng.dirichlet(np.ones(args.classes), size=img.shape).transpose(3, 0, 1, 2).copy()
    impls = backends()
    cases = {
        "affinity r=4": lambda m: m.affinity_edges(img, 0.05, 4.0, 4, 1e-8),
        "crf_messages r=8": lambda m: m.crf_messages(q, img, 8, 3.0, 3.0, 10.0, 8.0, 0.1),
    }
    print(f"volume {args.size}^3, K={args.classes}, best of {args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}{'max diff':>12}")
    for label, call in cases.items():
        res = {name: best_of(lambda: call(m), args.repeat) for name, m in impls.items()}
        row = f"{label:<18}" + "".join(f"{res[n][0]:>11.3f}s" for n in impls)
        if "cython" in res:
            a, b = res["python"][1], res["cython"][1]
            a, b = (a[2], b[2]) if isinstance(a, tuple) else (a, b)
            row += f"{res['python'][0] / res['cython'][0]:>9.1f}x{np.abs(a - b).max():>12.1e}"
        print(row)


if __name__ == "__main__":
    main()
