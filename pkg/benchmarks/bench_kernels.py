"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 64] [--threads 1]

Prints one row per kernel (median seconds per call for each backend and the
speedup), then a full forward/backward step of the transfer network.
"""
import argparse
import statistics
import time

import numpy as np

from presstyle.model import NetConfig, TransferNet
from presstyle.numerics import _nb_kernels, _np_kernels, backend
from presstyle.numerics import backward as run_backward


def timeit(fn, repeat):
    fn()  # warm-up, includes numba compilation on first use
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def kernel_cases(batch, rng):
    x = rng.normal(size=(batch, 30, 82, 30)).astype(np.float32)
    ho, wo = 80, 28
    cols = _np_kernels.im2col(x, 3, 3, 1, ho, wo)
    feat = rng.normal(size=(batch, 16, 80, 28)).astype(np.float32)
    pooled, idx = _np_kernels.maxpool2x2(feat)
    pts = rng.normal(size=(1500, 12))
    w = np.ones(len(pts))
    return {
        "im2col 30ch 80x28": lambda k: k.im2col(x, 3, 3, 1, ho, wo),
        "im2col loop 30ch 80x28": lambda k: getattr(k, "im2col_loop", k.im2col)(x, 3, 3, 1, ho, wo),
        "col2im 30ch 80x28": lambda k: k.col2im(cols, 30, 82, 30, 3, 3, 1, ho, wo),
        "maxpool2x2 16ch": lambda k: k.maxpool2x2(feat),
        "unpool scatter": lambda k: k.unpool_scatter(pooled, idx, 80, 28),
        "unpool gather": lambda k: k.unpool_gather(feat, idx),
        "mean-shift step 1500x12": lambda k: k.mean_shift_step(pts, pts, w, 1.0, False),
    }


def train_step(batch, rng):
    net = TransferNet(NetConfig(widths=(8, 16, 32)))
    params = list(net.trainable().values())
    xs = rng.uniform(0, 5, size=(batch, 30, 80, 28)).astype(np.float32)
    a = np.zeros((batch, 3), np.float32)

    def step():
        for p in params:
            p.grad = None
        run_backward(net.loss(xs, a, a, xs), params)

    return step


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    backend.set_threads(args.threads)
    rng = np.random.default_rng(0)
    mods = {"numpy": _np_kernels, "numba": _nb_kernels}
    print(f"{'kernel':<26}{'numpy s':>11}{'numba s':>11}{'speedup':>9}")
    for name, fn in kernel_cases(args.batch, rng).items():
        t = {b: timeit(lambda: fn(m), args.repeat) for b, m in mods.items()}
        print(f"{name:<26}{t['numpy']:>11.5f}{t['numba']:>11.5f}{t['numpy'] / t['numba']:>8.2f}x")
    step = train_step(args.batch, rng)
    t = {}
    for b in mods:
        with backend.using(b):
            t[b] = timeit(step, max(1, args.repeat // 2))
    print(f"{'train step (8,16,32)':<26}{t['numpy']:>11.5f}{t['numba']:>11.5f}{t['numpy'] / t['numba']:>8.2f}x")


if __name__ == "__main__":
    main()
