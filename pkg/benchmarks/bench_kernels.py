#!/usr/bin/env python3
"""numba vs numpy backends for the conv/pool kernels.

Times each kernel on the shapes an autoencoder/classifier step at 64x64
actually produces, checks the two backends agree bit for bit, then times a
few full autoencoder training steps under each backend (the backend is
chosen at import time, so that part runs in subprocesses).

    python benchmarks/bench_kernels.py [--repeat N] [--steps N]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from semiadv.nncore import kernels

CASES = [
    # name, padded input shape (N, C, H+2, W+2), out_h, out_w
    ("enc1 im2col", (32, 4, 66, 66), 64, 64),
    ("dec1 im2col", (32, 12, 18, 18), 16, 16),
    ("dec2 im2col", (32, 64, 34, 34), 32, 32),
    ("clf1 im2col", (32, 1, 66, 66), 64, 64),
]
POOLS = [("clf1 maxpool", (32, 32, 64, 64)), ("clf3 maxpool", (32, 128, 16, 16))]

STEP_SNIPPET = """
import time, numpy as np
from semiadv import models
from semiadv.losses import loss_JD
from semiadv.nncore import Adam, kernels
from semiadv.prototypes import prototypes_from_means
rng = np.random.default_rng(0)
ps = prototypes_from_means(rng.uniform(size=(1, 64, 64)), rng.uniform(size=(1, 64, 64)), 1, 1)
ae = models.build_autoencoder(0)
opt = Adam(ae)
x = rng.uniform(size=(32, 1, 64, 64)).astype(np.float32)
y = rng.integers(0, 2, 32)
def step():
    ae.zero_grad()
    loss_JD(x, models.autoencode(ae, x, ps, y, "SM")).backward()
    opt.step()
step()
t = time.perf_counter()
for _ in range({steps}):
    step()
print(kernels.backend_name(), (time.perf_counter() - t) / {steps})
"""


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_kernels(repeat):
    if not hasattr(kernels, "_im2col_nb"):
        print("numba not importable; only the numpy backend exists")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>9}  same")
    print("-" * 62)
    for name, shape, oh, ow in CASES:
        xpad = rng.normal(size=shape).astype(np.float32)
        c = shape[1]
        kernels._im2col_nb(xpad, 3, 3, oh, ow)  # compile
        a = np.ascontiguousarray(kernels.im2col_numpy(xpad, 3, 3, oh, ow))
        b = kernels._im2col_nb(xpad, 3, 3, oh, ow)
        t_np = best_of(lambda: kernels.im2col_numpy(xpad, 3, 3, oh, ow), repeat)
        t_nb = best_of(lambda: kernels._im2col_nb(xpad, 3, 3, oh, ow), repeat)
        print(f"{name:<22}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>8.1f}x  {a.tobytes() == b.tobytes()}")

        cols = a
        kernels._col2im_nb(cols, c, 3, 3, oh, ow)
        a2 = np.ascontiguousarray(kernels.col2im_numpy(cols, c, 3, 3, oh, ow))
        b2 = kernels._col2im_nb(cols, c, 3, 3, oh, ow)
        t_np = best_of(lambda: np.ascontiguousarray(kernels.col2im_numpy(cols, c, 3, 3, oh, ow)), repeat)
        t_nb = best_of(lambda: kernels._col2im_nb(cols, c, 3, 3, oh, ow), repeat)
        label = name.replace("im2col", "col2im")
        print(f"{label:<22}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>8.1f}x  {a2.tobytes() == b2.tobytes()}")

    for name, shape in POOLS:
        x = rng.normal(size=shape).astype(np.float32)
        kernels._maxpool_nb(x)
        (o1, i1), (o2, i2) = kernels.maxpool2x2_numpy(x), kernels._maxpool_nb(x)
        t_np = best_of(lambda: kernels.maxpool2x2_numpy(x), repeat)
        t_nb = best_of(lambda: kernels._maxpool_nb(x), repeat)
        same = o1.tobytes() == np.ascontiguousarray(o2).tobytes() and np.array_equal(i1, i2)
        print(f"{name:<22}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>8.1f}x  {same}")
        g = rng.normal(size=o1.shape).astype(np.float32)
        kernels._maxpool_backward_nb(g, i2)
        t_np = best_of(lambda: kernels.maxpool2x2_backward_numpy(g, i1), repeat)
        t_nb = best_of(lambda: kernels._maxpool_backward_nb(g, i2), repeat)
        b1 = np.ascontiguousarray(kernels.maxpool2x2_backward_numpy(g, i1)).tobytes()
        same = b1 == kernels._maxpool_backward_nb(g, i2).tobytes()
        label = name + " bwd"
        print(f"{label:<22}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>8.1f}x  {same}")


def bench_steps(steps):
    print(f"\nautoencoder training step, batch 32 at 64x64 (mean of {steps})")
    for flag in ("0", "1"):
        env = dict(os.environ, SEMIADV_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(steps=steps)],
                             env=env, capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        print(f"  {backend:<8}{float(secs) * 1e3:>10.1f} ms/step")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=3)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_steps(args.steps)


if __name__ == "__main__":
    main()
