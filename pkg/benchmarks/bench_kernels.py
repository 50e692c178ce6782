"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python benchmarks/bench_kernels.py --steps 5  # plus whole training steps per backend

Shapes follow the desk configuration (batch 2, 32x32 images, 8x8 latents).
Every pair of outputs is compared before timing.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from peerstyle import _kernels as K

TRAIN_SNIPPET = """
import time
from peerstyle.config import TrainConfig
from peerstyle.training import Trainer
from peerstyle import _kernels
t = Trainer(TrainConfig.desk())
t.train_step()  # warm-up (numba compile or cache load)
start = time.perf_counter()
for _ in range({steps}):
    t.train_step()
print(_kernels.BACKEND, (time.perf_counter() - start) / {steps})
"""


def cases(rng):
    xp = rng.normal(size=(2, 16, 38, 38))  # 7x7 stem on a padded 32x32 image
    ho = wo = 32
    cols = rng.normal(size=(2, 16 * 49, ho * wo))
    query, target = rng.normal(size=(64, 16)), rng.normal(size=(64, 16))
    values = rng.normal(size=(2, 16, 64))
    idx = rng.integers(0, 64, size=(2, 64, 3))
    grad = rng.normal(size=(2, 16, 64, 3))
    return {
        "im2col 7x7": (K.im2col_numpy, K.im2col_numba, (xp, 7, 7, 1, ho, wo)),
        "col2im 7x7": (K.col2im_numpy, K.col2im_numba, (cols, 16, 38, 38, 7, 7, 1, ho, wo)),
        "knn 64x64 d16 k3": (K.knn_numpy, K.knn_numba, (query, target, 3)),
        "gather": (K.gather_numpy, K.gather_numba, (values, idx)),
        "scatter": (K.scatter_numpy, K.scatter_numba, (grad, idx, 64)),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b) or np.allclose(a, b, rtol=0, atol=1e-12)


def bench_kernels(repeat):
    if not hasattr(K, "im2col_numba"):
        print("numba is not installed; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}  match")
    for name, (slow, fast, args) in cases(rng).items():
        fast(*args)  # compile
        match = same(slow(*args), fast(*args))
        t_np = min(timeit.repeat(lambda: slow(*args), number=1, repeat=repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fast(*args), number=1, repeat=repeat)) * 1e3
        print(f"{name:<20}{t_np:>11.3f}{t_nb:>11.3f}{t_np / t_nb:>8.1f}x  {'yes' if match else 'NO'}")
    return 0


def bench_steps(steps):
    print(f"\nwhole training step, desk config, {steps} steps after warm-up")
    for flag in ("0", "1"):
        env = dict(os.environ, PEERSTYLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET.format(steps=steps)],
                             env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:<6} {float(seconds) * 1e3:9.1f} ms/step")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=0, help="also time this many whole training steps per backend")
    args = ap.parse_args(argv)
    status = bench_kernels(args.repeat)
    if args.steps:
        bench_steps(args.steps)
    return status


if __name__ == "__main__":
    sys.exit(main())
