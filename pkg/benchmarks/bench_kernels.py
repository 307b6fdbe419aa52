"""Numba vs numpy timings for the hot kernels, plus one denoiser training step
under each backend (run in a subprocess so the env flag takes effect).

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from stegsan import kernels


def cases(rng):
    x = rng.standard_normal((64, 16, 16, 32)).astype(np.float32)
    cols = kernels.im2col_numpy(x, 3, 3)
    xhat, inv = kernels.groupnorm_fwd_numpy(x.reshape(64, 256, 32), 8, 1e-5)
    _, s = kernels.silu_fwd_numpy(x)
    img = rng.uniform(0, 255, (3, 64, 64))
    k = np.exp(-0.5 * (np.arange(11) - 5) ** 2 / 1.5 ** 2)
    k /= k.sum()
    samples = rng.integers(-32768, 32768, 200_000).astype(np.int16)
    bits = rng.integers(0, 2, 150_000).astype(np.uint8)
    return {
        "col2im 64x16x16x32 k3": ("col2im", (cols, x.shape, 3, 3)),
        "groupnorm fwd": ("groupnorm_fwd", (x.reshape(64, 256, 32), 8, 1e-5)),
        "groupnorm bwd": ("groupnorm_bwd", (x.reshape(64, 256, 32), xhat, inv, 8)),
        "silu fwd": ("silu_fwd", (x,)),
        "silu bwd": ("silu_bwd", (x, x, s)),
        "gaussian filter 3x64x64": ("filter_valid", (img, k)),
        "embed 150k bits": ("embed_bits", (samples, bits, 1)),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    out = {}
    for label, (name, args) in cases(rng).items():
        row = {}
        for backend in ("numpy", "numba"):
            fn = getattr(kernels, f"{name}_{backend}")
            fn(*args)  # compile / warm caches
            row[backend] = min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)) * 1e3
        out[label] = row
    return out


STEP = r"""
import time, numpy as np
from stegsan import backend_name
from stegsan.diffusion import Denoiser, DenoiserConfig
m = Denoiser(DenoiserConfig((3, 16, 16)), seed=0)
x = np.random.default_rng(0).standard_normal((64, 16, 16, 3)).astype(np.float32)
t = np.full(64, 50.0)
def step():
    y = m.forward(x, t); m.backward(y)
step()
best = min((lambda s: (step(), time.perf_counter() - s)[1])(time.perf_counter()) for _ in range(REPEAT))
print(backend_name(), best * 1e3)
"""


def bench_step(repeat):
    out = {}
    for disable in ("0", "1"):
        env = dict(os.environ, STEGSAN_DISABLE_NUMBA=disable)
        r = subprocess.run([sys.executable, "-c", STEP.replace("REPEAT", str(repeat))], env=env,
                           capture_output=True, text=True, check=True)
        name, ms = r.stdout.split()
        out[name] = float(ms)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    a = ap.parse_args()
    res = {"kernels": bench_kernels(a.repeat), "denoiser_step_batch64": bench_step(a.repeat)}
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, row in res["kernels"].items():
        print(f"{label:28s} {row['numpy']:10.3f} {row['numba']:10.3f} {row['numpy'] / row['numba']:8.2f}")
    st = res["denoiser_step_batch64"]
    print(f"{'denoiser fwd+bwd (64)':28s} {st['numpy']:10.1f} {st['numba']:10.1f} {st['numpy'] / st['numba']:8.2f}")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
