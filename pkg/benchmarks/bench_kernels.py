"""Time the numba kernels against the pure-numpy fallbacks.

The production dispatch is fixed at import time (SAFE_FIELD_PURE_NUMPY=1
forces the fallback); here both implementations are called directly so one
process can compare them on identical inputs.
"""

import argparse
import time

import numpy as np

from safefield._kernels import (USING_NUMBA, _mad_batch_jit, _mad_batch_np,
                                _scatter_blur_2d_jit, _scatter_blur_2d_np)
from safefield.measurement import GridSpec, gaussian_kernel


def timeit(func, iters):
    start = time.perf_counter()
    for _ in range(iters):
        out = func()
    return (time.perf_counter() - start) / iters * 1000.0, out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=60, help="grid points per axis")
    ap.add_argument("--batch", type=int, default=64, help="PMFs per mad call")
    ap.add_argument("--iters", type=int, default=200)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    spec = GridSpec((args.n, args.n), (40.0, 40.0))

    mass = rng.random(spec.n)
    mass /= mass.sum()
    kernel = gaussian_kernel(spec, 4.0)
    shift = (2, -1)

    U = spec.points().T.copy()
    Y = rng.uniform(-20.0, 20.0, size=(args.batch, 2))
    P = rng.random((args.batch, spec.n_points))
    P /= P.sum(axis=1, keepdims=True)

    # warm up the JIT before timing
    _scatter_blur_2d_jit(mass, kernel, *shift)
    _mad_batch_jit(U, Y, P)

    methods = {
        "scatter_blur numba": lambda: _scatter_blur_2d_jit(mass, kernel, *shift),
        "scatter_blur numpy": lambda: _scatter_blur_2d_np(mass, kernel, *shift),
        "mad_batch numba": lambda: _mad_batch_jit(U, Y, P),
        "mad_batch numpy": lambda: _mad_batch_np(U, Y, P),
    }

    print("numba active: %s" % USING_NUMBA)
    outs = {}
    for name, func in methods.items():
        ms, outs[name] = timeit(func, args.iters)
        print(f"{name}: {ms:.3f} ms")

    blur_gap = np.max(np.abs(outs["scatter_blur numba"] - outs["scatter_blur numpy"]))
    mad_gap = np.max(np.abs(outs["mad_batch numba"] - outs["mad_batch numpy"]))
    print(f"max |blur difference|: {blur_gap:.3e}")
    print(f"max |mad difference|: {mad_gap:.3e}")


if __name__ == "__main__":
    main()
