"""Dense numeric kernels, numba-compiled with a pure-numpy fallback.

Set the environment variable SAFE_FIELD_PURE_NUMPY=1 to force the numpy path
(useful on machines without a working numba install and for benchmarking).
"""

import os

import numpy as np

_FORCED_NUMPY = os.environ.get("SAFE_FIELD_PURE_NUMPY", "0") not in ("", "0")

try:
    if _FORCED_NUMPY:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        # identity decorator so the jit'd names still exist
        def wrap(fn):
            return fn

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap

USING_NUMBA = HAVE_NUMBA


@njit(cache=True)
def _scatter_blur_2d_jit(mass, kernel, s1, s2):
    n1, n2 = mass.shape
    m1, m2 = kernel.shape
    k1 = (m1 - 1) // 2
    k2 = (m2 - 1) // 2
    out = np.zeros((n1, n2))
    for i in range(n1):
        for j in range(n2):
            w = mass[i, j]
            if w == 0.0:
                continue
            for a in range(m1):
                ii = i + s1 + a - k1
                if ii < 0 or ii >= n1:
                    continue
                for b in range(m2):
                    jj = j + s2 + b - k2
                    if jj < 0 or jj >= n2:
                        continue
                    out[ii, jj] += w * kernel[a, b]
    return out


def _scatter_blur_2d_np(mass, kernel, s1, s2):
    n1, n2 = mass.shape
    m1, m2 = kernel.shape
    k1 = (m1 - 1) // 2
    k2 = (m2 - 1) // 2
    out = np.zeros((n1, n2))
    for a in range(m1):
        for b in range(m2):
            w = kernel[a, b]
            if w == 0.0:
                continue
            o1 = s1 + a - k1
            o2 = s2 + b - k2
            src1 = slice(max(0, -o1), min(n1, n1 - o1))
            dst1 = slice(max(0, o1), min(n1, n1 + o1))
            src2 = slice(max(0, -o2), min(n2, n2 - o2))
            dst2 = slice(max(0, o2), min(n2, n2 + o2))
            if src1.start >= src1.stop or src2.start >= src2.stop:
                continue
            out[dst1, dst2] += w * mass[src1, src2]
    return out


def scatter_blur_2d(mass, kernel, shift):
    """Convolve a 2-D mass array with a kernel, then shift by whole cells.

    Mass pushed past the array edge is dropped; the caller renormalizes.
    """
    mass = np.ascontiguousarray(mass, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    s1, s2 = int(shift[0]), int(shift[1])
    if HAVE_NUMBA:
        return _scatter_blur_2d_jit(mass, kernel, s1, s2)
    return _scatter_blur_2d_np(mass, kernel, s1, s2)


@njit(cache=True)
def _mad_batch_jit(U, Y, P):
    m = Y.shape[0]
    d, n_p = U.shape
    out = np.zeros((m, d))
    for s in range(m):
        for q in range(d):
            acc = 0.0
            yq = Y[s, q]
            for i in range(n_p):
                acc += abs(U[q, i] - yq) * P[s, i]
            out[s, q] = acc
    return out


def _mad_batch_np(U, Y, P):
    m, d = Y.shape[0], U.shape[0]
    out = np.empty((m, d))
    for q in range(d):
        # (m, n_p) deviation magnitudes against every sample's center
        dev = np.abs(U[q][None, :] - Y[:, q][:, None])
        out[:, q] = np.sum(dev * P, axis=1)
    return out


def mad_batch(U, Y, P):
    """Mean absolute deviation of each grid axis around per-sample centers.

    U is (d, n_p) cell centers per axis, Y is (m, d) centers, P is (m, n_p)
    distributions; returns (m, d) with out[s, q] = sum_i |U[q,i]-Y[s,q]| P[s,i].
    """
    U = np.ascontiguousarray(U, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    P = np.ascontiguousarray(P, dtype=np.float64)
    if HAVE_NUMBA:
        return _mad_batch_jit(U, Y, P)
    return _mad_batch_np(U, Y, P)
