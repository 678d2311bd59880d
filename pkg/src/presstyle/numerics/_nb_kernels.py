"""Numba twins of the kernels in ``_np_kernels``.

Outer loops run under ``prange`` over the batch (or over modes); each output
element is written by exactly one iteration, so results do not depend on the
thread count.
"""
import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numba  # noqa: E402
import numpy as np  # noqa: E402
from numba import njit, prange  # noqa: E402

from . import _np_kernels  # noqa: E402


@njit(parallel=True, cache=True)
def im2col_loop(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[0], xp.shape[1]
    out = np.empty((n, c * kh * kw, ho * wo), dtype=xp.dtype)
    for b in prange(n):
        k = 0
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    for y in range(ho):
                        row = xp[b, ch, y * stride + i]
                        base = y * wo
                        for x in range(wo):
                            out[b, k, base + x] = row[x * stride + j]
                    k += 1
    return out


# im2col is a pure strided copy and memory bound; numpy's copy beats the loop,
# so both backends share it. The loop stays as a cross-check.
im2col = _np_kernels.im2col


@njit(parallel=True, cache=True)
def col2im(cols, c, hp, wp, kh, kw, stride, ho, wo):
    n = cols.shape[0]
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for b in prange(n):
        k = 0
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    for y in range(ho):
                        base = y * wo
                        for x in range(wo):
                            out[b, ch, y * stride + i, x * stride + j] += cols[b, k, base + x]
                    k += 1
    return out


@njit(parallel=True, cache=True)
def maxpool2x2(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    idx = np.empty((n, c, ho, wo), dtype=np.int64)
    for b in prange(n):
        for ch in range(c):
            for y in range(ho):
                for xx in range(wo):
                    r0, c0 = 2 * y, 2 * xx
                    best = x[b, ch, r0, c0]
                    bi = r0 * w + c0
                    # scan order (0,0) (0,1) (1,0) (1,1); ties keep the first, like argmax
                    for di in range(2):
                        for dj in range(2):
                            v = x[b, ch, r0 + di, c0 + dj]
                            if v > best:
                                best = v
                                bi = (r0 + di) * w + c0 + dj
                    out[b, ch, y, xx] = best
                    idx[b, ch, y, xx] = bi
    return out, idx


@njit(parallel=True, cache=True)
def unpool_scatter(x, idx, h, w):
    n, c, ho, wo = x.shape
    out = np.zeros((n, c, h, w), dtype=x.dtype)
    for b in prange(n):
        for ch in range(c):
            for y in range(ho):
                for xx in range(wo):
                    k = idx[b, ch, y, xx]
                    out[b, ch, k // w, k % w] = x[b, ch, y, xx]
    return out


@njit(parallel=True, cache=True)
def unpool_gather(g, idx):
    n, c, ho, wo = idx.shape
    w = g.shape[3]
    out = np.empty((n, c, ho, wo), dtype=g.dtype)
    for b in prange(n):
        for ch in range(c):
            for y in range(ho):
                for xx in range(wo):
                    k = idx[b, ch, y, xx]
                    out[b, ch, y, xx] = g[b, ch, k // w, k % w]
    return out


@njit(parallel=True, cache=True)
def mean_shift_step(modes, data, weights, bandwidth, flat):
    m, d = modes.shape
    n = data.shape[0]
    out = np.empty_like(modes)
    inv = 1.0 / (bandwidth * bandwidth)
    for a in prange(m):
        acc = np.zeros(d)
        tot = 0.0
        for i in range(n):
            d2 = 0.0
            for k in range(d):
                diff = modes[a, k] - data[i, k]
                d2 += diff * diff
            if flat:
                kv = weights[i] if d2 * inv <= 1.0 else 0.0
            else:
                kv = weights[i] * np.exp(-0.5 * d2 * inv)
            tot += kv
            for k in range(d):
                acc[k] += kv * data[i, k]
        for k in range(d):
            out[a, k] = acc[k] / tot if tot > 0 else modes[a, k]
    return out


def set_threads(n):
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
