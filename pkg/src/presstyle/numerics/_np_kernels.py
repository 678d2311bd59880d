"""Pure-numpy reference kernels.

Every function here has a twin with the same signature in ``_nb_kernels``.
Layout conventions: images are (N, C, H, W); im2col columns are
(N, C*kh*kw, Ho*Wo), rows in (c, i, j) order to match
``weights.reshape(C_out, -1)``, so a convolution is one batched GEMM.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)


def col2im(cols, c, hp, wp, kh, kw, stride, ho, wo):
    n = cols.shape[0]
    d = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += d[:, :, i, j]
    return out


def maxpool2x2(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    blocks = (
        x[:, :, : 2 * ho, : 2 * wo]
        .reshape(n, c, ho, 2, wo, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, 4)
    )
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    rows = 2 * np.arange(ho)[:, None] + arg // 2
    cols = 2 * np.arange(wo)[None, :] + arg % 2
    return np.ascontiguousarray(out), (rows * w + cols).astype(np.int64)


def unpool_scatter(x, idx, h, w):
    n, c = x.shape[:2]
    out = np.zeros((n, c, h * w), dtype=x.dtype)
    np.put_along_axis(out, idx.reshape(n, c, -1), x.reshape(n, c, -1), axis=2)
    return out.reshape(n, c, h, w)


def unpool_gather(g, idx):
    n, c, h, w = g.shape
    flat = np.take_along_axis(g.reshape(n, c, h * w), idx.reshape(n, c, -1), axis=2)
    return flat.reshape(idx.shape)


def mean_shift_step(modes, data, weights, bandwidth, flat):
    out = np.empty_like(modes)
    # chunked to bound the (chunk, n) distance matrix
    step = max(1, 4_000_000 // max(1, data.shape[0]))
    for s in range(0, modes.shape[0], step):
        m = modes[s : s + step]
        d2 = ((m[:, None, :] - data[None, :, :]) ** 2).sum(-1)
        if flat:
            k = (d2 <= bandwidth * bandwidth).astype(data.dtype)
        else:
            k = np.exp(-0.5 * d2 / (bandwidth * bandwidth))
        k = k * weights[None, :]
        tot = k.sum(1)
        safe = np.where(tot > 0, tot, 1.0)
        out[s : s + step] = np.where(tot[:, None] > 0, (k @ data) / safe[:, None], m)
    return out
