"""Differentiable primitives: convolution, transposed convolution, 2x2 max
pool/unpool, batch norm, dense, ReLU, concat and the losses.

Spatial ops take (C, H, W) or (N, C, H, W) inputs; a 3-d input is treated as
a batch of one and the result keeps the caller's rank.
"""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .backend import K
from .tensor import as_tensor, make_result


def _batched(x):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected (C,H,W) or (N,C,H,W) input, got shape {x.shape}", dim="rank")


def _pad(a, p):
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def conv_output_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _conv_forward(xb, w, stride, padding):
    n, c, h, wd = xb.shape
    cout, _, kh, kw = w.shape
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(wd, kw, stride, padding)
    cols = K.im2col(_pad(xb, padding), kh, kw, stride, ho, wo)
    y = np.matmul(w.reshape(cout, -1), cols).reshape(n, cout, ho, wo)
    return y, cols


def _conv_input_grad(g, w, in_shape, stride, padding):
    n, c, h, wd = in_shape
    cout, _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    dcols = np.matmul(w.reshape(cout, -1).T, g.reshape(n, cout, ho * wo))
    dxp = K.col2im(dcols, c, h + 2 * padding, wd + 2 * padding, kh, kw, stride, ho, wo)
    if padding:
        dxp = dxp[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(dxp)


def _weight_grad(g, cols, w_shape):
    """sum_n g[n] @ cols[n].T, reshaped to the kernel shape."""
    n, cout = g.shape[:2]
    g2 = g.reshape(n, cout, -1)
    return np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w_shape)


def _check_conv(xb, w, stride, padding):
    if w.ndim != 4:
        raise ShapeError(f"kernels must be 4-d, got shape {w.shape}", dim="kernels")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}", dim="stride")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}", dim="padding")
    _, c, h, wd = xb.shape
    if w.shape[2] > h + 2 * padding:
        raise ShapeError(f"kernel height {w.shape[2]} exceeds padded input height {h + 2 * padding}", dim="kH")
    if w.shape[3] > wd + 2 * padding:
        raise ShapeError(f"kernel width {w.shape[3]} exceeds padded input width {wd + 2 * padding}", dim="kW")


def conv2d(x, kernels, bias=None, stride=1, padding=0):
    """2-d cross-correlation. ``kernels`` is (C_out, C_in, kH, kW)."""
    x, w = as_tensor(x), as_tensor(kernels)
    xb, squeeze = _batched(x)
    _check_conv(xb, w.data, stride, padding)
    if w.shape[1] != xb.shape[1]:
        raise ShapeError(f"input has {xb.shape[1]} channels, kernels expect {w.shape[1]}", dim="C_in")
    b = as_tensor(bias if bias is not None else np.zeros(w.shape[0], dtype=w.dtype))
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} != ({w.shape[0]},)", dim="bias")
    y, cols = _conv_forward(xb, w.data, stride, padding)
    y += b.data[None, :, None, None]

    def bw(g):
        gb = np.ascontiguousarray(g[None] if squeeze else g)
        dw = _weight_grad(gb, cols, w.shape) if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dx = _conv_input_grad(gb, w.data, xb.shape, stride, padding)
            dx = dx[0] if squeeze else dx
        return dx, dw, gb.sum(axis=(0, 2, 3))

    return make_result(y[0] if squeeze else y, (x, w, b), bw, "conv2d")


def conv2d_transpose(x, kernels, bias=None, stride=1, padding=0, output_size=None):
    """Adjoint of :func:`conv2d`. ``kernels`` is (C_in, C_out, kH, kW).

    With zero bias, ``<conv2d(u, k), y> == <u, conv2d_transpose(y, k)>``.
    ``output_size`` picks among the ``stride`` sizes that conv2d maps back
    onto the input size; the default is the smallest.
    """
    x, w = as_tensor(x), as_tensor(kernels)
    xb, squeeze = _batched(x)
    if w.ndim != 4:
        raise ShapeError(f"kernels must be 4-d, got shape {w.shape}", dim="kernels")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}", dim="stride")
    n, cin, h, wd = xb.shape
    if w.shape[0] != cin:
        raise ShapeError(f"input has {cin} channels, kernels expect {w.shape[0]}", dim="C_in")
    kh, kw = w.shape[2:]
    if output_size is None:
        output_size = ((h - 1) * stride - 2 * padding + kh, (wd - 1) * stride - 2 * padding + kw)
    hout, wout = map(int, output_size)
    for name, size, k, got in (("H_out", hout, kh, h), ("W_out", wout, kw, wd)):
        if size + 2 * padding < k or conv_output_size(size, k, stride, padding) != got:
            raise ShapeError(
                f"output_size {name}={size} is inconsistent with input {got}, kernel {k}, "
                f"stride {stride}, padding {padding}",
                dim=name,
            )
    cout = w.shape[1]
    b = as_tensor(bias if bias is not None else np.zeros(cout, dtype=w.dtype))
    if b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} != ({cout},)", dim="bias")
    y = _conv_input_grad(xb, w.data, (n, cout, hout, wout), stride, padding)
    y += b.data[None, :, None, None]

    def bw(g):
        gb = np.ascontiguousarray(g[None] if squeeze else g)
        dx = dw = None
        gcols = K.im2col(_pad(gb, padding), kh, kw, stride, h, wd)
        if x.requires_grad:
            dx = np.matmul(w.data.reshape(cin, -1), gcols).reshape(n, cin, h, wd)
            dx = dx[0] if squeeze else dx
        if w.requires_grad:
            dw = _weight_grad(xb, gcols, w.shape)
        return dx, dw, gb.sum(axis=(0, 2, 3))

    return make_result(y[0] if squeeze else y, (x, w, b), bw, "conv2d_transpose")


@dataclass(frozen=True)
class PoolRecord:
    """Argmax positions (flat index into the H*W plane) plus the exact
    pre-pool size, so unpooling can restore odd sizes."""

    indices: np.ndarray = field(repr=False)
    input_size: tuple
    batched: bool = True

    @property
    def pooled_size(self):
        return tuple(self.indices.shape[-2:])

    @property
    def argmax(self):
        """(row, col) pairs of the recorded maxima."""
        return np.stack(np.divmod(self.indices, self.input_size[1]), axis=-1)


def max_pool2d(x, window=2):
    """2x2 max pool, stride 2; a trailing odd row/column is dropped."""
    if window != 2:
        raise ShapeError(f"only 2x2 pooling is supported, got window {window}", dim="window")
    x = as_tensor(x)
    xb, squeeze = _batched(x)
    h, w = xb.shape[2:]
    if h < 2 or w < 2:
        raise ShapeError(f"cannot 2x2-pool a {h}x{w} map", dim="H" if h < 2 else "W")
    out, idx = K.maxpool2x2(np.ascontiguousarray(xb))
    record = PoolRecord(idx, (h, w), not squeeze)

    def bw(g):
        gb = g[None] if squeeze else g
        dx = K.unpool_scatter(np.ascontiguousarray(gb), idx, h, w)
        return (dx[0] if squeeze else dx,)

    return make_result(out[0] if squeeze else out, (x,), bw, "max_pool2d"), record


def max_unpool2d(x, record):
    """Place values at the recorded argmax positions; zeros elsewhere."""
    if record is None:
        raise ShapeError("max_unpool2d needs the pool record of the matching pool", dim="record")
    x = as_tensor(x)
    xb, squeeze = _batched(x)
    idx = record.indices if record.indices.ndim == 4 else record.indices[None]
    if xb.shape != idx.shape:
        raise ShapeError(f"input shape {xb.shape} does not match pooled shape {idx.shape} in record", dim="record")
    h, w = record.input_size
    out = K.unpool_scatter(np.ascontiguousarray(xb), idx, h, w)

    def bw(g):
        gb = g[None] if squeeze else g
        dx = K.unpool_gather(np.ascontiguousarray(gb), idx)
        return (dx[0] if squeeze else dx,)

    return make_result(out[0] if squeeze else out, (x,), bw, "max_unpool2d")


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def fresh(cls, channels, dtype=np.float64):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm(x, gamma, beta, state, train=True, eps=1e-5, momentum=0.1):
    """Per-channel normalization over every axis except 1.

    Train mode uses batch statistics and updates ``state`` in place with an
    exponential moving average (unbiased variance); eval mode uses ``state``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim < 2:
        raise ShapeError(f"batch_norm needs (N, C, ...) input, got shape {x.shape}", dim="rank")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"scale/shift must have shape ({c},)", dim="C")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    m = x.data.size // c
    if train:
        if x.shape[0] < 2:
            raise ShapeError("batch_norm in train mode needs N >= 2", dim="N")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.running_mean *= 1 - momentum
        state.running_mean += momentum * mu
        state.running_var *= 1 - momentum
        state.running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = state.running_mean, state.running_var
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * invstd.reshape(bshape)
    y = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    y = y.astype(x.dtype, copy=False)

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        gx = g * gamma.data.reshape(bshape)
        if train:
            dx = (invstd.reshape(bshape) / m) * (
                m * gx - gx.sum(axis=axes).reshape(bshape) - xhat * (gx * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            dx = gx * invstd.reshape(bshape)
        return dx.astype(x.dtype, copy=False), dgamma, dbeta

    return make_result(y, (x, gamma, beta), bw, "batch_norm")


def dense(x, weights, bias=None):
    x, w = as_tensor(x), as_tensor(weights)
    if w.ndim != 2:
        raise ShapeError(f"weights must be 2-d, got shape {w.shape}", dim="weights")
    vec = x.ndim == 1
    xd = x.data[None] if vec else x.data
    if xd.ndim != 2:
        raise ShapeError(f"dense input must be (N, D), got shape {x.shape}", dim="rank")
    if xd.shape[1] != w.shape[0]:
        raise ShapeError(f"input width {xd.shape[1]} != weight rows {w.shape[0]}", dim="D_in")
    b = as_tensor(bias if bias is not None else np.zeros(w.shape[1], dtype=w.dtype))
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias shape {b.shape} != ({w.shape[1]},)", dim="bias")
    y = xd @ w.data + b.data

    def bw(g):
        gb = g[None] if vec else g
        dx = gb @ w.data.T
        return (dx[0] if vec else dx), xd.T @ gb, gb.sum(axis=0)

    return make_result(y[0] if vec else y, (x, w, b), bw, "dense")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,), "relu")


def concat(tensors, axis=1):
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bw, "concat")


def flatten(x):
    return as_tensor(x).reshape(x.shape[0], -1)


def content_loss(generated, target):
    """Mean over feature maps of the squared L2 distance between maps.

    Inputs are (F, H, W) or (B, F, H, W); each (H, W) slice is one feature
    map, so N = B * F.
    """
    g, t = as_tensor(generated), as_tensor(target)
    if g.shape != t.shape:
        raise ShapeError(f"generated shape {g.shape} != target shape {t.shape}", dim="shape")
    if g.ndim < 2:
        raise ShapeError("content loss needs at least (H, W) maps", dim="rank")
    n = int(np.prod(g.shape[:-2])) if g.ndim > 2 else 1
    diff = g.data - t.data
    loss = np.asarray((diff * diff).sum() / n, dtype=g.dtype)
    return make_result(loss, (g, t), lambda gr: (2 * gr * diff / n, -2 * gr * diff / n), "content_loss")


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy; ``labels`` are integer class ids."""
    z = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"logits {z.shape} and labels {labels.shape} disagree", dim="N")
    p = softmax(z.data)
    n = z.shape[0]
    rows = np.arange(n)
    loss = np.asarray(-np.log(np.clip(p[rows, labels], 1e-300, None)).mean(), dtype=z.dtype)

    def bw(g):
        d = p.copy()
        d[rows, labels] -= 1
        return (g * d / n,)

    return make_result(loss, (z,), bw, "cross_entropy")
