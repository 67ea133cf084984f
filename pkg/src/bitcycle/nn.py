"""Neural-network ops on autodiff tensors: conv, batch norm, pooling, losses.

Layout is fixed as NCHW for activations and OIHW for convolution weights.
Convolution runs as im2col + GEMM; the backward pass rebuilds the column
matrix instead of keeping it alive, trading a little compute for a much
smaller peak footprint.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _as_tensor, _node


def _im2col(xd: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = xd.shape
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw), oh, ow


def _col2im(dcols: np.ndarray, xshape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = xshape
    hp, wp = h + 2 * padding, w + 2 * padding
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    g = dcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += g[:, :, i, j]
    if padding:
        return dxp[:, :, padding : padding + h, padding : padding + w]
    return dxp


def conv2d(x, weight, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of an NCHW batch with an OIHW kernel."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input and OIHW weight, got {xd.shape} and {wd.shape}")
    n, c, h, w = xd.shape
    o, i, kh, kw = wd.shape
    if c != i:
        raise ValueError(f"conv2d channel mismatch: input {xd.shape} has {c} channels, weight {wd.shape} expects {i}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(f"conv2d kernel {(kh, kw)} does not fit input {xd.shape} with padding {padding}")
    w2 = wd.reshape(o, -1)
    cols, oh, ow = _im2col(xd, kh, kw, stride, padding)
    out = (cols @ w2.T).reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        cols_b, _, _ = _im2col(xd, kh, kw, stride, padding)
        dw = (g2.T @ cols_b).reshape(wd.shape)
        dx = _col2im(g2 @ w2, xd.shape, kh, kw, stride, padding)
        return dx, dw

    return _node(out, (x, weight), backward)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight + bias`` with weight shaped (in, out)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.shape[-1] != weight.data.shape[0]:
        raise ValueError(f"linear shape mismatch: input {x.data.shape} vs weight {weight.data.shape}")
    out = x.data @ weight.data
    if bias is None:
        def backward(g):
            return g @ weight.data.T, x.data.T @ g

        return _node(out, (x, weight), backward)

    bias = _as_tensor(bias)
    out = out + bias.data

    def backward(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _node(out, (x, weight, bias), backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Channel-wise batch normalization over an NCHW or NC batch.

    Training mode normalizes with biased batch statistics and folds an
    unbiased variance estimate into the running buffers in place; eval
    mode normalizes with the running buffers. gamma and beta are the
    learnable scale and shift.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    xd = x.data
    c = xd.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(f"batch_norm affine params must have shape ({c},), got {gamma.data.shape} and {beta.data.shape}")
    axes = (0,) if xd.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if xd.ndim == 2 else (1, c, 1, 1)
    gview = gamma.data.reshape(bshape)

    if training:
        n = xd.size // c
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu.reshape(bshape)) * inv.reshape(bshape)
        out = gview * xhat + beta.data.reshape(bshape)
        rm, rv = running_mean.data, running_var.data
        rm *= 1.0 - momentum
        rm += momentum * mu
        rv *= 1.0 - momentum
        rv += momentum * var * (n / max(n - 1, 1))

        def backward(g):
            dxhat = g * gview
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            dx = inv.reshape(bshape) / n * (n * dxhat - s1 - xhat * s2)
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return _node(out, (x, gamma, beta), backward)

    inv = 1.0 / np.sqrt(running_var.data + eps)
    xhat = (xd - running_mean.data.reshape(bshape)) * inv.reshape(bshape)
    out = gview * xhat + beta.data.reshape(bshape)

    def backward(g):
        return g * gview * inv.reshape(bshape), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(out, (x, gamma, beta), backward)


def _pool_windows(xd: np.ndarray, kh: int, kw: int, stride: int, padding: int, fill: float):
    n, c, h, w = xd.shape
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=fill)
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"pool window {(kh, kw)} larger than padded input {(hp, wp)}")
    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def max_pool2d(x, window: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Max pooling; ties route the gradient to the first (lowest-index) max."""
    x = _as_tensor(x)
    xd = x.data
    kh = kw = window
    s = stride if stride is not None else window
    win = _pool_windows(xd, kh, kw, s, padding, fill=-np.inf)
    n, c, oh, ow = win.shape[:4]
    flat = win.reshape(n, c, oh, ow, kh * kw)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        hp, wp = xd.shape[2] + 2 * padding, xd.shape[3] + 2 * padding
        dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                contrib = g * (idx == i * kw + j)
                dxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += contrib
        if padding:
            return (dxp[:, :, padding : padding + xd.shape[2], padding : padding + xd.shape[3]],)
        return (dxp,)

    return _node(out, (x,), backward)


def avg_pool2d(x, window: int, stride: int | None = None) -> Tensor:
    """Average pooling; backward spreads the gradient uniformly over the window."""
    x = _as_tensor(x)
    xd = x.data
    kh = kw = window
    s = stride if stride is not None else window
    win = _pool_windows(xd, kh, kw, s, 0, fill=0.0)
    n, c, oh, ow = win.shape[:4]
    out = win.mean(axis=(-2, -1))
    scale = 1.0 / (kh * kw)

    def backward(g):
        dx = np.zeros_like(xd)
        gs = g * scale
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i : i + s * oh : s, j : j + s * ow : s] += gs
        return (dx,)

    return _node(out, (x,), backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer class labels under softmax."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    ld = logits.data
    n, k = ld.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch of {n} logits")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k}): min {labels.min()}, max {labels.max()}")
    shifted = ld - ld.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return _node(np.asarray(loss, dtype=ld.dtype), (logits,), backward)
