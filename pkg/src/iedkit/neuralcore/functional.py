"""Differentiable operations on batched tensors.

Layouts: convolutional ops take ``(batch, channels, length)``; recurrent ops
take ``(batch, time, features)``; dense ops take ``(batch, features)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, grad_enabled

BCE_EPS = 1e-7


class ShapeMismatchError(ValueError):
    pass


def _node(data, parents, backward):
    requires = grad_enabled() and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, parents=parents, backward=backward)


def _push(t, g):
    if t.requires_grad:
        t.accumulate(g)


def add(*tensors):
    """Elementwise sum of same-shape tensors."""
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeMismatchError(f"cannot add shapes {shape} and {t.shape}")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out = out + t.data

    def backward(g):
        for t in tensors:
            _push(t, g)

    return _node(out, tensors, backward)


def weighted_sum(x, weights):
    """Scalar sum(x * weights) with constant weights; used to scalarize outputs."""
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=x.dtype)
    if weights.shape != x.shape:
        raise ShapeMismatchError(f"weights {weights.shape} do not match {x.shape}")

    def backward(g):
        _push(x, g * weights)

    return _node(np.sum(x.data * weights), (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    in_shape = x.shape

    def backward(g):
        _push(x, g.reshape(in_shape))

    return _node(x.data.reshape(shape), (x,), backward)


def transpose(x, axes):
    x = as_tensor(x)
    inverse = np.argsort(axes)

    def backward(g):
        _push(x, np.transpose(g, inverse))

    return _node(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.accumulate(g[tuple(index)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def conv1d_same(x, weight, bias):
    """Cross-correlation with (K-1)/2 zero padding on each side.

    x: (N, Cin, L); weight: (Cout, Cin, K) with K odd; bias: (Cout,).
    Returns (N, Cout, L).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeMismatchError("conv1d_same expects x (N, Cin, L) and weight (Cout, Cin, K)")
    n, cin, length = x.shape
    cout, wcin, k = weight.shape
    if wcin != cin:
        raise ShapeMismatchError(f"weight expects {wcin} input channels, got {cin}")
    if k % 2 == 0:
        raise ShapeMismatchError(f"kernel size must be odd, got {k}")
    if bias.shape != (cout,):
        raise ShapeMismatchError(f"bias shape {bias.shape} != ({cout},)")
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    # cols[n, l, c, j] = xp[n, c, l + j]
    cols = sliding_window_view(xp, k, axis=2).transpose(0, 2, 1, 3).reshape(n, length, cin * k)
    wmat = weight.data.reshape(cout, cin * k)
    out = (cols @ wmat.T).transpose(0, 2, 1) + bias.data[None, :, None]

    def backward(g):
        gt = g.transpose(0, 2, 1)  # (N, L, Cout)
        if weight.requires_grad:
            gw = np.tensordot(gt, cols, axes=([0, 1], [0, 1]))
            weight.accumulate(gw.reshape(cout, cin, k))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = (gt @ wmat).reshape(n, length, cin, k)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, :, j:j + length] += gcols[:, :, :, j].transpose(0, 2, 1)
            x.accumulate(gxp[:, :, pad:pad + length])

    return _node(np.ascontiguousarray(out), (x, weight, bias), backward)


def maxpool1d(x, pool):
    """Non-overlapping max pooling along the last axis; the remainder is dropped."""
    x = as_tensor(x)
    if pool < 1:
        raise ShapeMismatchError(f"pool must be >= 1, got {pool}")
    *lead, length = x.shape
    if length < pool:
        raise ShapeMismatchError(f"length {length} shorter than pool {pool}")
    if pool == 1:
        return x
    out_len = length // pool
    windows = x.data[..., :out_len * pool].reshape(*lead, out_len, pool)
    arg = windows.argmax(axis=-1)  # first index on ties
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[..., :out_len * pool] = gw.reshape(*lead, out_len * pool)
        x.accumulate(gx)

    return _node(out, (x,), backward)


def upsample_repeat(x, factor):
    """Nearest-neighbour upsampling along the last axis."""
    x = as_tensor(x)
    if factor < 1:
        raise ShapeMismatchError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    *lead, length = x.shape

    def backward(g):
        x.accumulate(g.reshape(*lead, length, factor).sum(axis=-1))

    return _node(np.repeat(x.data, factor, axis=-1), (x,), backward)


def dense(x, weight, bias):
    """Affine map x @ W + b. x: (N, F); weight: (F, H); bias: (H,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ShapeMismatchError(
            f"dense: x {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )

    def backward(g):
        if weight.requires_grad:
            weight.accumulate(x.data.T @ g)
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0))
        if x.requires_grad:
            x.accumulate(g @ weight.data.T)

    return _node(x.data @ weight.data + bias.data, (x, weight, bias), backward)


def _sigmoid(z):
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        x.accumulate(g * (1.0 - y * y))

    return _node(y, (x,), backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        x.accumulate(g * mask)

    return _node(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), backward)


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.data)

    def backward(g):
        x.accumulate(g * y * (1.0 - y))

    return _node(y, (x,), backward)


_ACTIVATIONS = {"tanh": tanh, "relu": relu, "sigmoid": sigmoid}


def activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def global_avg_pool(x, axis=-1):
    """Mean over one axis (time)."""
    x = as_tensor(x)
    axis = axis % x.data.ndim
    length = x.shape[axis]

    def backward(g):
        x.accumulate(np.broadcast_to(np.expand_dims(g, axis) / length, x.shape))

    return _node(x.data.mean(axis=axis), (x,), backward)


def dropout(x, rate, training, rng=None):
    """Inverted dropout; the identity outside training or when rate is 0."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def backward(g):
        x.accumulate(g * mask)

    return _node(x.data * mask, (x,), backward)


def lstm(x, kernel, recurrent, bias, reverse=False):
    """One LSTM direction over the full sequence, returning every step.

    x: (N, T, F); kernel: (F, 4H); recurrent: (H, 4H); bias: (4H,).
    Gate blocks are ordered input, forget, candidate, output. Initial h and c
    are zero. With ``reverse`` the sequence is consumed from the end and the
    outputs are re-aligned with the input time axis.
    """
    x, kernel, recurrent, bias = (as_tensor(t) for t in (x, kernel, recurrent, bias))
    n, steps, features = x.shape
    hidden = recurrent.shape[0]
    if kernel.shape != (features, 4 * hidden) or recurrent.shape != (hidden, 4 * hidden) \
            or bias.shape != (4 * hidden,):
        raise ShapeMismatchError(
            f"lstm: x {x.shape}, kernel {kernel.shape}, recurrent {recurrent.shape}, "
            f"bias {bias.shape}"
        )
    xs = x.data[:, ::-1] if reverse else x.data
    dtype = x.dtype
    # Input projections for all steps at once: (T, N, 4H).
    zx = np.einsum("ntf,fg->tng", xs, kernel.data) + bias.data
    gates = np.empty((steps, n, 4 * hidden), dtype=dtype)
    cells = np.empty((steps + 1, n, hidden), dtype=dtype)
    hs = np.empty((steps + 1, n, hidden), dtype=dtype)
    cells[0] = 0.0
    hs[0] = 0.0
    i_, f_ = slice(0, hidden), slice(hidden, 2 * hidden)
    g_, o_ = slice(2 * hidden, 3 * hidden), slice(3 * hidden, 4 * hidden)
    u = recurrent.data
    for t in range(steps):
        z = zx[t] + hs[t] @ u
        act = gates[t]
        act[:, i_] = _sigmoid(z[:, i_])
        act[:, f_] = _sigmoid(z[:, f_])
        act[:, g_] = np.tanh(z[:, g_])
        act[:, o_] = _sigmoid(z[:, o_])
        cells[t + 1] = act[:, f_] * cells[t] + act[:, i_] * act[:, g_]
        hs[t + 1] = act[:, o_] * np.tanh(cells[t + 1])
    out = hs[1:].transpose(1, 0, 2)
    if reverse:
        out = out[:, ::-1]
    out = np.ascontiguousarray(out)

    def backward(g):
        gs = g[:, ::-1] if reverse else g
        gs = gs.transpose(1, 0, 2)  # (T, N, H)
        dz = np.empty_like(gates)
        dh = np.zeros((n, hidden), dtype=dtype)
        dc = np.zeros((n, hidden), dtype=dtype)
        for t in range(steps - 1, -1, -1):
            act = gates[t]
            i, f, cand, o = act[:, i_], act[:, f_], act[:, g_], act[:, o_]
            tc = np.tanh(cells[t + 1])
            dh = dh + gs[t]
            dc = dc + dh * o * (1.0 - tc * tc)
            d = dz[t]
            d[:, o_] = dh * tc * o * (1.0 - o)
            d[:, i_] = dc * cand * i * (1.0 - i)
            d[:, f_] = dc * cells[t] * f * (1.0 - f)
            d[:, g_] = dc * i * (1.0 - cand * cand)
            dc = dc * f
            dh = d @ u.T
        if kernel.requires_grad:
            kernel.accumulate(np.einsum("ntf,tng->fg", xs, dz))
        if recurrent.requires_grad:
            recurrent.accumulate(np.einsum("tnh,tng->hg", hs[:-1], dz))
        if bias.requires_grad:
            bias.accumulate(dz.sum(axis=(0, 1)))
        if x.requires_grad:
            gx = np.einsum("tng,fg->ntf", dz, kernel.data)
            x.accumulate(gx[:, ::-1] if reverse else gx)

    return _node(out, (x, kernel, recurrent, bias), backward)


def bce_loss(p, y):
    """Mean binary cross-entropy with probabilities clipped to [1e-7, 1 - 1e-7]."""
    p = as_tensor(p)
    y = np.asarray(y, dtype=p.dtype).reshape(p.shape)
    clipped = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    losses = -(y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped))
    count = p.data.size
    inside = (p.data >= BCE_EPS) & (p.data <= 1.0 - BCE_EPS)

    def backward(g):
        dp = (-(y / clipped) + (1.0 - y) / (1.0 - clipped)) / count
        p.accumulate(g * dp * inside)

    return _node(losses.mean(), (p,), backward)
