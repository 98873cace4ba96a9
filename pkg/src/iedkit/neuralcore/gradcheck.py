"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np


def relative_error(analytic, numeric, floor=1e-7):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(fn, inputs, h=1e-5, max_coords=None, rng=None):
    """Largest relative error between backprop and central differences.

    ``fn`` takes no arguments and returns a scalar Tensor computed from the
    tensors in ``inputs`` (each must require grad and hold float64 data).
    ``max_coords`` limits how many coordinates per input are probed; the
    probed subset is drawn from ``rng``.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise TypeError("grad_check needs double-precision inputs")
        t.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, g in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        gflat = g.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, float(relative_error(gflat[i], numeric)))
    for t in inputs:
        t.grad = None
    return worst
