"""Parameter-holding layers built on the functional ops."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Parameter


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float64):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base class: a named group of parameters."""

    def __init__(self, name):
        self.name = name
        self.params = []

    def _param(self, suffix, data):
        p = Parameter(f"{self.name}.{suffix}", data)
        self.params.append(p)
        return p

    def count(self):
        return sum(p.size for p in self.params)


class Conv1D(Layer):
    def __init__(self, name, in_channels, filters, kernel_size, activation, rng,
                 dtype=np.float64):
        super().__init__(name)
        self.activation = activation
        self.weight = self._param("weight", glorot_uniform(
            rng, (filters, in_channels, kernel_size),
            in_channels * kernel_size, filters * kernel_size, dtype))
        self.bias = self._param("bias", np.zeros(filters, dtype=dtype))

    def __call__(self, x):
        return F.activation(F.conv1d_same(x, self.weight, self.bias), self.activation)


class Dense(Layer):
    def __init__(self, name, in_features, units, activation, rng, dtype=np.float64):
        super().__init__(name)
        self.activation = activation
        self.weight = self._param("weight", glorot_uniform(
            rng, (in_features, units), in_features, units, dtype))
        self.bias = self._param("bias", np.zeros(units, dtype=dtype))

    def __call__(self, x):
        out = F.dense(x, self.weight, self.bias)
        return out if self.activation is None else F.activation(out, self.activation)


class LSTM(Layer):
    """Sequence-to-sequence LSTM over (N, T, F) inputs.

    ``direction`` is ``"forward"``, ``"backward"`` or ``"bidirectional"``; the
    bidirectional form runs an independent parameter set each way and
    concatenates the two outputs per step (forward features first).
    """

    def __init__(self, name, in_features, units, direction, rng, dtype=np.float64):
        super().__init__(name)
        if direction not in ("forward", "backward", "bidirectional"):
            raise ValueError(f"unknown direction {direction!r}")
        self.units = units
        self.direction = direction
        if direction == "bidirectional":
            runs = (("fw", False), ("bw", True))
        else:
            runs = (("", direction == "backward"),)
        self._runs = []
        for tag, reverse in runs:
            prefix = f"{tag}." if tag else ""
            kernel = self._param(prefix + "kernel", glorot_uniform(
                rng, (in_features, 4 * units), in_features, 4 * units, dtype))
            recurrent = self._param(prefix + "recurrent", glorot_uniform(
                rng, (units, 4 * units), units, 4 * units, dtype))
            bias = np.zeros(4 * units, dtype=dtype)
            bias[units:2 * units] = 1.0  # forget gate
            self._runs.append((kernel, recurrent, self._param(prefix + "bias", bias), reverse))

    @property
    def out_features(self):
        return self.units * len(self._runs)

    def __call__(self, x):
        outs = [F.lstm(x, k, u, b, reverse=r) for k, u, b, r in self._runs]
        return outs[0] if len(outs) == 1 else F.concat(outs, axis=-1)
