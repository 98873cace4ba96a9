"""Reverse-mode autodiff tensor."""

from __future__ import annotations

import contextlib
import threading

import numpy as np

_mode = threading.local()


@contextlib.contextmanager
def no_grad():
    """Build no backward graph inside the block (per thread)."""
    previous = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = previous


def grad_enabled():
    return getattr(_mode, "enabled", True)


class Tensor:
    """An array plus an optional gradient slot and the closure that produced it.

    Nodes are created by the functions in :mod:`iedkit.neuralcore.functional`.
    When no input requires a gradient the closure is dropped, so inference
    builds no graph at all.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents) if requires_grad else ()
        self._backward = backward if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Propagate gradients from this node to every reachable leaf."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        # Interior nodes start from zero every call; leaves keep accumulating.
        for node in order:
            if node._backward is not None:
                node.grad = None
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


class Parameter(Tensor):
    """A named leaf tensor that the optimizer may update.

    ``trainable`` doubles as ``requires_grad``: frozen parameters take no part
    in the graph, so they never receive gradients or updates.
    """

    __slots__ = ("name",)

    def __init__(self, name, data, trainable=True):
        super().__init__(np.array(data, copy=True), requires_grad=trainable)
        self.name = name

    @property
    def trainable(self):
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag):
        self.requires_grad = bool(flag)
        if not flag:
            self.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))
