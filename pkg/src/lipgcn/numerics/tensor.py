"""Dense float64 tensor with tape-based reverse-mode gradients.

Every operation in :mod:`lipgcn.numerics.ops` that touches a tensor with
``requires_grad=True`` attaches a :class:`TapeNode` to its output. A
:class:`GradTape` is the ordered record of those nodes reachable from one
root tensor; replaying it in reverse populates ``grad`` buffers.

Gradients ACCUMULATE at leaf tensors across ``backward`` calls (call
``zero_grad`` / set ``grad = None`` between steps); non-leaf grads are
cleared at the start of each replay so a repeated ``backward`` on the same
loss exactly doubles the leaf gradients. Tensors and their tape are confined
to the thread that ran the forward pass.
"""

import threading

import numpy as np

from ..errors import UsageError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def is_leaf(self):
        return self._node is None

    def __repr__(self):
        flags = []
        if self.requires_grad:
            flags.append("grad")
        if self.name:
            flags.append(f"name={self.name!r}")
        tail = (", " + ", ".join(flags)) if flags else ""
        return f"Tensor(shape={self.shape}{tail})"

    # arithmetic operators are attached by lipgcn.numerics.ops


class TapeNode:
    """One executed op: its name, input tensors, and adjoint function."""

    __slots__ = ("op", "inputs", "apply_adjoint")

    def __init__(self, op, inputs, apply_adjoint):
        self.op = op
        self.inputs = inputs
        self.apply_adjoint = apply_adjoint


_state = threading.local()


def grad_enabled():
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that suppresses tape recording."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def record(out, op, inputs, apply_adjoint):
    """Mark ``out`` as produced by ``op`` if recording is active."""
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = TapeNode(op, tuple(inputs), apply_adjoint)
    return out


def accumulate_grad(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _topo_order(root):
    """Tensors in execution order (inputs before outputs), root last."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for parent in t._node.inputs:
                if id(parent) not in seen:
                    stack.append((parent, False))
    return order


class GradTape:
    """Ordered record of the executed ops that produced ``root``."""

    def __init__(self, root):
        self.root = root
        self._order = _topo_order(root)

    @property
    def operations(self):
        return [t._node.op for t in self._order if t._node is not None]

    def backward(self):
        root = self.root
        if root.data.size != 1:
            raise UsageError(
                f"backward needs a scalar loss, got shape {root.shape}"
            )
        # fresh adjoints for everything this tape produced; leaves keep theirs
        for t in self._order:
            if t._node is not None:
                t.grad = None
        root.grad = np.ones_like(root.data)
        for t in reversed(self._order):
            node = t._node
            if node is None or t.grad is None:
                continue
            node.apply_adjoint(t.grad)

    def first_nonfinite(self):
        """(op, tensor) of the earliest non-finite output, or None."""
        for t in self._order:
            if not np.all(np.isfinite(t.data)):
                op = t._node.op if t._node is not None else "leaf"
                return op, t
        return None


def backward(loss):
    """Populate ``grad`` for every requires-grad tensor reachable from ``loss``."""
    GradTape(loss).backward()
