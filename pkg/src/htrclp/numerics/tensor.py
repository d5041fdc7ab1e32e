"""Tensor values and the gradient tape.

A :class:`Tensor` is an immutable wrapper around a numpy array.  Operations in
:mod:`htrclp.numerics.ops` record a backward rule on the innermost active
:class:`Tape` whenever one of their inputs requires a gradient.  Nodes are
appended in execution order, which is a topological order of the graph, so
the backward sweep simply walks the node list in reverse.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A value or gradient became NaN or infinite."""


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def _check_enabled() -> bool:
    return getattr(_local, "check_finite", False)


@contextmanager
def check_finite(enabled: bool = True):
    """Raise :class:`NonFiniteError` as soon as any op produces NaN/Inf."""
    previous = _check_enabled()
    _local.check_finite = enabled
    try:
        yield
    finally:
        _local.check_finite = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # small operator surface used by the model and the tests
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "inputs", "outputs", "backward")

    def __init__(self, op, inputs, outputs, backward):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tape:
    """Records differentiable operations executed inside its ``with`` block.

    >>> from htrclp.numerics import ops
    >>> w = Tensor(np.array([3.0]), requires_grad=True)
    >>> with Tape() as tape:
    ...     y = ops.sum(ops.mul(w, w))
    >>> tape.gradient(y, [w])[0]
    array([6.])
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def gradient(self, target: Tensor, sources: Sequence[Tensor], seed=None) -> list:
        """Gradients of ``target`` with respect to each of ``sources``.

        ``seed`` defaults to ones (so a scalar target yields d target/d source).
        Sources not reached by the graph get a zero array.
        """
        grads: dict[int, np.ndarray] = {}
        grads[id(target)] = np.ones_like(target.data) if seed is None else np.asarray(seed)
        for node in reversed(self.nodes):
            outs = [grads.get(id(o)) for o in node.outputs]
            if all(g is None for g in outs):
                continue
            outs = [np.zeros_like(o.data) if g is None else g for o, g in zip(node.outputs, outs)]
            in_grads = node.backward(*outs)
            for t, g in zip(node.inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                if g.shape != t.shape:
                    raise ShapeError(f"{node.op}: gradient shape {g.shape} != value shape {t.shape}")
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def record(op: str, inputs: Sequence[Tensor], outputs: Sequence[Tensor],
           backward: Callable) -> None:
    """Attach ``backward`` for ``outputs`` to the active tape when needed."""
    if _check_enabled():
        for o in outputs:
            if not np.all(np.isfinite(o.data)):
                raise NonFiniteError(f"{op} produced non-finite values")
    stack = _tape_stack()
    if not stack or not any(t.requires_grad for t in inputs):
        return
    for o in outputs:
        o.requires_grad = True
    stack[-1].nodes.append(_Node(op, tuple(inputs), tuple(outputs), backward))


@contextmanager
def no_grad():
    """Suspend recording, e.g. for evaluation-mode forwards."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)
