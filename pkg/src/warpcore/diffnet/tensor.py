"""Graph node and reverse-mode accumulation."""

from __future__ import annotations

import numpy as np

from ..errors import GraphCycle, ShapeMismatch


class Tensor:
    """A float64 array with an optional gradient and graph linkage.

    Nodes produced by ops keep references to their parents and a backward
    closure mapping the output gradient to parent gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.bwd = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def make(data, parents, bwd) -> Tensor:
    """Internal op constructor; drops graph linkage when nothing needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.bwd = bwd
    return out


def _toposort(root: Tensor):
    order = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, iter(root.parents))]
    state[id(root)] = 1
    while stack:
        node, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            stack.pop()
            state[id(node)] = 2
            order.append(node)
            continue
        s = state.get(id(nxt))
        if s == 1:
            raise GraphCycle("cycle detected in autodiff graph")
        if s is None and nxt.requires_grad:
            state[id(nxt)] = 1
            stack.append((nxt, iter(nxt.parents)))
    return order


def backward(loss: Tensor, sink: dict | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into .grad for every reachable leaf.

    With a sink dict, gradients are collected there (keyed by leaf Tensor)
    instead of being written to .grad, so independent graphs can run on
    worker threads and be merged in a deterministic order afterwards.
    """
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.bwd is None:
            # leaf: materialize the gradient
            if sink is not None:
                sink[node] = sink[node] + g if node in sink else g
            else:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            continue
        parent_grads = node.bwd(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
