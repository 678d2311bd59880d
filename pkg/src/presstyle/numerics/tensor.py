"""Dense tensor with tape-free reverse-mode differentiation.

Each op output remembers its parents and a closure mapping the upstream
gradient to one gradient per parent. ``OpGraph`` recovers a topological order
from the output by depth-first search; ``backward`` walks it in reverse.
"""
import numpy as np

from ..errors import GraphError, ShapeError


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf", name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"tensors have at most 4 dims, got shape {arr.shape}", dim="rank")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self.parents

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        return backward(self, grad=grad)

    # elementwise arithmetic, enough for losses and probes
    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return make_result(self.data + other.data, (a, b), bw, "add")

    __radd__ = __add__

    def __neg__(self):
        return make_result(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return make_result(self.data * other.data, (a, b), bw, "mul")

    __rmul__ = __mul__

    def sum(self):
        shape = self.shape
        return make_result(np.asarray(self.data.sum()), (self,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return make_result(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),), "reshape")


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(data, parents, backward_fn, op):
    """Wrap ``data``; keep graph links only if some parent needs gradients."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


class OpGraph:
    """Nodes reachable from ``output`` in topological order (inputs first)."""

    def __init__(self, nodes):
        self.nodes = list(nodes)
        pos = {id(n): i for i, n in enumerate(self.nodes)}
        for i, n in enumerate(self.nodes):
            for p in n.parents:
                if p.requires_grad and pos.get(id(p), len(self.nodes)) >= i:
                    raise GraphError(f"node {n!r} precedes its input {p!r}")

    @classmethod
    def from_output(cls, output):
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]


def backward(loss, params=None, grad=None, graph=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Returns the gradients of ``params`` (a list of tensors) when given,
    otherwise of all leaves in graph order.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}", dim="loss")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor requiring grad")
    graph = graph or OpGraph.from_output(loss)
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise ShapeError(f"{node.op}: gradient shape {pg.shape} != input shape {p.shape}", dim=node.op)
            k = id(p)
            grads[k] = pg if k not in grads else grads[k] + pg
    targets = params if params is not None else graph.leaves()
    return [t.grad for t in targets]
