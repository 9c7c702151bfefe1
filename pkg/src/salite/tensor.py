"""Dense N-D arrays with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous row-major numpy buffer (float32 by default,
float64 for gradient checking) plus an optional gradient buffer. Executing a
differentiable operation appends a ``Node`` to the implicit tape: nodes carry
monotonically increasing ids, so execution order is a topological order and
``backward`` can simply walk reachable nodes by descending id, visiting each
exactly once. Gradients accumulate additively across fan-out.

Image-like data uses NCHW layout throughout. There is no implicit
broadcasting: binary operations demand equal shapes so shape bugs surface at
the call site.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError

_node_ids = itertools.count(1)
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / metrics)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One executed operation on the tape.

    ``inputs``/``outputs`` are the tensors the op consumed and produced;
    ``backward_fn`` receives one gradient array per output (zeros for outputs
    nothing consumed) and accumulates into the inputs' ``grad`` buffers.
    """

    __slots__ = ("nid", "inputs", "outputs", "backward_fn")

    def __init__(self, inputs: tuple["Tensor", ...], backward_fn: Callable):
        self.nid = next(_node_ids)
        self.inputs = inputs
        self.outputs: tuple[Tensor, ...] = ()
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Copy-free constant view of this tensor's data (no tape linkage)."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def make_op(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result; records a tape node when any input tracks gradients."""
    req = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=req, dtype=data.dtype)
    if req:
        node = Node(tuple(inputs), backward_fn)
        node.outputs = (out,)
        out.node = node
    return out


def make_multi_op(datas: Sequence[np.ndarray], inputs: Sequence[Tensor],
                  backward_fn: Callable) -> tuple[Tensor, ...]:
    """Like make_op for operations with several outputs (e.g. an LSTM cell)."""
    req = _grad_enabled and any(t.requires_grad for t in inputs)
    outs = tuple(Tensor(d, requires_grad=req, dtype=d.dtype) for d in datas)
    if req:
        node = Node(tuple(inputs), backward_fn)
        node.outputs = outs
        for o in outs:
            o.node = node
    return outs


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution to a tensor (no-op for constants)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(root: Tensor) -> None:
    """Reverse-mode sweep from a scalar root.

    Every gradient-tracking tensor reachable from the root ends up with
    ``grad`` holding d(root)/d(tensor); the root's own grad is exactly 1.
    Node visitation order is descending node id, which is a reverse
    topological order by construction, so each node runs exactly once and
    results are bit-identical across repeated evaluations of the same graph.
    """
    if root.data.size != 1:
        raise DimensionError(f"backward root must be scalar-shaped, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward root does not require gradients (no tape attached)")
    root.grad = np.ones_like(root.data)
    if root.node is None:
        return
    nodes: dict[int, Node] = {}
    stack = [root.node]
    while stack:
        node = stack.pop()
        if node.nid in nodes:
            continue
        nodes[node.nid] = node
        for t in node.inputs:
            if t.node is not None and t.node.nid not in nodes:
                stack.append(t.node)
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        grads = tuple(
            o.grad if o.grad is not None else np.zeros_like(o.data)
            for o in node.outputs
        )
        node.backward_fn(*grads)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes differ, {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"{op}: dtypes differ, {a.dtype} vs {b.dtype}")
