# Dense tensors with reverse-mode automatic differentiation.
#
# A Tensor wraps a row-major numpy array (float32 unless a float64 array is
# passed in) plus an optional gradient buffer. Differentiable ops live in
# beamfuse.core.functional; each one records a Node holding its inputs and a
# closure mapping the output gradient to input gradients. backward() sorts
# the recorded graph topologically and accumulates gradients into leaves.

import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from beamfuse.core.errors import UsageError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_grad_mode = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread."""
    previous = grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


class Node:
    """Record of one op: kind, input tensors and the backward closure."""

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], backward: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """A float array that optionally tracks gradients."""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.asarray(data)
        if array.dtype not in (np.float32, np.float64):
            array = array.astype(np.float32)
        self.data = np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.node: Optional[Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Operator sugar; the ops themselves live in functional.
    def __add__(self, other):
        from beamfuse.core import functional as F
        return F.add(self, other)

    def __sub__(self, other):
        from beamfuse.core import functional as F
        return F.sub(self, other)

    def __mul__(self, other):
        from beamfuse.core import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from beamfuse.core import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from beamfuse.core import functional as F
        return F.matmul(self, other)


def record(data: np.ndarray, inputs: Sequence[Tensor], op: str, backward_fn: BackwardFn) -> Tensor:
    """Wrap an op result, attaching a graph node when any input needs gradients."""
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), backward_fn)
    return out


class Graph:
    """Topologically ordered tensors reachable from an output."""

    def __init__(self, order: List[Tensor]):
        self.order = order

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in seen:
                continue
            seen.add(id(tensor))
            stack.append((tensor, True))
            if tensor.node is not None:
                for parent in reversed(tensor.node.inputs):
                    if parent.requires_grad and id(parent) not in seen:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.order)

    def nodes(self) -> List[Node]:
        return [t.node for t in self.order if t.node is not None]


def backward(loss: Tensor) -> None:
    """Populate .grad of every leaf reachable from a scalar loss.

    The graph is consumed: intermediate tensors drop their nodes once their
    gradient has been propagated.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("backward() called on a tensor that does not require gradients")
    graph = Graph.from_output(loss)
    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for tensor in reversed(graph.order):
        grad = pending.pop(id(tensor), None)
        if grad is None:
            continue
        node = tensor.node
        if node is None:
            grad = grad.astype(tensor.data.dtype, copy=False)
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            continue
        for parent, parent_grad in zip(node.inputs, node.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
        tensor.node = None


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)
