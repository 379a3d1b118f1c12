#!/usr/bin/env python3
"""
Dense tensors and the reverse-mode differentiation tape.

A Tensor wraps a float64 numpy buffer. Whenever a primitive (see engine.ops)
consumes a tensor that requires gradients, a node is appended to the calling
thread's Graph. ``backward`` walks that graph once, in exact reverse append
order, and then marks it consumed; the next primitive starts a fresh graph.
"""

import itertools
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import GraphError

logger = logging.getLogger(__name__)

VectorJacobian = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_graph_ids = itertools.count(1)
_state = threading.local()


class Tensor:
    """
    Dense n-dimensional array of 64-bit floats with an optional gradient slot.

    Attributes:
        data: The row-major float64 buffer, shaped.
        requires_grad: Whether gradients are tracked for this tensor.
        node_id: Position of this tensor's node in the graph it last joined.
    """

    def __init__(self, data: Any, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node_id: Optional[int] = None
        self._graph_id: Optional[int] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the buffer."""
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Copy of the underlying array."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


@dataclass
class Node:
    """
    One recorded primitive application.
    """

    kind: str
    inputs: Tuple[Optional[int], ...]
    shape: Tuple[int, ...]
    vjp: Optional[VectorJacobian] = None
    context: Dict[str, Any] = field(default_factory=dict)


class GradientMap(dict):
    """
    Mapping node_id -> gradient Tensor for the leaves of one consumed graph.
    """

    def __init__(self, graph_id: int):
        super().__init__()
        self.graph_id = graph_id

    def for_tensor(self, tensor: Tensor) -> np.ndarray:
        """
        Gradient array for a leaf tensor, zeros when it never reached the loss.

        Args:
            tensor: A leaf tensor (usually a parameter).

        Returns:
            An array with the tensor's shape.
        """
        if tensor._graph_id == self.graph_id and tensor.node_id in self:
            return self[tensor.node_id].data
        return np.zeros(tensor.shape, dtype=np.float64)


class Graph:
    """
    Append-only list of nodes; a node's inputs always precede it.
    """

    def __init__(self):
        self.graph_id = next(_graph_ids)
        self.nodes: List[Node] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def _register(self, tensor: Tensor) -> Optional[int]:
        if not tensor.requires_grad:
            return None
        if tensor._graph_id != self.graph_id or tensor.node_id is None:
            tensor.node_id = len(self.nodes)
            tensor._graph_id = self.graph_id
            self.nodes.append(Node(kind="leaf", inputs=(), shape=tensor.shape))
        return tensor.node_id

    def record(
        self,
        kind: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        vjp: VectorJacobian,
        context: Optional[Dict[str, Any]] = None,
    ) -> None:
        """
        Append a node for ``output = kind(*inputs)``.
        """
        if self.consumed:
            raise GraphError("graph already consumed; start a new step")
        input_ids = tuple(self._register(t) for t in inputs)
        output.node_id = len(self.nodes)
        output._graph_id = self.graph_id
        output.requires_grad = True
        self.nodes.append(Node(kind=kind, inputs=input_ids, shape=output.shape, vjp=vjp, context=context or {}))

    def backward(self, loss: Tensor) -> GradientMap:
        """
        Propagate d(loss)/d(node) to every leaf of this graph.

        Args:
            loss: A scalar tensor recorded in this graph.

        Returns:
            Gradients for all leaf nodes (zeros for leaves the loss does not reach).

        Raises:
            GraphError: If the graph was already consumed.
        """
        if self.consumed:
            raise GraphError("graph already consumed (single-use tape per step)")

        grads: Dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape, dtype=np.float64)}
        leaves: List[int] = []
        for node_id in range(loss.node_id, -1, -1):
            node = self.nodes[node_id]
            if node.kind == "leaf":
                leaves.append(node_id)
                continue
            upstream = grads.pop(node_id, None)
            if upstream is None:
                continue
            for input_id, grad in zip(node.inputs, node.vjp(upstream)):
                if input_id is None or grad is None:
                    continue
                if input_id in grads:
                    grads[input_id] = grads[input_id] + grad
                else:
                    grads[input_id] = grad

        # Leaves recorded after the loss cannot receive gradient either.
        leaves.extend(i for i in range(loss.node_id + 1, len(self.nodes)) if self.nodes[i].kind == "leaf")

        result = GradientMap(self.graph_id)
        for leaf_id in sorted(leaves):
            shape = self.nodes[leaf_id].shape
            grad = grads.get(leaf_id)
            result[leaf_id] = Tensor(grad if grad is not None else np.zeros(shape, dtype=np.float64))

        self.consumed = True
        self.nodes = []
        logger.debug(f"Backward through graph {self.graph_id} produced {len(result)} leaf gradients")
        return result


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """
    Disable graph recording on the current thread (evaluation, finite differences).
    """
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def current_graph() -> Graph:
    """
    The live graph of the calling thread, creating a fresh one after consumption.
    """
    graph = getattr(_state, "graph", None)
    if graph is None or graph.consumed:
        graph = Graph()
        _state.graph = graph
    return graph


def reset_graph() -> None:
    """
    Drop whatever the current thread has recorded so far.
    """
    _state.graph = None


def make_result(
    kind: str,
    inputs: Sequence[Tensor],
    data: np.ndarray,
    vjp: VectorJacobian,
    context: Optional[Dict[str, Any]] = None,
) -> Tensor:
    """
    Wrap a primitive's forward value and record it when any input is tracked.

    Args:
        kind: Primitive name.
        inputs: Tensor inputs in the order ``vjp`` returns gradients for.
        data: Forward value.
        vjp: Maps the upstream gradient to one gradient (or None) per input.
        context: Optional saved forward context for introspection.

    Returns:
        The output tensor.
    """
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        current_graph().record(kind, inputs, out, vjp, context)
    return out


def backward(loss: Tensor) -> GradientMap:
    """
    Reverse-mode pass from a scalar loss.

    Args:
        loss: Scalar-shaped tensor that requires gradients.

    Returns:
        A GradientMap keyed by leaf node id.

    Raises:
        GraphError: If the loss is not scalar, is not tracked, or its graph is consumed.
    """
    if loss.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad or loss.node_id is None:
        raise GraphError("backward: loss does not require grad")

    graph = getattr(_state, "graph", None)
    if graph is None or graph.graph_id != loss._graph_id:
        raise GraphError("backward: graph already consumed or owned by another thread")
    return graph.backward(loss)
