#!/usr/bin/env python3
"""
The differentiable primitive set.

Every model in the toolkit is composed from these functions only. Each one
computes its forward value with numpy and, when any input is tracked, records
a vector-Jacobian closure on the current graph.
"""

import logging
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import DataError, ShapeError
from engine.rng import RngState
from engine.tensor import Tensor, make_result

logger = logging.getLogger(__name__)

# log() clamps its input to this floor so log-probabilities never reach -inf.
LOG_FLOOR = 1e-12
# exp() saturates its input here instead of overflowing to inf.
EXP_CEILING = 700.0
LAYER_NORM_EPS = 1e-5

ArrayLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: ArrayLike) -> Tensor:
    """
    Return ``value`` if it is a Tensor, otherwise wrap it as an untracked constant.
    """
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """
    Sum ``grad`` down to ``shape`` after numpy broadcasting.
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(kind: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise ShapeError(kind, [a.shape, b.shape])


def _normalize_axis(kind: str, axis: int, ndim: int, shape: Tuple[int, ...]) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(kind, [shape], f"axis {axis} out of range")
    return axis % ndim


# --------------------------------------------------------------------------
# Binary arithmetic
# --------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike, transpose_b: bool = False) -> Tensor:
    """
    Batched matrix product ``a @ b`` (or ``a @ b^T`` with ``transpose_b``).

    Leading (batch) axes broadcast as in numpy.

    Args:
        a: Tensor of shape (..., n, k).
        b: Tensor of shape (..., k, m), or (..., m, k) when transposed.
        transpose_b: Contract against the last axis of ``b``.

    Returns:
        Tensor of shape (..., n, m).

    Raises:
        ShapeError: If ranks are below 2, inner extents differ or batch axes do not broadcast.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", [a.shape, b.shape], "both operands need rank >= 2")
    b_data = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if a.shape[-1] != b_data.shape[-2]:
        raise ShapeError("matmul", [a.shape, b.shape])
    try:
        np.broadcast_shapes(a.shape[:-2], b_data.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", [a.shape, b.shape], "batch axes do not broadcast")

    out = np.matmul(a.data, b_data)

    def vjp(g: np.ndarray):
        grad_a = _unbroadcast(np.matmul(g, np.swapaxes(b_data, -1, -2)), a.shape)
        grad_bm = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b_data.shape)
        grad_b = np.swapaxes(grad_bm, -1, -2) if transpose_b else grad_bm
        return grad_a, grad_b

    return make_result("matmul", [a, b], out, vjp, {"transpose_b": transpose_b})


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Elementwise sum with numpy broadcasting (bias vectors over leading axes).
    """
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    out = a.data + b.data

    def vjp(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result("add", [a, b], out, vjp)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Elementwise (Hadamard) product with numpy broadcasting.
    """
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    out = a.data * b.data

    def vjp(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result("mul", [a, b], out, vjp)


def scale(x: ArrayLike, factor: float) -> Tensor:
    """
    Multiply by a Python scalar.
    """
    x = as_tensor(x)
    factor = float(factor)
    out = x.data * factor

    def vjp(g: np.ndarray):
        return (g * factor,)

    return make_result("scale", [x], out, vjp, {"factor": factor})


def scalar_min(x: ArrayLike, ceiling: float) -> Tensor:
    """
    Elementwise ``min(x, ceiling)``; the gradient is zero where the ceiling is active.
    """
    x = as_tensor(x)
    ceiling = float(ceiling)
    out = np.minimum(x.data, ceiling)

    def vjp(g: np.ndarray):
        return (g * (x.data < ceiling),)

    return make_result("scalar_min", [x], out, vjp, {"ceiling": ceiling})


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    """
    Concatenate along ``axis`` (the last axis by default).

    Raises:
        ShapeError: If ranks differ or any non-concatenated extent differs.
    """
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat", [], "nothing to concatenate")
    ndim = parts[0].ndim
    if any(p.ndim != ndim for p in parts):
        raise ShapeError("concat", [p.shape for p in parts], "ranks differ")
    axis = _normalize_axis("concat", axis, ndim, parts[0].shape)
    for p in parts[1:]:
        if p.shape[:axis] + p.shape[axis + 1:] != parts[0].shape[:axis] + parts[0].shape[axis + 1:]:
            raise ShapeError("concat", [p.shape for p in parts])

    out = np.concatenate([p.data for p in parts], axis=axis)
    boundaries = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g: np.ndarray):
        return np.split(g, boundaries, axis=axis)

    return make_result("concat", parts, out, vjp, {"axis": axis})


# --------------------------------------------------------------------------
# Elementwise nonlinearities
# --------------------------------------------------------------------------

def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def vjp(g: np.ndarray):
        return (g * (x.data > 0.0),)

    return make_result("relu", [x], out, vjp)


def sigmoid(x: ArrayLike) -> Tensor:
    """
    Logistic function, evaluated without overflow for large |x|.
    """
    x = as_tensor(x)
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def vjp(g: np.ndarray):
        return (g * out * (1.0 - out),)

    return make_result("sigmoid", [x], out, vjp)


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def vjp(g: np.ndarray):
        return (g * (1.0 - out * out),)

    return make_result("tanh", [x], out, vjp)


def softmax(x: ArrayLike) -> Tensor:
    """
    Softmax over the last axis, computed with max-subtraction.

    Raises:
        ShapeError: If the last axis is empty.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError("softmax", [x.shape], "empty last axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_result("softmax", [x], out, vjp)


def log(x: ArrayLike) -> Tensor:
    """
    Natural log with the input clamped to at least LOG_FLOOR.

    Raises:
        ShapeError: If the tensor is empty.
    """
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeError("log", [x.shape], "empty tensor")
    clamped = np.maximum(x.data, LOG_FLOOR)
    out = np.log(clamped)

    def vjp(g: np.ndarray):
        return (g / clamped * (x.data >= LOG_FLOOR),)

    return make_result("log", [x], out, vjp)


def exp(x: ArrayLike) -> Tensor:
    """
    Exponential with the input saturated at EXP_CEILING.
    """
    x = as_tensor(x)
    out = np.exp(np.minimum(x.data, EXP_CEILING))

    def vjp(g: np.ndarray):
        return (g * out * (x.data <= EXP_CEILING),)

    return make_result("exp", [x], out, vjp)


# --------------------------------------------------------------------------
# Reductions and norms
# --------------------------------------------------------------------------

def l2_norm(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """
    Euclidean norm over all entries (scalar result) or along one axis.

    The gradient at a zero vector is defined as zero.
    """
    x = as_tensor(x)
    if axis is not None:
        axis = _normalize_axis("l2_norm", axis, x.ndim, x.shape)
    norm_kept = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    out = norm_kept if keepdims else (norm_kept.reshape(()) if axis is None else np.squeeze(norm_kept, axis=axis))

    def vjp(g: np.ndarray):
        g_kept = g if keepdims else (np.reshape(g, norm_kept.shape))
        safe = np.where(norm_kept > 0.0, norm_kept, 1.0)
        return (g_kept * x.data / safe * (norm_kept > 0.0),)

    return make_result("l2_norm", [x], out, vjp, {"axis": axis})


def mean(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """
    Arithmetic mean over all entries or along one axis.
    """
    x = as_tensor(x)
    if axis is not None:
        axis = _normalize_axis("mean", axis, x.ndim, x.shape)
        count = x.shape[axis]
    else:
        count = x.size
    if count == 0:
        raise ShapeError("mean", [x.shape], "empty reduction")
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(np.reshape(g, (1,) * x.ndim), x.shape) / count,)
        g_kept = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_kept, x.shape) / count,)

    return make_result("mean", [x], out, vjp, {"axis": axis})


def max_along(x: ArrayLike, axis: int) -> Tensor:
    """
    Maximum along ``axis``; the gradient routes to the first maximizing index.
    """
    x = as_tensor(x)
    axis = _normalize_axis("max", axis, x.ndim, x.shape)
    if x.shape[axis] == 0:
        raise ShapeError("max", [x.shape], "empty reduction")
    index = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, index, axis=axis).squeeze(axis)

    def vjp(g: np.ndarray):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, index, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return make_result("max", [x], out, vjp, {"axis": axis})


def last_along(x: ArrayLike, axis: int) -> Tensor:
    """
    The final entry along ``axis`` (that axis is dropped).
    """
    x = as_tensor(x)
    axis = _normalize_axis("last", axis, x.ndim, x.shape)
    if x.shape[axis] == 0:
        raise ShapeError("last", [x.shape], "empty axis")
    out = np.take(x.data, -1, axis=axis)

    def vjp(g: np.ndarray):
        grad = np.zeros_like(x.data)
        index = [slice(None)] * x.ndim
        index[axis] = -1
        grad[tuple(index)] = g
        return (grad,)

    return make_result("last", [x], out, vjp, {"axis": axis})


# --------------------------------------------------------------------------
# Shape manipulation
# --------------------------------------------------------------------------

def slice_along(x: ArrayLike, axis: int, start: int, stop: int) -> Tensor:
    """
    Contiguous slice ``[start, stop)`` along ``axis``.

    Raises:
        ShapeError: If the range is empty or out of bounds.
    """
    x = as_tensor(x)
    axis = _normalize_axis("slice", axis, x.ndim, x.shape)
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError("slice", [x.shape], f"range [{start}, {stop}) on axis {axis}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = x.data[index].copy()

    def vjp(g: np.ndarray):
        grad = np.zeros_like(x.data)
        grad[index] = g
        return (grad,)

    return make_result("slice", [x], out, vjp, {"axis": axis, "start": start, "stop": stop})


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = np.reshape(x.data, shape).copy()
    except ValueError:
        raise ShapeError("reshape", [x.shape, shape])

    def vjp(g: np.ndarray):
        return (np.reshape(g, x.shape),)

    return make_result("reshape", [x], out, vjp)


def outer_product(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Per-row outer product of two matrices: (B, m) x (B, n) -> (B, m, n).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError("outer_product", [a.shape, b.shape])
    out = a.data[:, :, None] * b.data[:, None, :]

    def vjp(g: np.ndarray):
        return np.einsum("bij,bj->bi", g, b.data), np.einsum("bij,bi->bj", g, a.data)

    return make_result("outer_product", [a, b], out, vjp)


# --------------------------------------------------------------------------
# Layers expressed as primitives
# --------------------------------------------------------------------------

def embedding_lookup(table: ArrayLike, ids: np.ndarray) -> Tensor:
    """
    Gather rows of ``table`` (V, D) for an integer id array of any shape.

    Raises:
        DataError: If an id is outside [0, V).
        ShapeError: If the table is not a matrix.
    """
    table = as_tensor(table)
    if table.ndim != 2:
        raise ShapeError("embedding_lookup", [table.shape], "table must be (vocab, dim)")
    ids = np.asarray(ids)
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise DataError(f"embedding_lookup: ids must be integers, got {ids.dtype}")
    ids = ids.astype(np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids.max()) if ids.max() >= vocab else int(ids.min())
        raise DataError(f"embedding_lookup: id {bad} out of vocabulary of size {vocab}")
    out = table.data[ids]

    def vjp(g: np.ndarray):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return make_result("embedding_lookup", [table], out, vjp)


def layer_norm(x: ArrayLike, eps: float = LAYER_NORM_EPS) -> Tensor:
    """
    Normalize the last axis to zero mean and unit variance (no affine terms).
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError("layer_norm", [x.shape], "empty last axis")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    out = centered * inv_std

    def vjp(g: np.ndarray):
        g_mean = g.mean(axis=-1, keepdims=True)
        gx_mean = (g * out).mean(axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - out * gx_mean),)

    return make_result("layer_norm", [x], out, vjp, {"eps": eps})


def dropout(
    x: ArrayLike,
    p: float,
    rng: Union[RngState, np.random.Generator, None],
    train: bool,
) -> Tensor:
    """
    Inverted dropout: zero each entry with probability ``p`` and scale survivors by 1/(1-p).

    With ``train=False`` or ``p == 0`` the input is returned unchanged.
    """
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    generator = rng.generator() if isinstance(rng, RngState) else rng
    mask = (generator.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    out = x.data * mask

    def vjp(g: np.ndarray):
        return (g * mask,)

    return make_result("dropout", [x], out, vjp, {"p": p})


def conv1d(x: ArrayLike, weight: ArrayLike) -> Tensor:
    """
    Convolution over the time axis with 'same' zero padding.

    Args:
        x: Tensor of shape (B, L, C_in).
        weight: Tensor of shape (K, C_in, C_out).

    Returns:
        Tensor of shape (B, L, C_out).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError("conv1d", [x.shape, weight.shape])
    kernel = weight.shape[0]
    length = x.shape[1]
    left = (kernel - 1) // 2
    right = kernel - 1 - left
    padded = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    out = np.zeros((x.shape[0], length, weight.shape[2]), dtype=np.float64)
    for k in range(kernel):
        out += np.matmul(padded[:, k:k + length, :], weight.data[k])

    def vjp(g: np.ndarray):
        grad_padded = np.zeros_like(padded)
        grad_w = np.zeros_like(weight.data)
        for k in range(kernel):
            grad_padded[:, k:k + length, :] += np.matmul(g, weight.data[k].T)
            grad_w[k] = np.einsum("blc,bld->cd", padded[:, k:k + length, :], g)
        return grad_padded[:, left:left + length, :], grad_w

    return make_result("conv1d", [x, weight], out, vjp, {"kernel": kernel})


PRIMITIVES: Dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "concat": concat,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "log": log,
    "exp": exp,
    "l2_norm": l2_norm,
    "scalar_min": scalar_min,
    "scale": scale,
    "slice": slice_along,
    "reshape": reshape,
    "mean": mean,
    "max": max_along,
    "last": last_along,
    "outer_product": outer_product,
    "embedding_lookup": embedding_lookup,
    "layer_norm": layer_norm,
    "dropout": dropout,
    "conv1d": conv1d,
}


def primitive(kind: str, *inputs: Any, **kwargs: Any) -> Tensor:
    """
    Apply a primitive by name.

    Args:
        kind: One of PRIMITIVES.
        *inputs: Positional inputs for the primitive.
        **kwargs: Keyword options for the primitive.

    Returns:
        The output tensor.

    Raises:
        KeyError: If ``kind`` is not a primitive.
    """
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise KeyError(f"Unknown primitive '{kind}'; known: {', '.join(sorted(PRIMITIVES))}")
    return fn(*inputs, **kwargs)


def subtract(a: ArrayLike, b: ArrayLike) -> Tensor:
    """``a - b`` composed from add and scale."""
    return add(a, scale(b, -1.0))


def sum_all(x: ArrayLike) -> Tensor:
    """Sum of all entries composed from mean and scale."""
    x = as_tensor(x)
    return scale(mean(x), float(x.size))


def sum_along(x: ArrayLike, axis: int, keepdims: bool = False) -> Tensor:
    """Sum along one axis composed from mean and scale."""
    x = as_tensor(x)
    axis = _normalize_axis("sum", axis, x.ndim, x.shape)
    return scale(mean(x, axis=axis, keepdims=keepdims), float(x.shape[axis]))
