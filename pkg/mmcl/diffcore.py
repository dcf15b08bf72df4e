"""A small reverse-mode automatic differentiation engine over dense arrays.

Every primitive acts on the trailing two axes of its operands, so a leading
batch axis may be carried through a whole forward pass. Each call records a
:class:`GraphNode` when any input requires a gradient; :func:`backward` walks
the recorded tape once and then frees it.
"""

from __future__ import annotations

import contextlib
import logging
import os
from dataclasses import dataclass
from enum import StrEnum
from typing import TYPE_CHECKING, Any, Self

import numpy as np
from scipy.special import expit, log_softmax as _log_softmax, softmax as _softmax

from mmcl.errors import NumericError, ShapeError

if TYPE_CHECKING:
    from collections.abc import Callable, Iterator, Sequence

Array = np.ndarray[Any, np.dtype[np.floating[Any]]]

DTYPE = np.dtype(os.environ.get("MMCL_DTYPE", "float64"))
"""Working precision. 64-bit unless the MMCL_DTYPE environment variable says otherwise."""

logger = logging.getLogger(__name__)

_grad_state = {"enabled": True}


class OpKind(StrEnum):
    """Identifier of a recorded primitive."""

    MATMUL = "matmul"
    TRANSPOSE = "transpose"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIVIDE = "divide"
    SCALAR_MUL = "scalar-mul"
    SCALAR_ADD = "scalar-add"
    NEGATE = "negate"
    CONCAT = "concat"
    SPLIT = "split"
    RESHAPE = "reshape"
    ROW_L2_NORM = "row-l2-norm"
    ROW_L2_NORMALIZE = "row-l2-normalize"
    ROW_SUM_NORMALIZE = "row-sum-normalize"
    SOFTMAX = "softmax"
    LOG_SOFTMAX = "log-softmax"
    SIGMOID = "sigmoid"
    RELU = "relu"
    MEAN = "mean"
    SUM = "sum"
    ABS = "abs"
    SQUARE = "square"
    LOG = "log"
    EXP = "exp"
    MINIMUM = "minimum"
    MAXIMUM = "maximum"
    CLIP = "clip"
    MEAN_POOL = "mean-pool-over-time"
    AFFINE = "affine"


@dataclass(frozen=True, slots=True)
class GraphNode:
    """A recorded primitive application.

    ``vjp`` maps the gradient of the output onto one gradient per input
    (``None`` where an input receives nothing).
    """

    op_kind: OpKind
    inputs: tuple[Tensor, ...]
    vjp: Callable[[Array], Sequence[Array | None]]


class Tensor:
    """A dense real array that may take part in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "name", "node", "requires_grad")

    def __init__(
        self: Self,
        data: Any,  # noqa: ANN401
        *,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        self.data: Array = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.name = name
        self.node: GraphNode | None = None

    @property
    def shape(self: Self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self: Self) -> int:
        return self.data.ndim

    def item(self: Self) -> float:
        return float(self.data)

    def detach(self: Self) -> Tensor:
        """Return a view of the same data that is cut from the graph."""
        return Tensor(self.data, name=self.name)

    def __repr__(self: Self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self: Self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return add(self, other)
        return scalar_add(self, other)

    __radd__ = __add__

    def __sub__(self: Self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return sub(self, other)
        return scalar_add(self, -other)

    def __rsub__(self: Self, other: float) -> Tensor:
        return scalar_add(negate(self), other)

    def __mul__(self: Self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self: Self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return divide(self, other)
        return scalar_mul(self, 1 / other)

    def __neg__(self: Self) -> Tensor:
        return negate(self)

    def __matmul__(self: Self, other: Tensor) -> Tensor:
        return matmul(self, other)


class GradientMap(dict[Tensor, "Array"]):
    """Gradients of a scalar with respect to leaves.

    Looking up a leaf that the scalar does not depend on gives zeros.
    """

    def __missing__(self: Self, key: Tensor) -> Array:
        return np.zeros_like(key.data)


def parameter(data: Any, name: str | None = None) -> Tensor:  # noqa: ANN401
    return Tensor(data, requires_grad=True, name=name)


def constant(data: Any) -> Tensor:  # noqa: ANN401
    return Tensor(data)


def as_tensor(data: Tensor | Any) -> Tensor:  # noqa: ANN401
    return data if isinstance(data, Tensor) else Tensor(data)


def is_grad_enabled() -> bool:
    return _grad_state["enabled"]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suppress graph recording inside the block."""
    previous = _grad_state["enabled"]
    _grad_state["enabled"] = False
    try:
        yield
    finally:
        _grad_state["enabled"] = previous


def _record(
    kind: OpKind,
    data: Array,
    inputs: tuple[Tensor, ...],
    vjp: Callable[[Array], Sequence[Array | None]],
) -> Tensor:
    out = Tensor(data)
    if _grad_state["enabled"] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = GraphNode(kind, inputs, vjp)
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum g down to shape, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _one_way_broadcast(
    kind: OpKind,
    a: tuple[int, ...],
    b: tuple[int, ...],
) -> tuple[int, ...]:
    # Only one operand may be expanded, and only onto the other's exact shape.
    if a == b:
        return a
    try:
        out = np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(kind, a, b) from None
    if out not in (a, b):
        raise ShapeError(kind, a, b)
    return out


def _swap(x: Array) -> Array:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:  # noqa: PLR2004
        raise ShapeError(OpKind.MATMUL, a.shape, b.shape)
    _one_way_broadcast(OpKind.MATMUL, a.shape[:-2], b.shape[:-2])
    a_data, b_data = a.data, b.data

    def vjp(g: Array) -> tuple[Array, Array]:
        return (
            _unbroadcast(g @ _swap(b_data), a_data.shape),
            _unbroadcast(_swap(a_data) @ g, b_data.shape),
        )

    return _record(OpKind.MATMUL, a_data @ b_data, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim < 2:  # noqa: PLR2004
        raise ShapeError(OpKind.TRANSPOSE, a.shape)
    return _record(OpKind.TRANSPOSE, _swap(a.data), (a,), lambda g: (_swap(g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    _one_way_broadcast(OpKind.ADD, a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record(
        OpKind.ADD,
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _one_way_broadcast(OpKind.SUB, a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record(
        OpKind.SUB,
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; a column [L, 1] or row [d] vector may be broadcast."""
    _one_way_broadcast(OpKind.MUL, a.shape, b.shape)
    a_data, b_data = a.data, b.data
    return _record(
        OpKind.MUL,
        a_data * b_data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b_data, a_data.shape),
            _unbroadcast(g * a_data, b_data.shape),
        ),
    )


def divide(a: Tensor, b: Tensor) -> Tensor:
    _one_way_broadcast(OpKind.DIVIDE, a.shape, b.shape)
    a_data, b_data = a.data, b.data
    out = a_data / b_data
    return _record(
        OpKind.DIVIDE,
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b_data, a_data.shape),
            _unbroadcast(-g * out / b_data, b_data.shape),
        ),
    )


def scalar_mul(a: Tensor, c: float) -> Tensor:
    return _record(OpKind.SCALAR_MUL, a.data * c, (a,), lambda g: (g * c,))


def scalar_add(a: Tensor, c: float) -> Tensor:
    return _record(OpKind.SCALAR_ADD, a.data + c, (a,), lambda g: (g,))


def negate(a: Tensor) -> Tensor:
    return _record(OpKind.NEGATE, -a.data, (a,), lambda g: (-g,))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError(OpKind.CONCAT)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(OpKind.CONCAT, *(t.shape for t in tensors)) from None
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g: Array) -> list[Array]:
        return np.split(g, boundaries, axis=axis)

    return _record(OpKind.CONCAT, data, tuple(tensors), vjp)


def split(a: Tensor, sections: int | Sequence[int], axis: int = -1) -> list[Tensor]:
    """Split a along axis into equal sections, or into pieces of the given sizes."""
    n = a.shape[axis]
    if isinstance(sections, int):
        if sections <= 0 or n % sections != 0:
            raise ShapeError(OpKind.SPLIT, a.shape, (sections,))
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != n:
            raise ShapeError(OpKind.SPLIT, a.shape, tuple(sizes))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    shape = a.shape
    pieces: list[Tensor] = []
    for start, stop in zip(offsets[:-1], offsets[1:], strict=True):
        index = [slice(None)] * len(shape)
        index[axis] = slice(start, stop)
        key = tuple(index)

        def vjp(g: Array, key: tuple[slice, ...] = key) -> tuple[Array]:
            full = np.zeros(shape, dtype=g.dtype)
            full[key] = g
            return (full,)

        pieces.append(_record(OpKind.SPLIT, a.data[key], (a,), vjp))
    return pieces


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(OpKind.RESHAPE, original, shape) from None
    return _record(OpKind.RESHAPE, data, (a,), lambda g: (g.reshape(original),))


def row_l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm of each row, shape [..., L, 1]."""
    a_data = a.data
    norm = np.sqrt(np.sum(np.square(a_data), axis=-1, keepdims=True))
    safe = np.where(norm > 0, norm, 1)
    return _record(
        OpKind.ROW_L2_NORM,
        norm,
        (a,),
        lambda g: (np.where(norm > 0, g * a_data / safe, 0),),
    )


def row_l2_normalize(a: Tensor) -> Tensor:
    """Scale each row to unit norm; zero rows stay zero."""
    norm = np.sqrt(np.sum(np.square(a.data), axis=-1, keepdims=True))
    safe = np.where(norm > 0, norm, 1)
    out = np.where(norm > 0, a.data / safe, 0)

    def vjp(g: Array) -> tuple[Array]:
        projected = g - out * np.sum(g * out, axis=-1, keepdims=True)
        return (np.where(norm > 0, projected / safe, 0),)

    return _record(OpKind.ROW_L2_NORMALIZE, out, (a,), vjp)


def row_sum_normalize(a: Tensor) -> Tensor:
    """Divide each row by its sum; an all-zero row becomes the uniform row 1/L."""
    total = np.sum(a.data, axis=-1, keepdims=True)
    degenerate = total == 0
    safe = np.where(degenerate, 1, total)
    out = np.where(degenerate, 1 / a.shape[-1], a.data / safe)

    def vjp(g: Array) -> tuple[Array]:
        centred = g - np.sum(g * out, axis=-1, keepdims=True)
        return (np.where(degenerate, 0, centred / safe),)

    return _record(OpKind.ROW_SUM_NORMALIZE, out, (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    out = _softmax(a.data, axis=axis)
    return _record(
        OpKind.SOFTMAX,
        out,
        (a,),
        lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),),
    )


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    out = _log_softmax(a.data, axis=axis)
    return _record(
        OpKind.LOG_SOFTMAX,
        out,
        (a,),
        lambda g: (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),),
    )


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return _record(OpKind.SIGMOID, out, (a,), lambda g: (g * out * (1 - out),))


def relu(a: Tensor) -> Tensor:
    a_data = a.data
    return _record(
        OpKind.RELU,
        np.maximum(a_data, 0),
        (a,),
        lambda g: (g * (a_data > 0),),
    )


def _reduce(
    kind: OpKind,
    a: Tensor,
    axis: int | None,
    *,
    keepdims: bool,
    scale: bool,
) -> Tensor:
    shape = a.shape
    if axis is None:
        out = a.data.sum()
        count = a.data.size
    else:
        out = a.data.sum(axis=axis, keepdims=keepdims)
        count = shape[axis]
    if scale:
        out = out / max(count, 1)
    factor = 1 / max(count, 1) if scale else 1

    def vjp(g: Array) -> tuple[Array]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * factor, shape).copy(),)

    return _record(kind, np.asarray(out), (a,), vjp)


def mean(a: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
    return _reduce(OpKind.MEAN, a, axis, keepdims=keepdims, scale=True)


def sum_(a: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
    return _reduce(OpKind.SUM, a, axis, keepdims=keepdims, scale=False)


def mean_pool_over_time(a: Tensor) -> Tensor:
    """Average a [..., L, d] sequence over its time axis, giving [..., d]."""
    if a.ndim < 2:  # noqa: PLR2004
        raise ShapeError(OpKind.MEAN_POOL, a.shape)
    shape = a.shape
    length = shape[-2]

    def vjp(g: Array) -> tuple[Array]:
        return (np.broadcast_to(np.expand_dims(g, -2) / length, shape).copy(),)

    return _record(OpKind.MEAN_POOL, a.data.mean(axis=-2), (a,), vjp)


def abs_(a: Tensor) -> Tensor:
    a_data = a.data
    return _record(OpKind.ABS, np.abs(a_data), (a,), lambda g: (g * np.sign(a_data),))


def square(a: Tensor) -> Tensor:
    a_data = a.data
    return _record(OpKind.SQUARE, np.square(a_data), (a,), lambda g: (2 * g * a_data,))


def log(a: Tensor) -> Tensor:
    a_data = a.data
    return _record(OpKind.LOG, np.log(a_data), (a,), lambda g: (g / a_data,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(OpKind.EXP, out, (a,), lambda g: (g * out,))


def _select(kind: OpKind, a: Tensor, b: Tensor, take_a: Array) -> Tensor:
    sa, sb = a.shape, b.shape
    return _record(
        kind,
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(take_a, g, 0), sa),
            _unbroadcast(np.where(take_a, 0, g), sb),
        ),
    )


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; ties send the gradient to a."""
    _one_way_broadcast(OpKind.MINIMUM, a.shape, b.shape)
    return _select(OpKind.MINIMUM, a, b, a.data <= b.data)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise maximum; ties send the gradient to a."""
    _one_way_broadcast(OpKind.MAXIMUM, a.shape, b.shape)
    return _select(OpKind.MAXIMUM, a, b, a.data >= b.data)


def clip(a: Tensor, low: float | None = None, high: float | None = None) -> Tensor:
    a_data = a.data
    inside = np.ones(a.shape, dtype=bool)
    if low is not None:
        inside &= a_data > low
    if high is not None:
        inside &= a_data < high
    return _record(
        OpKind.CLIP,
        np.clip(a_data, low, high),
        (a,),
        lambda g: (np.where(inside, g, 0),),
    )


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-row affine map x @ w + b for x of shape [..., L, d_in]."""
    if x.ndim < 1 or w.ndim != 2 or x.shape[-1] != w.shape[0]:  # noqa: PLR2004
        raise ShapeError(OpKind.AFFINE, x.shape, w.shape)
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(OpKind.AFFINE, w.shape, b.shape)
    x_data, w_data = x.data, w.data
    out = x_data @ w_data
    if b is not None:
        out = out + b.data

    def vjp(g: Array) -> tuple[Array | None, ...]:
        flat_x = x_data.reshape(-1, x_data.shape[-1])
        flat_g = g.reshape(-1, g.shape[-1])
        grads: list[Array | None] = [g @ w_data.T, flat_x.T @ flat_g]
        if b is not None:
            grads.append(flat_g.sum(axis=0))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _record(OpKind.AFFINE, out, inputs, vjp)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            stack.extend(
                (t, False)
                for t in tensor.node.inputs
                if t.requires_grad and id(t) not in visited
            )
    return order


def backward(output: Tensor) -> GradientMap:
    """Populate d(output)/d(leaf) on every reachable leaf and free the tape."""
    if output.shape != ():
        raise ShapeError("backward", output.shape, ())
    gradients = GradientMap()
    if not output.requires_grad:
        return gradients
    pending: dict[int, Array] = {id(output): np.ones((), dtype=output.data.dtype)}
    for tensor in reversed(_topological_order(output)):
        g = pending.pop(id(tensor), None)
        if g is None:
            continue
        node = tensor.node
        if node is None:
            tensor.grad = g
            gradients[tensor] = g
            continue
        for source, grad in zip(node.inputs, node.vjp(g), strict=True):
            if grad is None or not source.requires_grad:
                continue
            key = id(source)
            pending[key] = grad if key not in pending else pending[key] + grad
        tensor.node = None
    return gradients


def grad_check(
    function: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    *,
    exclude_kinks: bool = True,
) -> float:
    """Compare backward() against central differences.

    With exclude_kinks, entries whose one-sided differences disagree (a kink
    of relu, abs, clip or min/max inside the stencil) are skipped.

    Parameters
    ----------
    function : Callable[[], Tensor]
        recomputes a scalar from the current data of ``inputs``
    inputs : Sequence[Tensor]
        perturbed in place one entry at a time and restored afterwards
    eps : float, optional
        half-width of the stencil, by default 1e-6
    exclude_kinks : bool, optional
        by default True

    Returns
    -------
    float
        max |analytic - numeric| / max(1, |analytic|, |numeric|) over every
        entry of every input
    """
    if eps <= 0:
        msg = f"eps must be positive, got {eps}"
        raise ValueError(msg)
    for t in inputs:
        t.requires_grad = True
    value = function()
    if value.shape != ():
        raise ShapeError("grad_check", value.shape, ())
    if not np.isfinite(value.data):
        msg = f"function is not finite at the evaluation point ({value.item()})"
        raise NumericError(msg)
    centre = value.item()
    analytic = backward(value)

    def _evaluate() -> float:
        with no_grad():
            return function().item()

    worst = 0.0
    skipped = 0
    for t in inputs:
        g = analytic[t]
        for index in np.ndindex(t.shape):
            original = t.data[index]
            t.data[index] = original + eps
            plus = _evaluate()
            t.data[index] = original - eps
            minus = _evaluate()
            t.data[index] = original
            forward_diff = (plus - centre) / eps
            backward_diff = (centre - minus) / eps
            if exclude_kinks and abs(forward_diff - backward_diff) > 1e-3 * max(
                1.0,
                abs(forward_diff),
                abs(backward_diff),
            ):
                skipped += 1
                continue
            numeric = (plus - minus) / (2 * eps)
            a = float(g[index])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    if skipped:
        logger.debug("grad_check skipped %d kink entries", skipped)
    return worst
