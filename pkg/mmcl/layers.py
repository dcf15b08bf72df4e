"""Parameter containers and the building blocks shared by every trainable part."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Self, TypeVar

import numpy as np

from mmcl import diffcore as dc
from mmcl.diffcore import Tensor
from mmcl.errors import ShapeError

if TYPE_CHECKING:
    from collections.abc import Iterator

_M = TypeVar("_M")


def glorot_uniform(
    rng: np.random.Generator,
    fan_in: int,
    fan_out: int,
    name: str | None = None,
) -> Tensor:
    limit = np.sqrt(6 / (fan_in + fan_out))
    return dc.parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name)


def _children(module: Any) -> Iterator[tuple[str, Any]]:  # noqa: ANN401
    if isinstance(module, dict):
        yield from ((str(k), v) for k, v in module.items())
    elif isinstance(module, list | tuple):
        yield from ((str(i), v) for i, v in enumerate(module))
    elif dataclasses.is_dataclass(module):
        yield from ((f.name, getattr(module, f.name)) for f in dataclasses.fields(module))


def named_parameters(module: Any, prefix: str = "") -> dict[str, Tensor]:  # noqa: ANN401
    """Collect every Tensor inside nested dataclasses, dicts and lists."""
    out: dict[str, Tensor] = {}
    for name, child in _children(module):
        key = f"{prefix}.{name}" if prefix else name
        if isinstance(child, Tensor):
            out[key] = child
        elif child is not None:
            out.update(named_parameters(child, key))
    return out


def frozen(module: _M, *, copy: bool = False) -> _M:
    """Copy of module whose tensors are cut from the graph.

    The tensors share data with module unless copy is set.
    """
    if isinstance(module, Tensor):
        if copy:
            return Tensor(module.data.copy(), name=module.name)  # type: ignore[return-value]
        return module.detach()  # type: ignore[return-value]
    if isinstance(module, dict):
        return {k: frozen(v, copy=copy) for k, v in module.items()}  # type: ignore[return-value]
    if isinstance(module, list):
        return [frozen(v, copy=copy) for v in module]  # type: ignore[return-value]
    if dataclasses.is_dataclass(module) and not isinstance(module, type):
        changes = {
            f.name: frozen(getattr(module, f.name), copy=copy)
            for f in dataclasses.fields(module)
            if f.init
        }
        return dataclasses.replace(module, **changes)  # type: ignore[return-value]
    return module


@dataclass
class Linear:
    """Per-timestep affine map x @ w + b."""

    w: Tensor
    b: Tensor

    @property
    def in_features(self: Self) -> int:
        return self.w.shape[0]

    @property
    def out_features(self: Self) -> int:
        return self.w.shape[1]

    def __call__(self: Self, x: Tensor) -> Tensor:
        return dc.affine(x, self.w, self.b)


def init_linear(rng: np.random.Generator, d_in: int, d_out: int) -> Linear:
    return Linear(glorot_uniform(rng, d_in, d_out), dc.parameter(np.zeros(d_out)))


def attention_weights(query: Tensor, key: Tensor) -> Tensor:
    """Row-stochastic scaled dot-product weights softmax(q k^T / sqrt(d))."""
    scale = 1 / np.sqrt(query.shape[-1])
    return dc.softmax((query @ dc.transpose(key)) * scale, axis=-1)


@dataclass
class SelfAttention:
    """Scaled dot-product self-attention split into heads along the feature axis."""

    query: Linear
    key: Linear
    value: Linear
    heads: int = 1

    def _projections(self: Self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if x.shape[-1] != self.query.in_features:
            raise ShapeError("self_attention", x.shape, self.query.w.shape)
        return self.query(x), self.key(x), self.value(x)

    def weights(self: Self, x: Tensor) -> list[Tensor]:
        q, k, _ = self._projections(x)
        return [
            attention_weights(qh, kh)
            for qh, kh in zip(
                dc.split(q, self.heads),
                dc.split(k, self.heads),
                strict=True,
            )
        ]

    def __call__(self: Self, x: Tensor) -> Tensor:
        q, k, v = self._projections(x)
        if self.heads == 1:
            return attention_weights(q, k) @ v
        outputs = [
            attention_weights(qh, kh) @ vh
            for qh, kh, vh in zip(
                dc.split(q, self.heads),
                dc.split(k, self.heads),
                dc.split(v, self.heads),
                strict=True,
            )
        ]
        return dc.concat(outputs, axis=-1)


def init_self_attention(
    rng: np.random.Generator,
    d: int,
    heads: int = 1,
) -> SelfAttention:
    if d % heads != 0:
        msg = f"width {d} is not divisible by {heads} heads"
        raise ValueError(msg)
    return SelfAttention(
        init_linear(rng, d, d),
        init_linear(rng, d, d),
        init_linear(rng, d, d),
        heads,
    )


@dataclass
class FeedForward:
    inner: Linear
    outer: Linear

    def __call__(self: Self, x: Tensor) -> Tensor:
        return self.outer(dc.relu(self.inner(x)))


def init_feed_forward(rng: np.random.Generator, d: int, d_ff: int) -> FeedForward:
    if d_ff < 1:
        msg = f"d_ff must be >= 1, got {d_ff}"
        raise ValueError(msg)
    return FeedForward(init_linear(rng, d, d_ff), init_linear(rng, d_ff, d))
