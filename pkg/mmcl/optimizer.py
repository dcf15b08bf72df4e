from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Self

import numpy as np

from mmcl.errors import NumericError

if TYPE_CHECKING:
    from collections.abc import Mapping

    from mmcl.diffcore import Array, GradientMap, Tensor


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class AdamState:
    """Moment buffers of Adam, keyed by parameter name."""

    hyper: AdamHyper = field(default_factory=AdamHyper)
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Array],
    state: AdamState,
) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    Only parameters named in grads are updated. Every gradient is checked
    before any parameter changes.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            msg = f"gradient for {name} has shape {g.shape}, expected {params[name].shape}"
            raise ValueError(msg)
        if not np.all(np.isfinite(g)):
            msg = f"non-finite gradient for parameter {name}"
            raise NumericError(msg)

    hyper = state.hyper
    state.step += 1
    correction1 = 1 - hyper.beta1**state.step
    correction2 = 1 - hyper.beta2**state.step
    for name, g in grads.items():
        data = params[name].data
        m = state.m.setdefault(name, np.zeros_like(data))
        v = state.v.setdefault(name, np.zeros_like(data))
        m *= hyper.beta1
        m += (1 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1 - hyper.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        data -= hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.epsilon)
    return state


class Adam:
    """Adam over a fixed, named set of parameters."""

    def __init__(
        self: Self,
        parameters: Mapping[str, Tensor],
        hyper: AdamHyper | None = None,
    ) -> None:
        self.parameters = dict(parameters)
        self.state = AdamState(AdamHyper() if hyper is None else hyper)

    def step(self: Self, gradients: GradientMap) -> None:
        grads = {
            name: gradients[p] for name, p in self.parameters.items() if p in gradients
        }
        adam_step(self.parameters, grads, self.state)
