"""Finite-difference verification of every primitive and of the end-to-end loss."""

from __future__ import annotations

import logging
from collections.abc import Callable

import numpy as np

from mmcl import diffcore as dc
from mmcl.config import MmclConfig, Task
from mmcl.decoupling import decouple
from mmcl.diffcore import Tensor
from mmcl.enhancement import enhance, init_enhance_block
from mmcl.layers import frozen, named_parameters
from mmcl.mining import (
    TdContext,
    actor_critic_terms,
    compute_reward,
    critic_eval,
    init_critic,
)
from mmcl.model import forward, init_model, prediction_loss, total_loss
from mmcl.util import timed

logger = logging.getLogger(__name__)

GradCase = tuple[Callable[[], Tensor], list[Tensor]]

TINY_DIMS = {"v": 3, "a": 4, "t": 5}


def tiny_config(**overrides: object) -> MmclConfig:
    """L=4-ready model with d=8, d_ff=16 and an 8-head critic of width 8."""
    values: dict[str, object] = {
        "d": 8,
        "d_ff": 16,
        "d_critic": 8,
        "critic_heads": 8,
        "batch_size": 2,
        "epochs": 1,
        **overrides,
    }
    return MmclConfig(**values)  # type: ignore[arg-type]


def _case(
    rng: np.random.Generator,
    build: Callable[..., Tensor],
    *shapes: tuple[int, ...],
    positive: bool = False,
) -> GradCase:
    inputs = [
        dc.Tensor(rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s))
        for s in shapes
    ]
    with dc.no_grad():
        out_shape = build(*inputs).shape
    weights = dc.constant(rng.normal(size=out_shape))
    return (lambda: dc.sum_(build(*inputs) * weights)), inputs


def primitive_cases(rng: np.random.Generator) -> dict[str, GradCase]:
    batched = (2, 3, 4)
    return {
        "matmul": _case(rng, dc.matmul, batched, (4, 5)),
        "transpose": _case(rng, dc.transpose, (3, 4)),
        "add": _case(rng, dc.add, batched, (4,)),
        "sub": _case(rng, dc.sub, (3, 4), (3, 1)),
        "mul": _case(rng, dc.mul, batched, (2, 3, 1)),
        "divide": _case(rng, dc.divide, (3, 4), (3, 4), positive=True),
        "scalar-mul": _case(rng, lambda a: dc.scalar_mul(a, 1.7), (3, 4)),
        "scalar-add": _case(rng, lambda a: dc.scalar_add(a, -0.3), (3, 4)),
        "negate": _case(rng, dc.negate, (3, 4)),
        "concat": _case(rng, lambda a, b: dc.concat([a, b]), (3, 2), (3, 4)),
        "split": _case(rng, lambda a: dc.concat(dc.split(a, [1, 3])[::-1]), (3, 4)),
        "reshape": _case(rng, lambda a: dc.reshape(a, (2, 6)), (3, 4)),
        "row-l2-norm": _case(rng, dc.row_l2_norm, batched),
        "row-l2-normalize": _case(rng, dc.row_l2_normalize, batched),
        "row-sum-normalize": _case(rng, dc.row_sum_normalize, (3, 4), positive=True),
        "softmax": _case(rng, dc.softmax, batched),
        "log-softmax": _case(rng, dc.log_softmax, (3, 4)),
        "sigmoid": _case(rng, dc.sigmoid, (3, 4)),
        "relu": _case(rng, dc.relu, (3, 4)),
        "mean": _case(rng, lambda a: dc.mean(a, axis=-1, keepdims=True), batched),
        "sum": _case(rng, lambda a: dc.sum_(a, axis=0), (3, 4)),
        "mean-pool-over-time": _case(rng, dc.mean_pool_over_time, batched),
        "abs": _case(rng, dc.abs_, (3, 4)),
        "square": _case(rng, dc.square, (3, 4)),
        "log": _case(rng, dc.log, (3, 4), positive=True),
        "exp": _case(rng, dc.exp, (3, 4)),
        "minimum": _case(rng, dc.minimum, (3, 4), (3, 4)),
        "maximum": _case(rng, dc.maximum, (3, 4), (3, 4)),
        "clip": _case(rng, lambda a: dc.clip(a, -0.5, 0.5), (3, 4)),
        "affine": _case(rng, dc.affine, batched, (4, 5), (5,)),
    }


def module_cases(rng: np.random.Generator) -> dict[str, GradCase]:
    length, d = 4, 8

    def _decoupled(z: Tensor, o1: Tensor, o2: Tensor) -> Tensor:
        pair = decouple(z, [o1, o2])
        return dc.concat([pair.common, pair.specific])

    block = init_enhance_block(rng, d, 16)
    z = dc.Tensor(rng.normal(size=(length, d)))
    enhance_weights = dc.constant(rng.normal(size=(length, d)))

    critic = init_critic(rng, d, n_modalities=3, d_critic=8, heads=8)
    specifics = [dc.Tensor(rng.normal(size=(length, d))) for _ in range(3)]
    actions = [dc.Tensor(rng.uniform(0.1, 0.9, size=(length, 1))) for _ in range(3)]

    return {
        "decouple": _case(rng, _decoupled, (length, d), (length, d), (length, d)),
        "enhance": (
            lambda: dc.sum_(enhance(z, block) * enhance_weights),
            [z, *named_parameters(block).values()],
        ),
        "critic": (
            lambda: dc.sum_(critic_eval(specifics, actions, critic)),
            [*specifics, *actions, *named_parameters(critic).values()],
        ),
    }


def end_to_end_case(rng: np.random.Generator, config: MmclConfig | None = None) -> GradCase:
    """The composite training loss with its stop-gradient inputs held at their centre values."""
    config = tiny_config() if config is None else config
    length, batch = 4, 2
    features = {m: rng.normal(size=(batch, length, d)) for m, d in TINY_DIMS.items()}
    spec = config.reward_spec
    if spec.task == Task.CLASSIFICATION:
        labels = rng.integers(0, spec.output_size, size=batch)
    else:
        labels = rng.normal(size=batch)
    model = init_model(config, TINY_DIMS, rng)
    modalities = [str(m) for m in config.modalities]

    with dc.no_grad():
        trace = forward(model, features, config)
    rewards = compute_reward(trace.prediction.data, labels, spec)
    observed = [dc.constant(trace.specific[m].data.copy()) for m in modalities]
    taken = [dc.constant(trace.actions[m].data.copy()) for m in trace.actions]
    target = frozen(model.critic, copy=True)
    ctx = TdContext(0.3)

    def loss() -> Tensor:
        live = forward(model, features, config)
        lp = prediction_loss(live.prediction, labels, spec)
        if model.critic is None:
            return total_loss(lp, 0.0, 0.0, config)
        terms = actor_critic_terms(
            observed,
            taken,
            [model.policies[m] for m in modalities],
            model.critic,
            rewards,
            ctx,
            spec,
            target_critic=target,
        )
        return total_loss(lp, terms.policy_loss, terms.critic_loss, config)

    return loss, list(model.parameters().values())


@timed
def run_gradient_suite(seed: int = 0) -> dict[str, float]:
    """Max relative finite-difference error per case."""
    rng = np.random.default_rng(seed)
    cases = {**primitive_cases(rng), **module_cases(rng), "end-to-end": end_to_end_case(rng)}
    results: dict[str, float] = {}
    for name, (function, inputs) in cases.items():
        results[name] = dc.grad_check(function, inputs)
        logger.info("grad_check %-20s %.3e", name, results[name])
    return results
