"""End-to-end assembly: projection, decoupling, enhancement, mining, fusion, head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Self

import numpy as np

from mmcl import diffcore as dc
from mmcl.config import Branches, FusionMode, MmclConfig, RewardSpec, Task
from mmcl.decoupling import DecoupledPair, decouple
from mmcl.enhancement import EnhanceBlock, enhance, init_enhance_block
from mmcl.errors import DataError, NumericError, ShapeError
from mmcl.layers import Linear, init_linear, named_parameters
from mmcl.mining import (
    CriticModel,
    PolicyModel,
    apply_action,
    init_critic,
    init_policy,
    policy_act,
)

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from mmcl.diffcore import Array, Tensor


@dataclass
class MmclModel:
    """Trainable parts of MMCL, keyed by modality code ("v", "a", "t").

    ``critic`` is only present while training; ``fusion_logits`` only for
    weighted-sum fusion.
    """

    modality_dims: dict[str, int]
    projections: dict[str, Linear]
    enhancers: dict[str, EnhanceBlock]
    policies: dict[str, PolicyModel]
    head: Linear
    critic: CriticModel | None = None
    fusion_logits: Tensor | None = None

    @property
    def modalities(self: Self) -> tuple[str, ...]:
        return tuple(self.projections)

    @property
    def d(self: Self) -> int:
        return next(iter(self.projections.values())).out_features

    def parameters(self: Self) -> dict[str, Tensor]:
        return named_parameters(
            {
                "projections": self.projections,
                "enhancers": self.enhancers,
                "policies": self.policies,
                "critic": self.critic,
                "fusion_logits": self.fusion_logits,
                "head": self.head,
            },
        )


def _block_width(config: MmclConfig) -> int:
    return config.d if config.branches != Branches.BOTH else 2 * config.d


def fused_width(config: MmclConfig) -> int:
    width = _block_width(config)
    if config.fusion == FusionMode.CONCAT:
        return width * len(config.modalities)
    return width


def init_model(
    config: MmclConfig,
    modality_dims: Mapping[str, int],
    rng: np.random.Generator | None = None,
) -> MmclModel:
    """Initialise every trainable part from the config seed."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    missing = [str(m) for m in config.modalities if m not in modality_dims]
    if missing:
        msg = f"no feature dimension given for modality {', '.join(missing)}"
        raise DataError(msg)
    projections: dict[str, Linear] = {}
    enhancers: dict[str, EnhanceBlock] = {}
    policies: dict[str, PolicyModel] = {}
    for m in map(str, config.modalities):
        projections[m] = init_linear(rng, modality_dims[m], config.d)
        if config.use_cce and config.branches != Branches.SPECIFIC:
            enhancers[m] = init_enhance_block(
                rng,
                config.d,
                config.ff_dim,
                heads=config.enhance_heads,
            )
        if config.mines_specific:
            policies[m] = init_policy(rng, config.d)
    critic = None
    if config.mines_specific:
        critic = init_critic(
            rng,
            config.d,
            n_modalities=len(config.modalities),
            d_critic=config.critic_dim,
            heads=config.critic_heads,
        )
    fusion_logits = None
    if config.fusion == FusionMode.WEIGHTED_SUM:
        fusion_logits = dc.parameter(np.zeros(len(config.modalities)))
    head = init_linear(rng, fused_width(config), config.reward_spec.output_size)
    return MmclModel(
        modality_dims={str(m): modality_dims[m] for m in config.modalities},
        projections=projections,
        enhancers=enhancers,
        policies=policies,
        head=head,
        critic=critic,
        fusion_logits=fusion_logits,
    )


def strip_critic(model: MmclModel) -> MmclModel:
    """The inference form of a model: identical except that the critic is gone."""
    return dataclasses.replace(model, critic=None)


def project(model: MmclModel, x: Tensor | Array, modality: str) -> Tensor:
    """Map one modality's [..., L, d_m] features into the shared d-dim subspace."""
    x = dc.as_tensor(x)
    projection = model.projections[modality]
    if x.ndim < 2 or x.shape[-1] != projection.in_features:  # noqa: PLR2004
        msg = f"project[{modality}]"
        raise ShapeError(msg, x.shape, projection.w.shape)
    return projection(x)


@dataclass
class ForwardTrace:
    """Every intermediate of one forward pass.

    ``actions`` is empty when specific feature mining is disabled, and
    ``decoupled`` is empty when decoupling is skipped.
    """

    z: dict[str, Tensor]
    specific: dict[str, Tensor]
    common: dict[str, Tensor]
    enhanced: dict[str, Tensor]
    complementary: dict[str, Tensor]
    fused: Tensor
    prediction: Tensor
    decoupled: dict[str, DecoupledPair] = field(default_factory=dict)
    actions: dict[str, Tensor] = field(default_factory=dict)


def _check_sample(
    sample: Mapping[str, Tensor | Array],
    config: MmclConfig,
) -> dict[str, Tensor]:
    missing = [str(m) for m in config.modalities if m not in sample]
    if missing:
        msg = f"sample is missing modality {', '.join(missing)}"
        raise DataError(msg)
    inputs = {str(m): dc.as_tensor(sample[m]) for m in config.modalities}
    leading = {x.shape[:-1] for x in inputs.values()}
    if len(leading) != 1:
        raise ShapeError("forward", *(x.shape for x in inputs.values()))
    return inputs


def fuse(
    parts: Sequence[Tensor],
    mode: FusionMode,
    logits: Tensor | None = None,
) -> Tensor:
    """Join per-modality blocks by concatenation or a softmax-weighted sum."""
    if not parts:
        msg = "fuse needs at least one block"
        raise ValueError(msg)
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise ShapeError("fuse", *shapes)
    if FusionMode(mode) == FusionMode.CONCAT:
        return dc.concat(parts, axis=-1)
    if logits is None or logits.shape != (len(parts),):
        raise ShapeError("fuse", (len(parts),), () if logits is None else logits.shape)
    weights = dc.split(dc.softmax(logits), len(parts))
    fused = parts[0] * weights[0]
    for part, weight in zip(parts[1:], weights[1:], strict=True):
        fused = fused + part * weight
    return fused


def forward(
    model: MmclModel,
    sample: Mapping[str, Tensor | Array],
    config: MmclConfig,
) -> ForwardTrace:
    """Run the full pipeline on one sample ([L, d_m] inputs) or a batch ([B, L, d_m]).

    Parameters
    ----------
    model : MmclModel
    sample : Mapping[str, Tensor | Array]
        features keyed by modality code
    config : MmclConfig
        selects the enabled modules, comparison and fusion

    Returns
    -------
    ForwardTrace
    """
    inputs = _check_sample(sample, config)
    modalities = [str(m) for m in config.modalities]
    z = {m: project(model, inputs[m], m) for m in modalities}

    decoupled: dict[str, DecoupledPair] = {}
    if config.use_csd and len(modalities) > 1:
        for m in modalities:
            others = [z[o] for o in modalities if o != m]
            decoupled[m] = decouple(z[m], others, config.compare_mode)
        common = {m: decoupled[m].common for m in modalities}
        specific = {m: decoupled[m].specific for m in modalities}
    else:
        common, specific = dict(z), dict(z)

    enhanced = {
        m: enhance(common[m], model.enhancers[m]) if m in model.enhancers else common[m]
        for m in modalities
    }

    actions: dict[str, Tensor] = {}
    if model.policies and config.mines_specific:
        actions = {m: policy_act(specific[m], model.policies[m]) for m in modalities}
        complementary = {m: apply_action(specific[m], actions[m]) for m in modalities}
    else:
        complementary = dict(specific)

    match config.branches:
        case Branches.COMMON:
            blocks = [enhanced[m] for m in modalities]
        case Branches.SPECIFIC:
            blocks = [complementary[m] for m in modalities]
        case _:
            blocks = [dc.concat([complementary[m], enhanced[m]]) for m in modalities]
    fused = fuse(blocks, config.fusion, model.fusion_logits)

    prediction = model.head(dc.mean_pool_over_time(fused))
    if config.task == Task.REGRESSION:
        prediction = dc.reshape(prediction, prediction.shape[:-1])
    return ForwardTrace(
        z=z,
        specific=specific,
        common=common,
        enhanced=enhanced,
        complementary=complementary,
        fused=fused,
        prediction=prediction,
        decoupled=decoupled,
        actions=actions,
    )


def prediction_loss(
    prediction: Tensor,
    label: Array | float,
    spec: RewardSpec,
) -> Tensor:
    """Mean absolute error for regression, mean cross-entropy for classification."""
    label = np.asarray(label)
    if spec.task == Task.REGRESSION:
        if prediction.shape != label.shape:
            raise ShapeError("prediction_loss", prediction.shape, label.shape)
        return dc.mean(dc.abs_(prediction - dc.constant(label)))
    n_classes = spec.output_size
    if prediction.shape != (*label.shape, n_classes):
        raise ShapeError("prediction_loss", prediction.shape, label.shape)
    classes = label.astype(np.int64)
    if np.any(classes < 0) or np.any(classes >= n_classes):
        msg = f"class index out of range [0, {n_classes}): {label}"
        raise ValueError(msg)
    one_hot = dc.constant(np.eye(n_classes)[classes])
    log_likelihood = dc.sum_(dc.log_softmax(prediction) * one_hot, axis=-1)
    return dc.negate(dc.mean(log_likelihood))


def total_loss(
    lp: Tensor | float,
    lpolicy: Tensor | float,
    lcritic: Tensor | float,
    config: MmclConfig,
) -> Tensor:
    """alpha1 * Lp + alpha2 * (Lpolicy + Lcritic)."""
    terms = {
        "prediction": dc.as_tensor(lp),
        "policy": dc.as_tensor(lpolicy),
        "critic": dc.as_tensor(lcritic),
    }
    for name, term in terms.items():
        if not np.all(np.isfinite(term.data)):
            msg = f"non-finite {name} loss ({term.data})"
            raise NumericError(msg)
    return config.alpha1 * terms["prediction"] + config.alpha2 * (
        terms["policy"] + terms["critic"]
    )


def infer(
    model: MmclModel,
    sample: Mapping[str, Tensor | Array],
    config: MmclConfig,
) -> Array:
    """Prediction of the trained pipeline; the critic plays no part."""
    with dc.no_grad():
        return forward(model, sample, config).prediction.data
