"""Complementary specific feature mining with a centralised actor-critic.

Each modality owns a policy that assigns a temporal weight in (0, 1) to every
timestep of its specific features. A critic that sees all modalities'
specific features and actions scores the joint behaviour; the critic is
trained on TD targets and the policies ascend its value together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Self

import numpy as np
from scipy.special import softmax

from mmcl import diffcore as dc
from mmcl.config import RewardSpec, Task
from mmcl.errors import NumericError, ShapeError
from mmcl.layers import (
    FeedForward,
    Linear,
    SelfAttention,
    frozen,
    glorot_uniform,
    init_feed_forward,
    init_linear,
    init_self_attention,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from mmcl.diffcore import Array, Tensor


@dataclass
class PolicyModel:
    """A fully connected layer d -> 1 applied at every timestep."""

    w: Tensor
    b: Tensor

    @property
    def d(self: Self) -> int:
        return self.w.shape[0]


def init_policy(rng: np.random.Generator, d: int) -> PolicyModel:
    return PolicyModel(glorot_uniform(rng, d, 1), dc.parameter(np.zeros(1)))


def policy_act(zs: Tensor, policy: PolicyModel) -> Tensor:
    """Temporal weights A = sigmoid(zs w + b) as a column of shape [..., L, 1]."""
    zs = dc.as_tensor(zs)
    if zs.shape[-1] != policy.d:
        raise ShapeError("policy_act", zs.shape, policy.w.shape)
    return dc.sigmoid(dc.affine(zs, policy.w, policy.b))


def apply_action(zs: Tensor, a: Tensor | Array) -> Tensor:
    """Scale row i of zs by a_i; a may be a column [..., L, 1] or a plain vector."""
    zs = dc.as_tensor(zs)
    a = dc.as_tensor(a)
    if a.ndim == zs.ndim - 1:
        a = dc.reshape(a, (*a.shape, 1))
    if a.shape != (*zs.shape[:-1], 1):
        raise ShapeError("apply_action", zs.shape, a.shape)
    return dc.mul(zs, a)


@dataclass
class CriticModel:
    """Centralised critic: projection, one multi-head encoder block, scalar head."""

    projection: Linear
    attention: SelfAttention
    ffn: FeedForward
    head: Linear
    d: int

    @property
    def n_modalities(self: Self) -> int:
        return self.projection.in_features // (self.d + 1)


def init_critic(
    rng: np.random.Generator,
    d: int,
    *,
    n_modalities: int = 3,
    d_critic: int | None = None,
    heads: int = 8,
) -> CriticModel:
    width = d if d_critic is None else d_critic
    if width % heads != 0:
        msg = f"critic width {width} is not divisible by {heads} heads"
        raise ValueError(msg)
    return CriticModel(
        init_linear(rng, n_modalities * (d + 1), width),
        init_self_attention(rng, width, heads),
        init_feed_forward(rng, width, 2 * width),
        init_linear(rng, width, 1),
        d,
    )


def critic_eval(
    specifics: Sequence[Tensor],
    actions: Sequence[Tensor],
    critic: CriticModel,
) -> Tensor:
    """Global value Q of the joint behaviour, one scalar per sample."""
    if len(specifics) != len(actions) or not specifics:
        msg = "critic_eval needs one action per specific representation"
        raise ValueError(msg)
    blocks: list[Tensor] = []
    for zs, a in zip(specifics, actions, strict=True):
        zs, a = dc.as_tensor(zs), dc.as_tensor(a)
        if a.shape != (*zs.shape[:-1], 1) or zs.shape != specifics[0].shape:
            raise ShapeError("critic_eval", zs.shape, a.shape)
        blocks.extend((zs, a))
    x = dc.concat(blocks, axis=-1)
    if x.shape[-1] != critic.projection.in_features:
        raise ShapeError("critic_eval", x.shape, critic.projection.w.shape)
    h = critic.projection(x)
    h = h + critic.attention(h)
    h = h + critic.ffn(h)
    q = critic.head(dc.mean_pool_over_time(h))
    return dc.reshape(q, q.shape[:-1])


@dataclass(frozen=True)
class TdContext:
    """Bootstrap information for one stage.

    q_next is the detached mean critic value of the next stage; a terminal
    stage has none.
    """

    q_next: float | None = None
    is_terminal: bool = False

    def __post_init__(self: Self) -> None:
        if self.is_terminal and self.q_next is not None:
            msg = "a terminal stage cannot carry a bootstrap value"
            raise ValueError(msg)

    @classmethod
    def terminal(cls: type[Self]) -> Self:
        return cls(None, is_terminal=True)


def compute_reward(
    prediction: Array | float,
    label: Array | float,
    spec: RewardSpec,
) -> Array:
    """Detached reward: -|y - y'| for regression, p(true class) for classification.

    Works on a single sample (scalar prediction or a length-C logit vector) or
    on a batch (shape [B] or [B, C]).
    """
    prediction = np.asarray(prediction, dtype=np.float64)
    label = np.asarray(label)
    if spec.task == Task.REGRESSION:
        return -np.abs(label.astype(np.float64) - prediction)
    n_classes = spec.output_size
    if prediction.shape[-1] != n_classes:
        raise ShapeError("compute_reward", prediction.shape, (n_classes,))
    classes = label.astype(np.int64)
    if np.any(classes < 0) or np.any(classes >= n_classes):
        msg = f"class index out of range [0, {n_classes}): {label}"
        raise ValueError(msg)
    probabilities = softmax(prediction, axis=-1)
    return np.take_along_axis(probabilities, classes[..., None], axis=-1)[..., 0]


def td_target(r: Array | float, ctx: TdContext, spec: RewardSpec) -> Array:
    """Q' = R + gamma Q'' (Q'' = 0 at a terminal stage)."""
    r = np.asarray(r, dtype=np.float64)
    q_next = 0.0 if ctx.q_next is None else ctx.q_next
    if not (np.all(np.isfinite(r)) and np.isfinite(q_next)):
        msg = f"non-finite TD inputs (reward={r}, q_next={q_next})"
        raise NumericError(msg)
    return r + spec.gamma * q_next


def critic_loss(q: Tensor, qprime: Array | float) -> Tensor:
    """Mean squared TD error (Q - Q')^2."""
    return dc.mean(dc.square(q - dc.constant(qprime)))


def policy_objective(q: Tensor) -> Tensor:
    """-Q, averaged over the batch."""
    return dc.negate(dc.mean(q))


@dataclass(frozen=True)
class ActorCriticTerms:
    policy_loss: Tensor
    critic_loss: Tensor
    q: Array
    qprime: Array


def actor_critic_terms(  # noqa: PLR0913
    specifics: Sequence[Tensor],
    actions: Sequence[Tensor],
    policies: Sequence[PolicyModel],
    critic: CriticModel,
    rewards: Array,
    ctx: TdContext,
    spec: RewardSpec,
    *,
    target_critic: CriticModel | None = None,
) -> ActorCriticTerms:
    """Critic TD loss and policy objective with disjoint gradient paths.

    The critic sees detached features and actions, so its loss only reaches
    critic parameters. The policies are replayed on detached features and
    scored by a frozen critic (by default a view of ``critic``), so their
    objective only reaches policy parameters.

    Parameters
    ----------
    specifics, actions : Sequence[Tensor]
        per-modality specific features and the actions taken on them
    policies : Sequence[PolicyModel]
    critic : CriticModel
    rewards : Array
        detached per-sample rewards
    ctx : TdContext
    spec : RewardSpec
    target_critic : CriticModel | None, optional
        scores the replayed policies, by default a frozen view of ``critic``

    Returns
    -------
    ActorCriticTerms
    """
    observed = [s.detach() for s in specifics]
    q = critic_eval(observed, [a.detach() for a in actions], critic)
    qprime = td_target(rewards, ctx, spec)
    replayed = [policy_act(s, p) for s, p in zip(observed, policies, strict=True)]
    scorer = frozen(critic) if target_critic is None else frozen(target_critic)
    q_policy = critic_eval(observed, replayed, scorer)
    return ActorCriticTerms(
        policy_loss=policy_objective(q_policy),
        critic_loss=critic_loss(q, qprime),
        q=q.data.copy(),
        qprime=np.asarray(qprime),
    )
