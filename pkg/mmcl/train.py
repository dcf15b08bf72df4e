"""The epoch loop: one joint Adam step per mini-batch on the composite loss.

Consecutive mini-batches of an epoch are the stages of the TD bootstrap: the
target of batch t uses the detached mean critic value of batch t + 1 under
the current parameters, and the last batch of an epoch is terminal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, TypedDict

import numpy as np
from tqdm import tqdm

from mmcl import diffcore as dc
from mmcl.config import MmclConfig, Task
from mmcl.errors import ConfigError, NumericError
from mmcl.mining import TdContext, actor_critic_terms, compute_reward, critic_eval
from mmcl.model import (
    MmclModel,
    forward,
    infer,
    init_model,
    prediction_loss,
    strip_critic,
    total_loss,
)
from mmcl.optimizer import Adam, AdamHyper
from mmcl.util import timed

if TYPE_CHECKING:
    from mmcl.data import MultimodalDataset
    from mmcl.diffcore import Array

logger = logging.getLogger(__name__)


class StepStats(TypedDict):
    loss: float
    prediction_loss: float
    policy_loss: float
    critic_loss: float
    mean_q: float
    mean_reward: float


class EpochStats(StepStats):
    epoch: int
    validation_loss: float | None


@dataclass
class TrainResult:
    """The inference model (critic removed) and the per-epoch history.

    ``training_model`` still holds the critic.
    """

    model: MmclModel
    history: list[EpochStats]
    training_model: MmclModel


def check_compatible(config: MmclConfig, dataset: MultimodalDataset) -> None:
    if len(dataset) == 0:
        msg = "cannot train on an empty dataset"
        raise ConfigError(msg)
    if config.task != dataset.task:
        msg = f"config task {config.task} does not match dataset task {dataset.task}"
        raise ConfigError(msg)
    if config.task == Task.CLASSIFICATION and config.num_classes != dataset.num_classes:
        msg = (
            f"config num_classes {config.num_classes} does not match "
            f"dataset num_classes {dataset.num_classes}"
        )
        raise ConfigError(msg)
    missing = [str(m) for m in config.modalities if m not in dataset.features]
    if missing:
        msg = f"dataset has no features for modality {', '.join(missing)}"
        raise ConfigError(msg)


def get_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[Array]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def bootstrap_value(
    model: MmclModel,
    features: dict[str, Array],
    config: MmclConfig,
) -> float:
    """Detached mean critic value of a batch under the current parameters."""
    if model.critic is None:
        return 0.0
    modalities = [str(m) for m in config.modalities]
    with dc.no_grad():
        trace = forward(model, features, config)
        q = critic_eval(
            [trace.specific[m] for m in modalities],
            [trace.actions[m] for m in modalities],
            model.critic,
        )
    return float(np.mean(q.data))


def training_step(
    model: MmclModel,
    optimizer: Adam,
    batch: tuple[dict[str, Array], Array],
    ctx: TdContext,
    config: MmclConfig,
) -> StepStats:
    """Forward, rewards, TD and policy terms, one backward and one Adam step."""
    features, labels = batch
    spec = config.reward_spec
    trace = forward(model, features, config)
    lp = prediction_loss(trace.prediction, labels, spec)
    rewards = compute_reward(trace.prediction.data, labels, spec)

    lpolicy: dc.Tensor | float = 0.0
    lcritic: dc.Tensor | float = 0.0
    mean_q = 0.0
    if model.critic is not None and trace.actions:
        modalities = [str(m) for m in config.modalities]
        terms = actor_critic_terms(
            [trace.specific[m] for m in modalities],
            [trace.actions[m] for m in modalities],
            [model.policies[m] for m in modalities],
            model.critic,
            rewards,
            ctx,
            spec,
        )
        lpolicy, lcritic = terms.policy_loss, terms.critic_loss
        mean_q = float(np.mean(terms.q))

    loss = total_loss(lp, lpolicy, lcritic, config)
    optimizer.step(dc.backward(loss))
    return StepStats(
        loss=loss.item(),
        prediction_loss=lp.item(),
        policy_loss=dc.as_tensor(lpolicy).item(),
        critic_loss=dc.as_tensor(lcritic).item(),
        mean_q=mean_q,
        mean_reward=float(np.mean(rewards)),
    )


def _run_epoch(
    model: MmclModel,
    optimizer: Adam,
    dataset: MultimodalDataset,
    config: MmclConfig,
    rng: np.random.Generator,
) -> StepStats:
    batches = get_batches(len(dataset), config.batch_size, rng)
    steps: list[StepStats] = []
    for t, indices in enumerate(batches):
        if t + 1 < len(batches):
            q_next = bootstrap_value(model, dataset.batch(batches[t + 1]), config)
            ctx = TdContext(q_next)
        else:
            ctx = TdContext.terminal()
        try:
            steps.append(
                training_step(
                    model,
                    optimizer,
                    (dataset.batch(indices), dataset.labels[indices]),
                    ctx,
                    config,
                ),
            )
        except NumericError as e:
            msg = f"batch {t}: {e}"
            raise NumericError(msg) from e
    return StepStats(
        **{key: float(np.mean([s[key] for s in steps])) for key in StepStats.__annotations__},  # type: ignore[typeddict-item]
    )


def predict(
    model: MmclModel,
    dataset: MultimodalDataset,
    config: MmclConfig,
    batch_size: int = 256,
) -> Array:
    """Predictions for every sample, in dataset order."""
    chunks = [
        infer(model, dataset.batch(np.arange(i, min(i + batch_size, len(dataset)))), config)
        for i in range(0, len(dataset), batch_size)
    ]
    return np.concatenate(chunks, axis=0)


def validation_loss(
    model: MmclModel,
    dataset: MultimodalDataset,
    config: MmclConfig,
) -> float:
    predictions = dc.constant(predict(model, dataset, config))
    return prediction_loss(predictions, dataset.labels, config.reward_spec).item()


@timed
def train(
    config: MmclConfig,
    dataset: MultimodalDataset,
    *,
    validation: MultimodalDataset | None = None,
    progress: bool = False,
) -> TrainResult:
    """Train a freshly initialised model for ``config.epochs`` epochs.

    Parameters
    ----------
    config : MmclConfig
    dataset : MultimodalDataset
        training samples, compatible with ``config``
    validation : MultimodalDataset | None, optional
        scored after every epoch when given, by default None
    progress : bool, optional
        show a progress bar, by default False

    Returns
    -------
    TrainResult
        the trained model and one EpochStats record per epoch

    Raises
    ------
    NumericError
        if a loss or gradient becomes non-finite
    """
    check_compatible(config, dataset)
    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    model = init_model(config, dataset.modality_dims, np.random.default_rng(init_seed))
    optimizer = Adam(model.parameters(), AdamHyper(lr=config.lr))
    rng = np.random.default_rng(shuffle_seed)

    history: list[EpochStats] = []
    for epoch in tqdm(range(config.epochs), desc="train", disable=not progress):
        try:
            stats = _run_epoch(model, optimizer, dataset, config, rng)
        except NumericError as e:
            msg = f"epoch {epoch}, {e}"
            raise NumericError(msg) from e
        record = EpochStats(
            epoch=epoch,
            validation_loss=None
            if validation is None
            else validation_loss(model, validation, config),
            **stats,
        )
        history.append(record)
        logger.info(
            "epoch %d: loss=%.5f lp=%.5f lpolicy=%.5f lcritic=%.5f q=%.4f r=%.4f",
            epoch,
            record["loss"],
            record["prediction_loss"],
            record["policy_loss"],
            record["critic_loss"],
            record["mean_q"],
            record["mean_reward"],
        )
    return TrainResult(model=strip_critic(model), history=history, training_model=model)
