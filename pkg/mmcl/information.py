"""Information gain rates between feature families.

A linear softmax probe is trained per family. H(F) is the dataset mean of
the probe's output entropy, H(F_a | F_b) that of a probe on [F_a, F_b], and
the gain rate is g = (H(F_a) - H(F_a | F_b)) / H(F_a). A negative g means
F_b mostly added noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, TypedDict

import numpy as np
from scipy.special import softmax
from scipy.stats import entropy as _entropy

from mmcl import diffcore as dc
from mmcl.config import MmclConfig, Task
from mmcl.errors import ConfigError, NumericError
from mmcl.layers import glorot_uniform
from mmcl.model import forward
from mmcl.optimizer import Adam, AdamHyper
from mmcl.util import timed

if TYPE_CHECKING:
    from collections.abc import Mapping

    from mmcl.data import MultimodalDataset
    from mmcl.diffcore import Array
    from mmcl.model import MmclModel

logger = logging.getLogger(__name__)


def entropy(prob: Any) -> float:  # noqa: ANN401
    """Base-2 entropy of a probability vector, with 0 log 0 = 0."""
    prob = np.asarray(prob, dtype=np.float64)
    if prob.ndim != 1 or prob.size == 0:
        msg = f"expected a probability vector, got shape {prob.shape}"
        raise ValueError(msg)
    if np.any(prob < 0) or abs(prob.sum() - 1) > 1e-6:  # noqa: PLR2004
        msg = f"not a probability distribution: {prob}"
        raise ValueError(msg)
    return float(_entropy(prob, base=2))


def mean_entropy(probabilities: Array) -> float:
    """Mean base-2 entropy of the rows of an [N, C] probability matrix."""
    return float(np.mean(_entropy(probabilities, base=2, axis=1)))


def info_gain_rate(h_base: float, h_cond: float) -> float | None:
    """(h_base - h_cond) / h_base, or None when h_base is 0."""
    if h_base < 0 or h_cond < 0:
        msg = f"entropies must be non-negative, got {h_base}, {h_cond}"
        raise ValueError(msg)
    if h_base == 0:
        logger.warning("information gain rate undefined for zero base entropy")
        return None
    return (h_base - h_cond) / h_base


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    lr: float = 0.05
    seed: int = 0


def standardize(features: Array) -> Array:
    std = features.std(axis=0)
    return (features - features.mean(axis=0)) / np.where(std > 0, std, 1)


def train_probe(
    features: Array,
    labels: Array,
    num_classes: int,
    probe: ProbeConfig | None = None,
) -> Array:
    """Fit a softmax probe by full-batch Adam and return its [N, C] probabilities."""
    probe = ProbeConfig() if probe is None else probe
    x = dc.constant(standardize(np.asarray(features, dtype=np.float64)))
    one_hot = dc.constant(np.eye(num_classes)[np.asarray(labels, dtype=np.int64)])
    rng = np.random.default_rng(probe.seed)
    w = glorot_uniform(rng, x.shape[-1], num_classes, "probe.w")
    b = dc.parameter(np.zeros(num_classes), "probe.b")
    optimizer = Adam({"w": w, "b": b}, AdamHyper(lr=probe.lr))
    for epoch in range(probe.epochs):
        log_p = dc.log_softmax(dc.affine(x, w, b))
        loss = dc.negate(dc.mean(dc.sum_(log_p * one_hot, axis=-1)))
        if not np.isfinite(loss.item()):
            msg = f"probe diverged at epoch {epoch} (loss {loss.item()})"
            raise NumericError(msg)
        optimizer.step(dc.backward(loss))
    return softmax(x.data @ w.data + b.data, axis=-1)


class FamilyGain(TypedDict):
    entropy: dict[str, float]
    gain: dict[str, dict[str, float | None]]


class InfoGainReport(TypedDict):
    specific: FamilyGain
    complementary: FamilyGain


def info_gain_matrix(
    families: Mapping[str, Array],
    labels: Array,
    num_classes: int,
    probe: ProbeConfig | None = None,
) -> FamilyGain:
    """g[a][b] for every ordered pair of families, the diagonal included."""
    base = {
        name: mean_entropy(train_probe(f, labels, num_classes, probe))
        for name, f in families.items()
    }
    gain: dict[str, dict[str, float | None]] = {}
    for a, fa in families.items():
        gain[a] = {}
        for b, fb in families.items():
            joint = np.concatenate([fa, fb], axis=1)
            h_cond = mean_entropy(train_probe(joint, labels, num_classes, probe))
            gain[a][b] = info_gain_rate(base[a], h_cond)
    return FamilyGain(entropy=base, gain=gain)


def pooled_families(
    model: MmclModel,
    dataset: MultimodalDataset,
    config: MmclConfig,
) -> tuple[dict[str, Array], dict[str, Array]]:
    """Time-pooled specific and complementary features per modality, keyed V/A/T."""
    with dc.no_grad():
        trace = forward(model, dataset.features, config)
    specific = {
        m.upper(): dc.mean_pool_over_time(t).data for m, t in trace.specific.items()
    }
    complementary = {
        m.upper(): dc.mean_pool_over_time(t).data for m, t in trace.complementary.items()
    }
    return specific, complementary


@timed
def info_gain_protocol(
    model: MmclModel,
    dataset: MultimodalDataset,
    config: MmclConfig,
    probe: ProbeConfig | None = None,
) -> InfoGainReport:
    """Gain-rate matrices for the specific and complementary feature families.

    Parameters
    ----------
    model : MmclModel
    dataset : MultimodalDataset
        a labelled classification dataset
    config : MmclConfig
    probe : ProbeConfig | None, optional
        probe training settings, by default ProbeConfig()

    Returns
    -------
    InfoGainReport
    """
    if dataset.task != Task.CLASSIFICATION or dataset.num_classes is None:
        msg = "the information gain protocol needs a labelled classification dataset"
        raise ConfigError(msg)
    specific, complementary = pooled_families(model, dataset, config)
    return InfoGainReport(
        specific=info_gain_matrix(specific, dataset.labels, dataset.num_classes, probe),
        complementary=info_gain_matrix(
            complementary,
            dataset.labels,
            dataset.num_classes,
            probe,
        ),
    )
