"""Evaluation metrics for sentiment regression, emotion classification and screening."""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any, TypedDict

import numpy as np
from scipy.stats import pearsonr
from sklearn.metrics import accuracy_score, f1_score, precision_score, recall_score

from mmcl.config import MmclConfig, Task

if TYPE_CHECKING:
    from mmcl.diffcore import Array

logger = logging.getLogger(__name__)


class RegressionReport(TypedDict):
    n: int
    mae: float
    rmse: float
    pearson: float
    pearson_degenerate: bool
    acc2: float
    acc7: float
    f1: float
    counts: dict[str, int]


class ClassReport(TypedDict):
    acc: float
    f1: float
    support: int
    zero_support: bool


class ClassificationReport(TypedDict):
    n: int
    accuracy: float
    weighted_f1: float
    macro_acc: float
    macro_f1: float
    per_class: dict[str, ClassReport]
    counts: dict[str, int]


class ThresholdReport(TypedDict):
    threshold: float
    precision: float
    recall: float
    f1: float
    positives: int


def _as_pair(preds: Any, labels: Any) -> tuple[Array, Array]:  # noqa: ANN401
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape or preds.ndim != 1:
        msg = f"predictions {preds.shape} and labels {labels.shape} must be equal-length vectors"
        raise ValueError(msg)
    if preds.size == 0:
        msg = "cannot score an empty prediction set"
        raise ValueError(msg)
    return preds, labels


def round_half_away(x: Array) -> Array:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def seven_class(x: Array) -> Array:
    """Sentiment values as integer classes in [-3, 3]."""
    return np.clip(round_half_away(np.asarray(x, dtype=np.float64)), -3, 3)


def pearson(preds: Array, labels: Array) -> tuple[float, bool]:
    """Pearson correlation, or (0, True) when either side has zero variance."""
    if np.ptp(preds) == 0 or np.ptp(labels) == 0:
        logger.warning("pearson correlation undefined for constant input; reporting 0")
        return 0.0, True
    return float(pearsonr(preds, labels)[0]), False


def regression_metrics(
    preds: Any,  # noqa: ANN401
    labels: Any,  # noqa: ANN401
    *,
    exclude_zero: bool = False,
) -> RegressionReport:
    """MAE, RMSE, Pearson, Acc2, Acc7 and weighted binary F1.

    Acc2 counts a value as positive when it is greater than 0; with
    exclude_zero, samples labelled exactly 0 are left out of Acc2 and F1.

    Parameters
    ----------
    preds : Any
    labels : Any
    exclude_zero : bool, optional
        by default False

    Returns
    -------
    RegressionReport
    """
    preds, labels = _as_pair(preds, labels)
    residual = preds - labels
    r, degenerate = pearson(preds, labels)

    keep = labels != 0 if exclude_zero else np.ones(labels.shape, dtype=bool)
    if not np.any(keep):
        logger.warning("no non-zero labels left for acc2; reporting 0")
        acc2, f1 = 0.0, 0.0
    else:
        positive_true, positive_pred = labels[keep] > 0, preds[keep] > 0
        acc2 = float(accuracy_score(positive_true, positive_pred))
        f1 = float(
            f1_score(positive_true, positive_pred, average="weighted", zero_division=0),
        )
    return RegressionReport(
        n=int(preds.size),
        mae=float(np.mean(np.abs(residual))),
        rmse=float(np.sqrt(np.mean(np.square(residual)))),
        pearson=r,
        pearson_degenerate=degenerate,
        acc2=acc2,
        acc7=float(accuracy_score(seven_class(labels), seven_class(preds))),
        f1=f1,
        counts={
            "positive": int(np.sum(labels > 0)),
            "non_positive": int(np.sum(labels <= 0)),
        },
    )


def classification_metrics(
    pred_logits: Any,  # noqa: ANN401
    labels: Any,  # noqa: ANN401
    num_classes: int,
) -> ClassificationReport:
    """Per-class one-vs-rest accuracy and F1 of the argmax predictions, plus macro means."""
    logits = np.asarray(pred_logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape != (labels.size, num_classes):  # noqa: PLR2004
        msg = f"logits {logits.shape} must be [N={labels.size}, C={num_classes}]"
        raise ValueError(msg)
    if labels.size == 0:
        msg = "cannot score an empty prediction set"
        raise ValueError(msg)
    labels = labels.astype(np.int64)
    if np.any(labels < 0) or np.any(labels >= num_classes):
        msg = f"labels must lie in [0, {num_classes})"
        raise ValueError(msg)
    preds = np.argmax(logits, axis=1)

    per_class: dict[str, ClassReport] = {}
    for c in range(num_classes):
        truth, guess = labels == c, preds == c
        support = int(np.sum(truth))
        per_class[str(c)] = ClassReport(
            acc=float(accuracy_score(truth, guess)),
            f1=float(f1_score(truth, guess, zero_division=0)),
            support=support,
            zero_support=support == 0,
        )
    return ClassificationReport(
        n=int(labels.size),
        accuracy=float(accuracy_score(labels, preds)),
        weighted_f1=float(
            f1_score(
                labels,
                preds,
                labels=list(range(num_classes)),
                average="weighted",
                zero_division=0,
            ),
        ),
        macro_acc=float(np.mean([r["acc"] for r in per_class.values()])),
        macro_f1=float(np.mean([r["f1"] for r in per_class.values()])),
        per_class=per_class,
        counts={str(c): int(np.sum(labels == c)) for c in range(num_classes)},
    )


def threshold_metrics(
    preds: Any,  # noqa: ANN401
    labels: Any,  # noqa: ANN401
    threshold: float = 9.0,
) -> ThresholdReport:
    """Screening precision, recall and F-measure; scores at or above threshold are positive."""
    preds, labels = _as_pair(preds, labels)
    truth, guess = labels >= threshold, preds >= threshold
    return ThresholdReport(
        threshold=float(threshold),
        precision=float(precision_score(truth, guess, zero_division=0)),
        recall=float(recall_score(truth, guess, zero_division=0)),
        f1=float(f1_score(truth, guess, zero_division=0)),
        positives=int(np.sum(truth)),
    )


def evaluate_predictions(
    predictions: Array,
    labels: Array,
    config: MmclConfig,
) -> dict[str, Any]:
    """The task-appropriate metric set as a JSON-ready dict."""
    if config.task == Task.CLASSIFICATION:
        return dict(classification_metrics(predictions, labels, config.num_classes or 0))
    report: dict[str, Any] = dict(
        regression_metrics(predictions, labels, exclude_zero=config.acc2_exclude_zero),
    )
    if config.depression_threshold is not None:
        report["screening"] = threshold_metrics(
            predictions,
            labels,
            config.depression_threshold,
        )
    return report
