from __future__ import annotations

import numpy as np
import pytest

from mmcl.config import MmclConfig
from mmcl.metrics import (
    classification_metrics,
    evaluate_predictions,
    regression_metrics,
    seven_class,
    threshold_metrics,
)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(17)


def test_classification_metrics_are_correct() -> None:
    labels = np.array([0, 0, 1, 1, 2, 2])
    logits = np.eye(3)[[0, 1, 1, 1, 2, 0]]
    report = classification_metrics(logits, labels, 3)
    np.testing.assert_allclose(report["accuracy"], 4 / 6)
    np.testing.assert_allclose(
        [report["per_class"][c]["acc"] for c in "012"],
        [4 / 6, 5 / 6, 5 / 6],
    )
    np.testing.assert_allclose(
        [report["per_class"][c]["f1"] for c in "012"],
        [0.5, 0.8, 2 / 3],
    )
    np.testing.assert_allclose(report["macro_acc"], 14 / 18)
    np.testing.assert_allclose(report["macro_f1"], (0.5 + 0.8 + 2 / 3) / 3)
    np.testing.assert_allclose(report["weighted_f1"], (0.5 + 0.8 + 2 / 3) / 3)
    assert report["counts"] == {"0": 2, "1": 2, "2": 2}


def test_class_without_support_is_flagged() -> None:
    report = classification_metrics(np.eye(3)[[0, 1, 0]], np.array([0, 1, 1]), 3)
    assert report["per_class"]["2"]["zero_support"]
    assert report["per_class"]["2"]["f1"] == 0
    assert not report["per_class"]["0"]["zero_support"]


def test_classification_rejects_bad_labels() -> None:
    with pytest.raises(ValueError, match="labels"):
        classification_metrics(np.zeros((2, 3)), np.array([0, 3]), 3)
    with pytest.raises(ValueError, match="logits"):
        classification_metrics(np.zeros((2, 4)), np.array([0, 1]), 3)


def test_regression_metrics_are_correct() -> None:
    preds, labels = np.array([1.0, -1.0, 2.0]), np.array([1.0, 1.0, 2.0])
    report = regression_metrics(preds, labels)
    np.testing.assert_allclose(report["mae"], 2 / 3)
    np.testing.assert_allclose(report["rmse"], np.sqrt(4 / 3))
    np.testing.assert_allclose(report["acc2"], 2 / 3)
    np.testing.assert_allclose(report["acc7"], 2 / 3)
    np.testing.assert_allclose(report["f1"], 0.8)
    np.testing.assert_allclose(report["pearson"], np.corrcoef(preds, labels)[0, 1])
    assert not report["pearson_degenerate"]
    assert report["counts"] == {"positive": 3, "non_positive": 0}


def test_seven_class_rounds_half_away_from_zero() -> None:
    values = np.array([2.5, -2.5, 0.5, -0.5, 3.7, -4.0, 0.49])
    np.testing.assert_array_equal(seven_class(values), [3, -3, 1, -1, 3, -3, 0])


def test_constant_predictions_give_degenerate_pearson() -> None:
    report = regression_metrics(np.zeros(4), np.array([1.0, 2.0, 3.0, 4.0]))
    assert report["pearson"] == 0
    assert report["pearson_degenerate"]


def test_acc2_can_exclude_zero_labels() -> None:
    preds, labels = np.array([5.0, 1.0, -1.0]), np.array([0.0, 1.0, -1.0])
    np.testing.assert_allclose(regression_metrics(preds, labels)["acc2"], 2 / 3)
    np.testing.assert_allclose(
        regression_metrics(preds, labels, exclude_zero=True)["acc2"],
        1.0,
    )


def test_regression_metrics_are_bounded(rng: np.random.Generator) -> None:
    for _ in range(20):
        preds, labels = rng.normal(size=30) * 2, rng.normal(size=30) * 2
        report = regression_metrics(preds, labels)
        assert 0 <= report["mae"] <= report["rmse"]
        assert -1 <= report["pearson"] <= 1
        for key in ("acc2", "acc7", "f1"):
            assert 0 <= report[key] <= 1


def test_regression_rejects_mismatched_inputs() -> None:
    with pytest.raises(ValueError, match="equal-length"):
        regression_metrics(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError, match="empty"):
        regression_metrics(np.zeros(0), np.zeros(0))


def test_threshold_metrics_are_correct() -> None:
    report = threshold_metrics(np.array([10.0, 8.0, 9.0, 3.0]), np.array([12.0, 9.0, 2.0, 1.0]))
    assert report["threshold"] == 9
    assert report["positives"] == 2
    np.testing.assert_allclose(
        [report["precision"], report["recall"], report["f1"]],
        [0.5, 0.5, 0.5],
    )


def test_screening_is_reported_with_a_threshold() -> None:
    preds, labels = np.array([10.0, 2.0]), np.array([11.0, 1.0])
    assert "screening" in evaluate_predictions(preds, labels, MmclConfig.for_depression(d=8))
    assert "screening" not in evaluate_predictions(preds, labels, MmclConfig(d=8))
    emotion = evaluate_predictions(np.eye(4)[[0, 1]], np.array([0, 1]), MmclConfig.for_emotion(d=8))
    assert emotion["accuracy"] == 1
