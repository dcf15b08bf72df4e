from __future__ import annotations

import numpy as np
import pytest

from mmcl.checks import TINY_DIMS, tiny_config
from mmcl.config import Task
from mmcl.errors import ConfigError
from mmcl.information import (
    ProbeConfig,
    entropy,
    info_gain_matrix,
    info_gain_protocol,
    info_gain_rate,
    mean_entropy,
    train_probe,
)
from mmcl.model import init_model
from mmcl.synthetic import SyntheticSpec, generate_synthetic


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(9)


@pytest.fixture()
def noisy_classes(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Three overlapping classes in two dimensions."""
    labels = rng.integers(0, 3, size=600)
    angles = 2 * np.pi * labels / 3
    means = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return means + rng.normal(size=(600, 2)), labels


def _gain(base: np.ndarray, extra: np.ndarray, labels: np.ndarray) -> float | None:
    h = mean_entropy(train_probe(base, labels, 3))
    h_cond = mean_entropy(train_probe(np.concatenate([base, extra], axis=1), labels, 3))
    return info_gain_rate(h, h_cond)


def test_entropy_is_correct() -> None:
    assert entropy([1.0, 0.0, 0.0]) == 0
    np.testing.assert_allclose(entropy([0.5, 0.5]), 1.0)
    np.testing.assert_allclose(entropy([0.5, 0.25, 0.25]), 1.5)


@pytest.mark.parametrize("classes", range(2, 9))
def test_uniform_entropy_is_maximal(classes: int, rng: np.random.Generator) -> None:
    uniform = entropy(np.full(classes, 1 / classes))
    np.testing.assert_allclose(uniform, np.log2(classes), atol=1e-12)
    other = rng.dirichlet(np.ones(classes))
    assert entropy(other) <= uniform + 1e-12
    np.testing.assert_allclose(entropy(other[::-1]), entropy(other), atol=1e-12)


def test_entropy_rejects_invalid_distributions() -> None:
    with pytest.raises(ValueError, match="probability"):
        entropy([0.5, 0.6])
    with pytest.raises(ValueError, match="probability"):
        entropy([1.5, -0.5])


def test_info_gain_rate_is_correct() -> None:
    assert info_gain_rate(2.0, 0.5) == 0.75
    assert info_gain_rate(2.0, 2.0) == 0
    assert info_gain_rate(1.0, 1.5) == -0.5
    assert info_gain_rate(0.0, 0.0) is None
    with pytest.raises(ValueError, match="non-negative"):
        info_gain_rate(-1.0, 0.5)


def test_probe_returns_probabilities(noisy_classes: tuple[np.ndarray, np.ndarray]) -> None:
    features, labels = noisy_classes
    probabilities = train_probe(features, labels, 3, ProbeConfig(epochs=10))
    assert probabilities.shape == (600, 3)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0)


def test_duplicated_family_adds_nothing(noisy_classes: tuple[np.ndarray, np.ndarray]) -> None:
    features, labels = noisy_classes
    gain = _gain(features, features, labels)
    assert gain is not None
    assert abs(gain) <= 0.05


def test_pure_noise_family_adds_nothing(
    noisy_classes: tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
) -> None:
    features, labels = noisy_classes
    gain = _gain(features, rng.normal(size=(600, 2)), labels)
    assert gain is not None
    assert gain <= 0.05


def test_label_leak_removes_most_uncertainty(
    noisy_classes: tuple[np.ndarray, np.ndarray],
) -> None:
    features, labels = noisy_classes
    gain = _gain(features, np.eye(3)[labels], labels)
    assert gain is not None
    assert gain > 0.8


def test_gain_matrix_covers_every_ordered_pair(
    noisy_classes: tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
) -> None:
    features, labels = noisy_classes
    families = {"V": features, "A": rng.normal(size=(600, 2))}
    report = info_gain_matrix(families, labels, 3, ProbeConfig(epochs=20))
    assert set(report["entropy"]) == {"V", "A"}
    assert {a: set(row) for a, row in report["gain"].items()} == {
        "V": {"V", "A"},
        "A": {"V", "A"},
    }


def test_protocol_reports_both_families(rng: np.random.Generator) -> None:
    spec = SyntheticSpec(
        n_samples=30,
        dims=TINY_DIMS,
        task=Task.CLASSIFICATION,
        num_classes=3,
    )
    dataset = generate_synthetic(spec).dataset
    config = tiny_config(task=Task.CLASSIFICATION, num_classes=3)
    model = init_model(config, dataset.modality_dims, rng)
    report = info_gain_protocol(model, dataset, config, ProbeConfig(epochs=5))
    for family in ("specific", "complementary"):
        assert set(report[family]["entropy"]) == {"V", "A", "T"}
        assert all(len(row) == 3 for row in report[family]["gain"].values())


def test_protocol_needs_a_classification_dataset(rng: np.random.Generator) -> None:
    dataset = generate_synthetic(SyntheticSpec(n_samples=8, dims=TINY_DIMS))
    config = tiny_config()
    model = init_model(config, TINY_DIMS, rng)
    with pytest.raises(ConfigError, match="classification"):
        info_gain_protocol(model, dataset.dataset, config)

