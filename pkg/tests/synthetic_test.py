from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from mmcl import diffcore as dc
from mmcl.config import Task
from mmcl.errors import ConfigError
from mmcl.mining import PolicyModel, policy_act
from mmcl.synthetic import (
    Segment,
    SyntheticData,
    SyntheticSpec,
    generate_synthetic,
    informativeness_mask,
)


def test_generation_is_deterministic() -> None:
    first = generate_synthetic(SyntheticSpec(seed=3))
    second = generate_synthetic(SyntheticSpec(seed=3))
    for m in ("v", "a", "t"):
        np.testing.assert_array_equal(first.dataset.features[m], second.dataset.features[m])
    np.testing.assert_array_equal(first.dataset.labels, second.dataset.labels)
    other = generate_synthetic(SyntheticSpec(seed=4))
    assert not np.array_equal(first.dataset.labels, other.dataset.labels)


def test_shapes_and_ids() -> None:
    data = generate_synthetic(SyntheticSpec(n_samples=5, dims={"v": 2, "a": 3, "t": 4}))
    assert data.dataset.modality_dims == {"v": 2, "a": 3, "t": 4}
    assert data.dataset.length == 9
    assert data.dataset.ids[0] == "syn00000"
    assert data.modalities == ["v", "a", "t"]


def test_mask_marks_one_modality_per_timestep() -> None:
    mask = informativeness_mask(SyntheticSpec())
    assert mask.shape == (9, 3)
    np.testing.assert_array_equal(mask.sum(axis=1), np.ones(9))
    np.testing.assert_array_equal(np.flatnonzero(mask[:, 1]), [3, 4, 5])


def test_noise_free_labels_are_linear_in_informative_features() -> None:
    data = generate_synthetic(SyntheticSpec(n_samples=50, noise=0.0))
    features = data.dataset.features
    design = np.concatenate([features["v"][:, 0], features["a"][:, 3], features["t"][:, 6]], axis=1)
    coefficients, *_ = np.linalg.lstsq(design, data.dataset.labels, rcond=None)
    np.testing.assert_allclose(design @ coefficients, data.dataset.labels, atol=1e-10)


def test_informative_segments_lie_on_the_direction_and_carrier() -> None:
    data = generate_synthetic(SyntheticSpec(n_samples=10, noise=0.0, carrier=1.5))
    vision = data.dataset.features["v"][:, :3]
    expected = (
        data.latents[:, 0, None, None] * data.directions["v"]
        + 1.5 * data.carrier_directions["v"]
    )
    np.testing.assert_allclose(vision, np.broadcast_to(expected, vision.shape))


def test_label_moments_match_the_readout() -> None:
    n = 10_000
    labels = generate_synthetic(SyntheticSpec(n_samples=n, seed=1)).dataset.labels
    assert abs(labels.mean()) < 3 / np.sqrt(n)
    assert abs(labels.var() - 1.0) < 5 * np.sqrt(2 / n)


def test_classification_labels_are_balanced() -> None:
    spec = SyntheticSpec(n_samples=3000, task=Task.CLASSIFICATION, num_classes=3)
    labels = generate_synthetic(spec).dataset.labels
    assert labels.dtype == np.int64
    counts = np.bincount(labels, minlength=3)
    np.testing.assert_allclose(counts / 3000, [1 / 3] * 3, atol=0.04)


@pytest.mark.parametrize(
    "segments",
    [
        (Segment(0, 4, "v"), Segment(5, 9, "a")),
        (Segment(0, 5, "v"), Segment(4, 9, "a")),
        (Segment(0, 5, "v"), Segment(5, 8, "a")),
    ],
)
def test_segments_must_partition_the_sequence(segments: tuple[Segment, ...]) -> None:
    with pytest.raises(ConfigError, match="segments"):
        SyntheticSpec(segments=segments)


def test_segment_modality_needs_a_dimension() -> None:
    with pytest.raises(ConfigError, match="no feature dimension"):
        SyntheticSpec(dims={"v": 4, "a": 4}, segments=(Segment(0, 9, "t"),))


def test_spec_dict_round_trip() -> None:
    spec = SyntheticSpec(
        n_samples=7,
        noise=0.3,
        carrier=0.5,
        task=Task.CLASSIFICATION,
        num_classes=4,
    )
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError, match="unknown"):
        SyntheticSpec.from_dict({"samples": 3})


def test_carrier_is_orthogonal_to_the_label_direction() -> None:
    data = generate_synthetic(SyntheticSpec())
    for m in data.modalities:
        assert abs(data.directions[m] @ data.carrier_directions[m]) < 1e-12
        np.testing.assert_allclose(np.linalg.norm(data.carrier_directions[m]), 1.0)


def test_carrier_needs_two_wide_features() -> None:
    with pytest.raises(ConfigError, match="carrier"):
        SyntheticSpec(dims={"v": 1, "a": 4, "t": 4})
    SyntheticSpec(dims={"v": 1, "a": 4, "t": 4}, carrier=0.0)


def _action_ratio(data: SyntheticData, w: np.ndarray, b: float) -> float:
    policy = PolicyModel(dc.constant(w[:, None]), dc.constant([b]))
    with dc.no_grad():
        actions = policy_act(dc.constant(data.dataset.features["v"]), policy)
    per_step = actions.data[..., 0].mean(axis=0)
    informative = data.mask[:, data.modalities.index("v")]
    return float(per_step[informative].mean() / per_step[~informative].mean())


def test_a_per_timestep_policy_can_find_the_informative_segment() -> None:
    data = generate_synthetic(SyntheticSpec(n_samples=200, carrier=2.0))
    ratio = _action_ratio(data, 2.0 * data.carrier_directions["v"], -2.0)
    assert ratio > 1.5


def test_without_a_carrier_the_segment_is_invisible_to_a_per_timestep_policy() -> None:
    data = generate_synthetic(SyntheticSpec(n_samples=200, carrier=0.0))
    ratio = _action_ratio(data, 2.0 * data.directions["v"], 0.0)
    assert abs(ratio - 1.0) < 0.2


def test_bundled_spec_marks_informative_segments() -> None:
    values = json.loads((Path(__file__).parents[1] / "configs" / "synthetic.json").read_text())
    spec = SyntheticSpec.from_dict(values)
    assert spec.carrier > 0
    assert [str(s.modality) for s in spec.segments] == ["v", "a", "t"]
