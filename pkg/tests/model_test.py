from __future__ import annotations

import numpy as np
import pytest

from mmcl import diffcore as dc
from mmcl.checks import TINY_DIMS, end_to_end_case, tiny_config
from mmcl.config import Branches, FusionMode, MmclConfig, RewardSpec, Task
from mmcl.errors import DataError, NumericError, ShapeError
from mmcl.model import (
    MmclModel,
    forward,
    fuse,
    infer,
    init_model,
    prediction_loss,
    project,
    strip_critic,
    total_loss,
)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(21)


@pytest.fixture()
def config() -> MmclConfig:
    return tiny_config()


@pytest.fixture()
def model(config: MmclConfig, rng: np.random.Generator) -> MmclModel:
    return init_model(config, TINY_DIMS, rng)


def _features(rng: np.random.Generator, *batch: int, length: int = 4) -> dict[str, np.ndarray]:
    return {m: rng.normal(size=(*batch, length, d)) for m, d in TINY_DIMS.items()}


def test_project_zero_weights_give_zero_output(model: MmclModel) -> None:
    model.projections["a"].w.data[...] = 0
    out = project(model, np.ones((6, 4)), "a")
    np.testing.assert_array_equal(out.data, np.zeros((6, 8)))


def test_project_rejects_wrong_feature_width(model: MmclModel) -> None:
    with pytest.raises(ShapeError, match=r"project\[v\]"):
        project(model, np.ones((6, 4)), "v")


def test_forward_shapes(model: MmclModel, config: MmclConfig, rng: np.random.Generator) -> None:
    trace = forward(model, _features(rng), config)
    assert trace.prediction.shape == ()
    assert set(trace.actions) == {"v", "a", "t"}
    assert trace.actions["v"].shape == (4, 1)
    assert trace.fused.shape == (4, 16)
    batched = forward(model, _features(rng, 3), config)
    assert batched.prediction.shape == (3,)


def test_batched_forward_matches_single_samples(
    model: MmclModel,
    config: MmclConfig,
    rng: np.random.Generator,
) -> None:
    features = _features(rng, 3)
    batched = infer(model, features, config)
    for b in range(3):
        single = infer(model, {m: x[b] for m, x in features.items()}, config)
        np.testing.assert_allclose(single, batched[b], atol=1e-12)


def test_forward_is_deterministic(
    model: MmclModel,
    config: MmclConfig,
    rng: np.random.Generator,
) -> None:
    features = _features(rng)
    first = forward(model, features, config).prediction.data
    second = forward(model, features, config).prediction.data
    np.testing.assert_array_equal(first, second)


def test_forward_rejects_missing_modality_and_length_mismatch(
    model: MmclModel,
    config: MmclConfig,
    rng: np.random.Generator,
) -> None:
    features = _features(rng)
    with pytest.raises(DataError):
        forward(model, {"v": features["v"], "a": features["a"]}, config)
    features["t"] = rng.normal(size=(5, TINY_DIMS["t"]))
    with pytest.raises(ShapeError):
        forward(model, features, config)


def test_infer_matches_forward_without_critic(
    model: MmclModel,
    config: MmclConfig,
    rng: np.random.Generator,
) -> None:
    features = _features(rng, 100)
    expected = forward(model, features, config).prediction.data
    stripped = strip_critic(model)
    assert stripped.critic is None
    np.testing.assert_array_equal(infer(stripped, features, config), expected)


def test_classification_forward_gives_logits(rng: np.random.Generator) -> None:
    config = tiny_config(task=Task.CLASSIFICATION, num_classes=4)
    model = init_model(config, TINY_DIMS, rng)
    logits = infer(model, _features(rng, 5), config)
    assert logits.shape == (5, 4)
    assert np.all(np.isfinite(logits))


def test_without_mining_specific_features_pass_through(rng: np.random.Generator) -> None:
    config = tiny_config(use_csm=False)
    model = init_model(config, TINY_DIMS, rng)
    assert model.critic is None
    assert not model.policies
    trace = forward(model, _features(rng), config)
    assert not trace.actions
    for m in ("v", "a", "t"):
        assert trace.complementary[m] is trace.specific[m]


def test_plain_variant_matches_a_direct_baseline(rng: np.random.Generator) -> None:
    config = tiny_config(use_csd=False, use_cce=False, use_csm=False)
    model = init_model(config, TINY_DIMS, rng)
    model.fusion_logits.data[...] = rng.normal(size=3)
    features = _features(rng)

    logits = model.fusion_logits.data
    weights = np.exp(logits) / np.exp(logits).sum()
    fused = sum(
        w * np.concatenate([z, z], axis=1)
        for w, z in zip(
            weights,
            (
                features[m] @ model.projections[m].w.data + model.projections[m].b.data
                for m in ("v", "a", "t")
            ),
            strict=True,
        )
    )
    expected = fused.mean(axis=0) @ model.head.w.data + model.head.b.data
    np.testing.assert_allclose(infer(model, features, config), expected[0], atol=1e-10)


def test_single_modality_skips_decoupling(rng: np.random.Generator) -> None:
    config = tiny_config(modalities=("t",))
    model = init_model(config, TINY_DIMS, rng)
    trace = forward(model, _features(rng), config)
    assert not trace.decoupled
    assert trace.common["t"] is trace.z["t"]
    assert model.critic is not None
    assert model.critic.projection.in_features == 8 + 1


def test_common_only_drops_the_critic(rng: np.random.Generator) -> None:
    config = tiny_config(branches=Branches.COMMON)
    model = init_model(config, TINY_DIMS, rng)
    assert model.critic is None
    assert model.head.in_features == 8
    assert forward(model, _features(rng), config).prediction.shape == ()


def test_init_model_sizes(model: MmclModel) -> None:
    assert model.critic is not None
    assert model.critic.projection.in_features == 3 * (8 + 1)
    assert model.head.in_features == 16
    names = set(model.parameters())
    assert "critic.head.w" in names
    assert "fusion_logits" in names
    assert not any(n.startswith("critic.") for n in strip_critic(model).parameters())


def test_init_model_rejects_missing_dims(config: MmclConfig) -> None:
    with pytest.raises(DataError):
        init_model(config, {"v": 3, "a": 4})


def test_concat_fusion_widens_the_head(rng: np.random.Generator) -> None:
    config = tiny_config(fusion=FusionMode.CONCAT)
    model = init_model(config, TINY_DIMS, rng)
    assert model.fusion_logits is None
    assert model.head.in_features == 3 * 16
    assert forward(model, _features(rng), config).fused.shape == (4, 48)


def test_fuse_weighted_sum_is_correct() -> None:
    parts = [dc.constant(np.full((2, 3), float(i + 1))) for i in range(3)]
    equal = fuse(parts, FusionMode.WEIGHTED_SUM, dc.constant(np.zeros(3)))
    np.testing.assert_allclose(equal.data, np.full((2, 3), 2.0))
    saturated = fuse(parts, FusionMode.WEIGHTED_SUM, dc.constant([100.0, -100.0, -100.0]))
    np.testing.assert_allclose(saturated.data, parts[0].data, rtol=0, atol=1e-8)


def test_fuse_rejects_inconsistent_blocks() -> None:
    parts = [dc.constant(np.ones((2, 3))), dc.constant(np.ones((2, 4)))]
    with pytest.raises(ShapeError):
        fuse(parts, FusionMode.CONCAT)
    with pytest.raises(ShapeError):
        fuse(parts[:1], FusionMode.WEIGHTED_SUM, dc.constant(np.zeros(2)))


def test_regression_prediction_loss_is_mean_absolute_error() -> None:
    spec = RewardSpec(Task.REGRESSION)
    assert prediction_loss(dc.constant(1.5), 1.5, spec).item() == 0
    loss = prediction_loss(dc.constant([0.0, 0.0]), np.array([1.0, -3.0]), spec)
    np.testing.assert_allclose(loss.item(), 2.0)


def test_classification_prediction_loss_is_cross_entropy() -> None:
    spec = RewardSpec(Task.CLASSIFICATION, 4)
    np.testing.assert_allclose(
        prediction_loss(dc.constant(np.zeros(4)), 1, spec).item(),
        np.log(4),
    )
    assert prediction_loss(dc.constant([0.0, 100.0, 0.0, 0.0]), 1, spec).item() < 1e-12
    with pytest.raises(ValueError, match="out of range"):
        prediction_loss(dc.constant(np.zeros(4)), 4, spec)


def test_total_loss_is_correct() -> None:
    config = MmclConfig(d=8, alpha1=1.0, alpha2=0.5)
    np.testing.assert_allclose(total_loss(1.0, -1.0, 3.0, config).item(), 2.0)
    no_mining = MmclConfig(d=8, alpha1=3.0, alpha2=0.0)
    np.testing.assert_allclose(total_loss(0.5, 7.0, 9.0, no_mining).item(), 1.5)
    with pytest.raises(NumericError, match="critic"):
        total_loss(1.0, 0.0, np.nan, config)


def test_end_to_end_loss_gradient_matches_finite_differences() -> None:
    function, inputs = end_to_end_case(np.random.default_rng(3))
    assert dc.grad_check(function, inputs) < 1e-4


def test_end_to_end_classification_gradient_matches_finite_differences() -> None:
    config = tiny_config(task=Task.CLASSIFICATION, num_classes=3, compare_mode="mean")
    function, inputs = end_to_end_case(np.random.default_rng(4), config)
    assert dc.grad_check(function, inputs) < 1e-4
