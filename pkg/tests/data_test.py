from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import pytest

from mmcl.config import Task
from mmcl.data import (
    MultimodalDataset,
    decode_matrix,
    encode_matrix,
    load_dataset,
    read_matrix,
    write_dataset,
    write_matrix,
)
from mmcl.errors import (
    BadMagicError,
    DataError,
    DatasetValidationError,
    DimensionOverflowError,
    MmfError,
    TruncatedFileError,
    UnknownDtypeError,
)

GOLDEN = Path(__file__).parent / "golden"


def _golden(name: str) -> bytes:
    return bytes.fromhex((GOLDEN / name).read_text())


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(8)


@pytest.fixture()
def dataset(rng: np.random.Generator) -> MultimodalDataset:
    return MultimodalDataset(
        features={
            "v": rng.normal(size=(3, 4, 2)),
            "a": rng.normal(size=(3, 4, 3)),
            "t": rng.normal(size=(3, 4, 5)),
        },
        labels=np.array([0.5, -1.25, 2.0]),
        ids=["clip-a", "clip-b", "clip-c"],
    )


def test_float64_matrix_matches_golden_bytes() -> None:
    x = np.arange(1.0, 7.0).reshape(2, 3)
    assert encode_matrix(x) == _golden("f64_2x3.hex")
    decoded, end = decode_matrix(_golden("f64_2x3.hex"))
    np.testing.assert_array_equal(decoded, x)
    assert end == 13 + 48


def test_float32_matrix_matches_golden_bytes() -> None:
    x = np.array([[1.0, -2.5], [0.5, 0.0]])
    assert encode_matrix(x, "<f4") == _golden("f32_2x2.hex")
    decoded, _ = decode_matrix(_golden("f32_2x2.hex"))
    assert decoded.dtype == np.float32
    np.testing.assert_array_equal(decoded, x)


def test_empty_matrix_matches_golden_bytes() -> None:
    assert encode_matrix(np.zeros((0, 3))) == _golden("f64_0x3.hex")
    decoded, _ = decode_matrix(_golden("f64_0x3.hex"))
    assert decoded.shape == (0, 3)


def test_matrix_file_round_trip_is_exact(tmp_path: Path, rng: np.random.Generator) -> None:
    x = rng.normal(size=(7, 5))
    write_matrix(tmp_path / "x.mmf", x)
    np.testing.assert_array_equal(read_matrix(tmp_path / "x.mmf"), x)
    write_matrix(tmp_path / "x32.mmf", x, "<f4")
    np.testing.assert_array_equal(read_matrix(tmp_path / "x32.mmf"), x.astype(np.float32))


def test_bad_magic_is_rejected() -> None:
    buffer = b"MMF2" + _golden("f64_2x3.hex")[4:]
    with pytest.raises(BadMagicError) as info:
        decode_matrix(buffer)
    assert info.value.code == "bad_magic"


@pytest.mark.parametrize("cut", [2, 10, 20, 60])
def test_truncation_is_rejected(cut: int) -> None:
    with pytest.raises(TruncatedFileError):
        decode_matrix(_golden("f64_2x3.hex")[:cut])


def test_unknown_dtype_tag_is_rejected() -> None:
    buffer = bytearray(_golden("f64_2x3.hex"))
    buffer[12] = 3
    with pytest.raises(UnknownDtypeError):
        decode_matrix(bytes(buffer))
    with pytest.raises(UnknownDtypeError):
        encode_matrix(np.ones((2, 2)), "<i4")


def test_overflowing_dimensions_are_rejected() -> None:
    header = struct.pack("<4sIIB", b"MMF1", 2**32 - 1, 2**32 - 1, 2)
    with pytest.raises(DimensionOverflowError):
        decode_matrix(header)


def test_trailing_bytes_are_rejected(tmp_path: Path) -> None:
    (tmp_path / "x.mmf").write_bytes(_golden("f64_2x3.hex") + b"\x00")
    with pytest.raises(MmfError, match="trailing"):
        read_matrix(tmp_path / "x.mmf")


def test_encode_rejects_non_matrices_and_non_finite_values() -> None:
    with pytest.raises(DataError):
        encode_matrix(np.ones(3))
    with pytest.raises(DataError):
        encode_matrix(np.array([[1.0, np.inf]]))


def test_dataset_round_trip(tmp_path: Path, dataset: MultimodalDataset) -> None:
    manifest = write_dataset(dataset, tmp_path)
    loaded = load_dataset(manifest)
    assert loaded.ids == dataset.ids
    assert loaded.task == Task.REGRESSION
    np.testing.assert_array_equal(loaded.labels, dataset.labels)
    for m, x in dataset.features.items():
        np.testing.assert_array_equal(loaded.features[m], x)


def test_classification_labels_load_as_integers(
    tmp_path: Path,
    dataset: MultimodalDataset,
) -> None:
    dataset.labels = np.array([2, 0, 1])
    dataset.task = Task.CLASSIFICATION
    dataset.num_classes = 3
    loaded = load_dataset(write_dataset(dataset, tmp_path))
    assert loaded.labels.dtype == np.int64
    np.testing.assert_array_equal(loaded.labels, [2, 0, 1])
    assert loaded.num_classes == 3


def test_every_failing_sample_is_reported(
    tmp_path: Path,
    dataset: MultimodalDataset,
) -> None:
    manifest = write_dataset(dataset, tmp_path)
    write_matrix(tmp_path / "features" / "clip-b_a.mmf", np.ones((5, 3)))
    (tmp_path / "features" / "clip-c_t.mmf").write_bytes(b"MMF")
    with pytest.raises(DatasetValidationError) as info:
        load_dataset(manifest)
    failures = dict(info.value.failures)
    assert set(failures) == {"clip-b", "clip-c"}
    assert "shape" in failures["clip-b"]
    assert "truncated" in failures["clip-c"]


def test_out_of_range_class_label_is_reported(
    tmp_path: Path,
    dataset: MultimodalDataset,
) -> None:
    dataset.labels = np.array([0, 1, 1])
    dataset.task = Task.CLASSIFICATION
    dataset.num_classes = 2
    manifest = write_dataset(dataset, tmp_path)
    values = json.loads(manifest.read_text())
    values["samples"][0]["label"] = 2
    values["samples"][1]["label"] = 0.5
    manifest.write_text(json.dumps(values))
    with pytest.raises(DatasetValidationError) as info:
        load_dataset(manifest)
    assert [sample_id for sample_id, _ in info.value.failures] == ["clip-a", "clip-b"]


def test_missing_manifest_is_a_data_error(tmp_path: Path) -> None:
    with pytest.raises(DataError, match="not found"):
        load_dataset(tmp_path / "manifest.json")


def test_manifest_with_unknown_modality_is_rejected(
    tmp_path: Path,
    dataset: MultimodalDataset,
) -> None:
    manifest = write_dataset(dataset, tmp_path)
    values = json.loads(manifest.read_text())
    values["dims"]["x"] = 2
    manifest.write_text(json.dumps(values))
    with pytest.raises(DataError, match="unknown modality"):
        load_dataset(manifest)


def test_split_is_seeded_and_disjoint(dataset: MultimodalDataset) -> None:
    train, valid = dataset.split(0.34, seed=1)
    again, _ = dataset.split(0.34, seed=1)
    assert train.ids == again.ids
    assert len(valid) == 1
    assert set(train.ids).isdisjoint(valid.ids)
    assert sorted(train.ids + valid.ids) == sorted(dataset.ids)


def test_dataset_rejects_inconsistent_lengths(rng: np.random.Generator) -> None:
    with pytest.raises(DataError, match="sequence length"):
        MultimodalDataset(
            features={"v": rng.normal(size=(2, 4, 2)), "a": rng.normal(size=(2, 5, 2))},
            labels=np.zeros(2),
        )
    with pytest.raises(DataError):
        MultimodalDataset(features={"v": rng.normal(size=(2, 4, 2))}, labels=np.zeros(3))


def test_index_of_unknown_id_is_a_data_error(dataset: MultimodalDataset) -> None:
    assert dataset.index_of("clip-c") == 2
    with pytest.raises(DataError):
        dataset.index_of("clip-z")
