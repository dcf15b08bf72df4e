"""Dataset ingestion: the MMF matrix format, JSON manifests and the in-memory dataset.

An MMF file is ``b"MMF1"``, little-endian u32 rows, u32 cols, a u8 dtype tag
(1 = float32, 2 = float64) and then the row-major payload.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Self

import numpy as np

from mmcl.config import ALL_MODALITIES, Task
from mmcl.errors import (
    BadMagicError,
    DataError,
    DatasetValidationError,
    DimensionOverflowError,
    MmfError,
    TruncatedFileError,
    UnknownDtypeError,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from mmcl.diffcore import Array

logger = logging.getLogger(__name__)

MMF_MAGIC = b"MMF1"
_HEADER = struct.Struct("<4sIIB")
_U32_MAX = 2**32 - 1
_DTYPES: dict[int, np.dtype[Any]] = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS = {dtype: tag for tag, dtype in _DTYPES.items()}


def encode_matrix(x: Array, dtype: np.dtype[Any] | str = "<f8") -> bytes:
    """MMF bytes for a 2-D matrix at the given precision."""
    x = np.asarray(x)
    if x.ndim != 2:  # noqa: PLR2004
        msg = f"MMF stores 2-D matrices, got shape {x.shape}"
        raise DataError(msg)
    dtype = np.dtype(dtype).newbyteorder("<")
    if dtype not in _TAGS:
        msg = f"MMF cannot store dtype {dtype}"
        raise UnknownDtypeError(msg)
    rows, cols = x.shape
    if rows > _U32_MAX or cols > _U32_MAX:
        msg = f"matrix shape {x.shape} does not fit the u32 header"
        raise DimensionOverflowError(msg)
    if not np.all(np.isfinite(x)):
        msg = "MMF matrices must hold finite values"
        raise DataError(msg)
    header = _HEADER.pack(MMF_MAGIC, rows, cols, _TAGS[dtype])
    return header + np.ascontiguousarray(x, dtype=dtype).tobytes()


def decode_matrix(buffer: bytes, offset: int = 0) -> tuple[Array, int]:
    """Decode one MMF record starting at offset; returns the matrix and the end offset."""
    if len(buffer) - offset < len(MMF_MAGIC):
        msg = f"file ends before the magic ({len(buffer) - offset} bytes)"
        raise TruncatedFileError(msg)
    if buffer[offset : offset + len(MMF_MAGIC)] != MMF_MAGIC:
        msg = f"bad magic {buffer[offset : offset + 4]!r}, expected {MMF_MAGIC!r}"
        raise BadMagicError(msg)
    if len(buffer) - offset < _HEADER.size:
        msg = "file ends inside the header"
        raise TruncatedFileError(msg)
    _, rows, cols, tag = _HEADER.unpack_from(buffer, offset)
    if tag not in _DTYPES:
        msg = f"unknown dtype tag {tag}"
        raise UnknownDtypeError(msg)
    if rows * cols > _U32_MAX:
        msg = f"declared shape {rows}x{cols} exceeds the addressable element count"
        raise DimensionOverflowError(msg)
    dtype = _DTYPES[tag]
    start = offset + _HEADER.size
    end = start + rows * cols * dtype.itemsize
    if len(buffer) < end:
        msg = f"payload of {rows}x{cols} {dtype} needs {end - start} bytes, found {len(buffer) - start}"
        raise TruncatedFileError(msg)
    if rows * cols == 0:
        return np.zeros((rows, cols), dtype=dtype), end
    data = np.frombuffer(buffer, dtype=dtype, count=rows * cols, offset=start)
    return data.reshape(rows, cols).copy(), end


def write_matrix(path: Path, x: Array, dtype: np.dtype[Any] | str = "<f8") -> None:
    Path(path).write_bytes(encode_matrix(x, dtype))


def read_matrix(path: Path) -> Array:
    buffer = Path(path).read_bytes()
    matrix, end = decode_matrix(buffer)
    if end != len(buffer):
        msg = f"{len(buffer) - end} unexpected trailing bytes in {path}"
        raise MmfError(msg)
    return matrix


@dataclass
class MultimodalDataset:
    """Pre-aligned features of N samples.

    ``features[m]`` has shape [N, L, d_m]; labels are real for regression and
    integer class indices for classification.
    """

    features: dict[str, Array]
    labels: Array
    ids: list[str] = field(default_factory=list)
    task: Task = Task.REGRESSION
    num_classes: int | None = None

    def __post_init__(self: Self) -> None:
        self.task = Task(self.task)
        self.labels = np.asarray(self.labels)
        n = len(self.labels)
        if not self.ids:
            self.ids = [f"s{i}" for i in range(n)]
        shapes = {m: x.shape for m, x in self.features.items()}
        if not shapes:
            msg = "a dataset needs at least one modality"
            raise DataError(msg)
        if any(len(s) != 3 or s[0] != n for s in shapes.values()):  # noqa: PLR2004
            msg = f"features must be [N={n}, L, d_m], got {shapes}"
            raise DataError(msg)
        if len({s[1] for s in shapes.values()}) != 1:
            msg = f"modalities disagree on sequence length: {shapes}"
            raise DataError(msg)
        if len(self.ids) != n:
            msg = f"{len(self.ids)} ids for {n} samples"
            raise DataError(msg)

    def __len__(self: Self) -> int:
        return len(self.labels)

    @property
    def length(self: Self) -> int:
        return next(iter(self.features.values())).shape[1]

    @property
    def modality_dims(self: Self) -> dict[str, int]:
        return {m: x.shape[2] for m, x in self.features.items()}

    def sample(self: Self, index: int) -> dict[str, Array]:
        return {m: x[index] for m, x in self.features.items()}

    def batch(self: Self, indices: Sequence[int] | Array) -> dict[str, Array]:
        return {m: x[indices] for m, x in self.features.items()}

    def index_of(self: Self, sample_id: str) -> int:
        try:
            return self.ids.index(sample_id)
        except ValueError:
            msg = f"sample id {sample_id!r} not found"
            raise DataError(msg) from None

    def subset(self: Self, indices: Sequence[int] | Array) -> MultimodalDataset:
        indices = np.asarray(indices, dtype=np.int64)
        return MultimodalDataset(
            features={m: x[indices] for m, x in self.features.items()},
            labels=self.labels[indices],
            ids=[self.ids[i] for i in indices],
            task=self.task,
            num_classes=self.num_classes,
        )

    def split(
        self: Self,
        validation_fraction: float,
        seed: int = 0,
    ) -> tuple[MultimodalDataset, MultimodalDataset]:
        """Seeded random train/validation split."""
        if not 0 < validation_fraction < 1:
            msg = f"validation_fraction must lie in (0, 1), got {validation_fraction}"
            raise ValueError(msg)
        order = np.random.default_rng(seed).permutation(len(self))
        n_valid = max(1, round(validation_fraction * len(self)))
        return self.subset(np.sort(order[n_valid:])), self.subset(np.sort(order[:n_valid]))


@dataclass
class DatasetManifest:
    """The JSON index of a dataset: labels inline, features in MMF files."""

    task: Task
    dims: dict[str, int]
    length: int
    samples: list[dict[str, Any]]
    num_classes: int | None = None

    @classmethod
    def from_json(cls: type[Self], values: dict[str, Any]) -> Self:
        try:
            manifest = cls(
                task=Task(values["task"]),
                dims={str(k): int(v) for k, v in values["dims"].items()},
                length=int(values["length"]),
                samples=list(values["samples"]),
                num_classes=values.get("num_classes"),
            )
        except (KeyError, TypeError, ValueError) as e:
            msg = f"invalid manifest: {e!r}"
            raise DataError(msg) from e
        unknown = sorted(set(manifest.dims) - set(map(str, ALL_MODALITIES)))
        if unknown:
            msg = f"unknown modality code(s) in manifest dims: {', '.join(unknown)}"
            raise DataError(msg)
        if manifest.task == Task.CLASSIFICATION and (manifest.num_classes or 0) < 2:  # noqa: PLR2004
            msg = "a classification manifest needs num_classes >= 2"
            raise DataError(msg)
        return manifest

    def to_json(self: Self) -> dict[str, Any]:
        return {
            "task": str(self.task),
            "num_classes": self.num_classes,
            "dims": self.dims,
            "length": self.length,
            "samples": self.samples,
        }


def _check_label(label: Any, manifest: DatasetManifest) -> str | None:  # noqa: ANN401
    if manifest.task == Task.CLASSIFICATION:
        if isinstance(label, bool) or not isinstance(label, int):
            return f"classification label must be an integer, got {label!r}"
        if not 0 <= label < (manifest.num_classes or 0):
            return f"label {label} outside [0, {manifest.num_classes})"
        return None
    if isinstance(label, bool) or not isinstance(label, int | float):
        return f"regression label must be a real number, got {label!r}"
    if not math.isfinite(label):
        return f"regression label must be finite, got {label!r}"
    return None


def _load_sample(
    record: dict[str, Any],
    manifest: DatasetManifest,
    root: Path,
) -> tuple[dict[str, Array], str | None]:
    problem = _check_label(record.get("label"), manifest)
    if problem:
        return {}, problem
    matrices: dict[str, Array] = {}
    for m, d in manifest.dims.items():
        if m not in record:
            return {}, f"no file for modality {m}"
        try:
            x = read_matrix(root / record[m])
        except FileNotFoundError:
            return {}, f"modality {m}: file {record[m]} not found"
        except MmfError as e:
            return {}, f"modality {m}: {e.code}: {e}"
        if x.shape != (manifest.length, d):
            return {}, f"modality {m}: shape {x.shape}, expected ({manifest.length}, {d})"
        matrices[m] = x
    return matrices, None


def load_dataset(path: Path) -> MultimodalDataset:
    """Read a manifest and every matrix it names, validating each sample.

    All per-sample failures are collected and raised together.

    Parameters
    ----------
    path : Path
        the manifest; matrix paths inside it are relative to its directory

    Returns
    -------
    MultimodalDataset

    Raises
    ------
    DataError
        naming every sample that failed validation
    """
    path = Path(path)
    try:
        values = json.loads(path.read_text())
    except FileNotFoundError as e:
        msg = f"manifest not found: {path}"
        raise DataError(msg) from e
    except json.JSONDecodeError as e:
        msg = f"manifest {path} is not valid JSON: {e}"
        raise DataError(msg) from e
    manifest = DatasetManifest.from_json(values)

    failures: list[tuple[str, str]] = []
    rows: dict[str, list[Array]] = {m: [] for m in manifest.dims}
    for position, record in enumerate(manifest.samples):
        sample_id = str(record.get("id", position))
        matrices, problem = _load_sample(record, manifest, path.parent)
        if problem:
            failures.append((sample_id, problem))
            continue
        for m, x in matrices.items():
            rows[m].append(x)
    if failures:
        raise DatasetValidationError(failures)
    if not manifest.samples:
        msg = f"manifest {path} lists no samples"
        raise DataError(msg)

    dtype = np.int64 if manifest.task == Task.CLASSIFICATION else np.float64
    dataset = MultimodalDataset(
        features={m: np.stack(xs) for m, xs in rows.items()},
        labels=np.asarray([r["label"] for r in manifest.samples], dtype=dtype),
        ids=[str(r.get("id", i)) for i, r in enumerate(manifest.samples)],
        task=manifest.task,
        num_classes=manifest.num_classes,
    )
    logger.info(
        "loaded %d samples (L=%d, dims=%s) from %s",
        len(dataset),
        dataset.length,
        dataset.modality_dims,
        path,
    )
    return dataset


def write_dataset(
    dataset: MultimodalDataset,
    directory: Path,
    dtype: np.dtype[Any] | str = "<f8",
) -> Path:
    """Materialise a dataset as manifest.json plus one MMF file per sample and modality."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    samples: list[dict[str, Any]] = []
    for i, sample_id in enumerate(dataset.ids):
        label = dataset.labels[i]
        record: dict[str, Any] = {
            "id": sample_id,
            "label": int(label) if dataset.task == Task.CLASSIFICATION else float(label),
        }
        for m, x in dataset.features.items():
            relative = Path("features") / f"{sample_id}_{m}.mmf"
            write_matrix(directory / relative, x[i], dtype)
            record[m] = relative.as_posix()
        samples.append(record)
    manifest = DatasetManifest(
        task=dataset.task,
        dims=dataset.modality_dims,
        length=dataset.length,
        samples=samples,
        num_classes=dataset.num_classes,
    )
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest.to_json(), indent=2))
    return path
