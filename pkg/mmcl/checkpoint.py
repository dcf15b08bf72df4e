"""Versioned model checkpoints.

Layout: ``b"MMCK"``, u32 version, u32 header length, a UTF-8 JSON header
(config echo, modality dims, tensor names and shapes) and then one MMF
record per tensor in header order. Vectors and scalars are stored as 1 x n
and 1 x 1 matrices.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from mmcl.config import MmclConfig, config_from_dict, config_to_dict
from mmcl.data import decode_matrix, encode_matrix
from mmcl.diffcore import DTYPE
from mmcl.errors import CheckpointError, ConfigError, MmfError
from mmcl.model import MmclModel, init_model, strip_critic

if TYPE_CHECKING:
    from collections.abc import Mapping

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MMCK"
CHECKPOINT_VERSION = 1
_PREAMBLE = struct.Struct("<4sII")


def save_checkpoint(
    path: Path,
    model: MmclModel,
    config: MmclConfig,
    *,
    inference: bool = True,
) -> list[str]:
    """Write model to path and return the stored tensor names.

    An inference checkpoint never holds critic parameters.
    """
    if inference:
        model = strip_critic(model)
    parameters = model.parameters()
    header = {
        "config": config_to_dict(config),
        "modality_dims": model.modality_dims,
        "tensors": list(parameters),
        "shapes": [list(p.shape) for p in parameters.values()],
    }
    encoded = json.dumps(header).encode()
    dtype = "<f4" if DTYPE == np.float32 else "<f8"
    records = [
        encode_matrix(np.reshape(p.data, (1, -1)) if p.ndim < 2 else p.data, dtype)  # noqa: PLR2004
        for p in parameters.values()
    ]
    Path(path).write_bytes(
        _PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(encoded))
        + encoded
        + b"".join(records),
    )
    logger.info("saved %d tensors to %s", len(parameters), path)
    return list(parameters)


def read_checkpoint(path: Path) -> tuple[dict[str, Any], dict[str, np.ndarray[Any, Any]]]:
    """The raw header and named arrays of a checkpoint file."""
    try:
        buffer = Path(path).read_bytes()
    except FileNotFoundError as e:
        msg = f"checkpoint not found: {path}"
        raise CheckpointError(msg) from e
    if len(buffer) < _PREAMBLE.size:
        msg = f"{path} is too short to be a checkpoint"
        raise CheckpointError(msg)
    magic, version, header_length = _PREAMBLE.unpack_from(buffer)
    if magic != CHECKPOINT_MAGIC:
        msg = f"{path} is not a checkpoint (magic {magic!r})"
        raise CheckpointError(msg)
    if version != CHECKPOINT_VERSION:
        msg = f"unsupported checkpoint version {version}"
        raise CheckpointError(msg)
    offset = _PREAMBLE.size + header_length
    try:
        header = json.loads(buffer[_PREAMBLE.size : offset].decode())
        arrays: dict[str, np.ndarray[Any, Any]] = {}
        for name, shape in zip(header["tensors"], header["shapes"], strict=True):
            matrix, offset = decode_matrix(buffer, offset)
            arrays[name] = matrix.reshape(shape)
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, ValueError) as e:
        msg = f"corrupt checkpoint header in {path}: {e!r}"
        raise CheckpointError(msg) from e
    except MmfError as e:
        msg = f"corrupt tensor record in {path}: {e}"
        raise CheckpointError(msg) from e
    return header, arrays


def load_checkpoint(
    path: Path,
    expected_dims: Mapping[str, int] | None = None,
) -> tuple[MmclModel, MmclConfig]:
    """Rebuild the model stored at path.

    expected_dims, when given, must agree with the stored modality dims.
    """
    header, arrays = read_checkpoint(path)
    try:
        config = config_from_dict(header["config"])
    except ConfigError as e:
        msg = f"checkpoint {path} holds an invalid config: {e}"
        raise CheckpointError(msg) from e
    dims = {str(k): int(v) for k, v in header["modality_dims"].items()}
    if expected_dims is not None:
        mismatched = {
            m: (dims.get(m), expected_dims.get(m))
            for m in map(str, config.modalities)
            if dims.get(m) != expected_dims.get(m)
        }
        if mismatched:
            msg = f"checkpoint modality dims disagree with the data: {mismatched}"
            raise CheckpointError(msg)

    model = init_model(config, dims)
    if not any(name.startswith("critic.") for name in arrays):
        model = strip_critic(model)
    parameters = model.parameters()
    if set(parameters) != set(arrays):
        missing = sorted(set(parameters) - set(arrays))
        extra = sorted(set(arrays) - set(parameters))
        msg = f"checkpoint tensors do not match its config (missing {missing}, unexpected {extra})"
        raise CheckpointError(msg)
    for name, tensor in parameters.items():
        if arrays[name].shape != tensor.shape:
            msg = f"tensor {name} has shape {arrays[name].shape}, expected {tensor.shape}"
            raise CheckpointError(msg)
        tensor.data[...] = arrays[name]
    return model, config
