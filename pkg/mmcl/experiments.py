"""Ablation and loss-weight sweeps: train, evaluate, and collect one row per run."""

from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path
from typing import TYPE_CHECKING, Any

from mmcl.config import VARIANTS, MmclConfig, Task, config_to_dict
from mmcl.errors import ConfigError
from mmcl.metrics import evaluate_predictions
from mmcl.train import TrainResult, predict, train

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from mmcl.data import MultimodalDataset

logger = logging.getLogger(__name__)

REGRESSION_COLUMNS = ("mae", "rmse", "pearson", "acc2", "acc7", "f1")
CLASSIFICATION_COLUMNS = ("accuracy", "weighted_f1", "macro_acc", "macro_f1")


def resolve_variants(names: Iterable[str]) -> list[str]:
    """Expand ``all`` and reject unknown variant names."""
    resolved: list[str] = []
    for name in names:
        if name == "all":
            resolved.extend(v for v in VARIANTS if v not in resolved)
        elif name not in VARIANTS:
            msg = f"unknown variant {name!r}; valid variants: all, {', '.join(VARIANTS)}"
            raise ConfigError(msg)
        elif name not in resolved:
            resolved.append(name)
    return resolved


def train_and_evaluate(
    config: MmclConfig,
    train_set: MultimodalDataset,
    validation: MultimodalDataset,
    *,
    progress: bool = False,
) -> tuple[TrainResult, dict[str, Any]]:
    result = train(config, train_set, progress=progress)
    predictions = predict(result.model, validation, config)
    return result, evaluate_predictions(predictions, validation.labels, config)


def _split(
    dataset: MultimodalDataset,
    validation_fraction: float,
    seed: int,
) -> tuple[MultimodalDataset, MultimodalDataset]:
    if len(dataset) < 2:  # noqa: PLR2004
        return dataset, dataset
    return dataset.split(validation_fraction, seed)


def _row(
    config: MmclConfig,
    metrics: dict[str, Any],
    wall_clock: float,
    **labels: Any,  # noqa: ANN401
) -> dict[str, Any]:
    columns = (
        CLASSIFICATION_COLUMNS if config.task == Task.CLASSIFICATION else REGRESSION_COLUMNS
    )
    return {
        **labels,
        "modalities": "".join(map(str, config.modalities)),
        "seed": config.seed,
        **{c: metrics[c] for c in columns},
        "seconds": round(wall_clock, 3),
    }


def run_ablation(  # noqa: PLR0913
    config: MmclConfig,
    dataset: MultimodalDataset,
    variants: Sequence[str] = ("full",),
    modality_masks: Sequence[str] = (),
    *,
    seeds: Sequence[int] | None = None,
    validation_fraction: float = 0.2,
    progress: bool = False,
) -> list[dict[str, Any]]:
    """One row per (variant or modality mask, seed), Table-I style."""
    runs: list[tuple[str, MmclConfig]] = [
        (name, config.with_variant(name)) for name in resolve_variants(variants)
    ]
    runs.extend((f"modality-{mask}", config.with_modalities(mask)) for mask in modality_masks)
    rows: list[dict[str, Any]] = []
    for seed in seeds if seeds is not None else (config.seed,):
        train_set, validation = _split(dataset, validation_fraction, seed)
        for name, variant in runs:
            start = time.perf_counter()
            _, metrics = train_and_evaluate(
                variant.with_seed(seed),
                train_set,
                validation,
                progress=progress,
            )
            rows.append(
                _row(variant.with_seed(seed), metrics, time.perf_counter() - start, variant=name),
            )
            logger.info("ablation %s seed %d: %s", name, seed, rows[-1])
    return rows


def alpha_sweep(
    config: MmclConfig,
    dataset: MultimodalDataset,
    grid: Sequence[tuple[float, float]],
    *,
    validation_fraction: float = 0.2,
    progress: bool = False,
) -> list[dict[str, Any]]:
    """One row per (alpha1, alpha2) pair."""
    train_set, validation = _split(dataset, validation_fraction, config.seed)
    rows: list[dict[str, Any]] = []
    for alpha1, alpha2 in grid:
        point = config.with_alphas(alpha1, alpha2)
        start = time.perf_counter()
        _, metrics = train_and_evaluate(point, train_set, validation, progress=progress)
        rows.append(
            _row(point, metrics, time.perf_counter() - start, alpha1=alpha1, alpha2=alpha2),
        )
        logger.info("sweep alpha1=%g alpha2=%g: %s", alpha1, alpha2, rows[-1])
    return rows


def write_rows(
    rows: Sequence[dict[str, Any]],
    directory: Path,
    stem: str,
    config: MmclConfig | None = None,
) -> tuple[Path, Path]:
    """Write rows as ``<stem>.json`` (with the config echo) and ``<stem>.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = directory / f"{stem}.json", directory / f"{stem}.csv"
    payload: dict[str, Any] = {"rows": list(rows)}
    if config is not None:
        payload["config"] = config_to_dict(config)
    json_path.write_text(json.dumps(payload, indent=2))
    with csv_path.open("w", newline="") as f:
        fieldnames = list(rows[0]) if rows else []
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return json_path, csv_path
