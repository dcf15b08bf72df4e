"""Command line entry point: ``mmcl <command> ...``.

Exit codes: 0 success, 1 configuration or checkpoint error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from pathlib import Path
from typing import TYPE_CHECKING, Any, TypedDict

import numpy as np

from mmcl import diffcore as dc
from mmcl.checkpoint import load_checkpoint, save_checkpoint
from mmcl.checks import run_gradient_suite
from mmcl.config import MmclConfig, config_to_dict, load_config
from mmcl.data import load_dataset, write_dataset
from mmcl.errors import ConfigError, DataError, MmclError, NumericError
from mmcl.experiments import alpha_sweep, run_ablation, write_rows
from mmcl.information import ProbeConfig, info_gain_protocol
from mmcl.metrics import evaluate_predictions
from mmcl.model import forward
from mmcl.synthetic import SyntheticSpec, generate_synthetic
from mmcl.train import EpochStats, check_compatible, predict, train
from mmcl.util import configure_logging

if TYPE_CHECKING:
    from collections.abc import Sequence

    from mmcl.data import MultimodalDataset
    from mmcl.model import MmclModel

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4


class RunReport(TypedDict):
    config: dict[str, Any]
    seed: int
    history: list[EpochStats]
    metrics: dict[str, Any]
    wall_clock: float
    checkpoint: str
    tensors: list[str]


def _write_json(path: Path, payload: Any) -> None:  # noqa: ANN401
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2))


def _config(args: argparse.Namespace) -> MmclConfig:
    config = MmclConfig() if args.config is None else load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.with_seed(args.seed)
    if getattr(args, "epochs", None) is not None:
        config = config.with_epochs(args.epochs)
    return config


def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    dataset = load_dataset(args.data)
    check_compatible(config, dataset)
    start = time.perf_counter()
    result = train(config, dataset, progress=args.progress)
    evaluation = dataset if args.eval_data is None else load_dataset(args.eval_data)
    metrics = evaluate_predictions(
        predict(result.model, evaluation, config),
        evaluation.labels,
        config,
    )
    checkpoint = args.out / "model.mmck"
    args.out.mkdir(parents=True, exist_ok=True)
    tensors = save_checkpoint(checkpoint, result.model, config)
    report = RunReport(
        config=config_to_dict(config),
        seed=config.seed,
        history=result.history,
        metrics=metrics,
        wall_clock=time.perf_counter() - start,
        checkpoint=str(checkpoint),
        tensors=tensors,
    )
    _write_json(args.out / "report.json", report)
    logger.info("wrote %s", args.out / "report.json")
    return 0


def _load_for(
    model_path: Path,
    data_path: Path,
) -> tuple[MmclModel, MmclConfig, MultimodalDataset]:
    dataset = load_dataset(data_path)
    model, config = load_checkpoint(model_path, dataset.modality_dims)
    try:
        check_compatible(config, dataset)
    except ConfigError as e:
        msg = f"checkpoint {model_path} does not fit {data_path}: {e}"
        raise ConfigError(msg) from e
    return model, config, dataset


def cmd_eval(args: argparse.Namespace) -> int:
    model, config, dataset = _load_for(args.model, args.data)
    metrics = evaluate_predictions(predict(model, dataset, config), dataset.labels, config)
    _write_json(args.out, metrics)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _config(args)
    dataset = load_dataset(args.data)
    check_compatible(config, dataset)
    rows = run_ablation(
        config,
        dataset,
        args.variant or ([] if args.modality else ["all"]),
        args.modality or [],
        seeds=args.seeds,
        validation_fraction=args.validation_fraction,
        progress=args.progress,
    )
    write_rows(rows, args.out, "ablation", config)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _config(args)
    dataset = load_dataset(args.data)
    check_compatible(config, dataset)
    grid = list(itertools.product(args.alpha1, args.alpha2))
    rows = alpha_sweep(
        config,
        dataset,
        grid,
        validation_fraction=args.validation_fraction,
        progress=args.progress,
    )
    write_rows(rows, args.out, "sweep", config)
    return 0


def _write_csv(path: Path, header: Sequence[str], rows: Any) -> None:  # noqa: ANN401
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_inspect(args: argparse.Namespace) -> int:
    model, config, dataset = _load_for(args.model, args.data)
    ids = args.sample or dataset.ids[: args.limit]
    indices = [dataset.index_of(sample_id) for sample_id in ids]
    args.out.mkdir(parents=True, exist_ok=True)
    modalities = [str(m) for m in config.modalities]
    for sample_id, index in zip(ids, indices, strict=True):
        with dc.no_grad():
            trace = forward(model, dataset.sample(index), config)
        match args.what:
            case "actions":
                if not trace.actions:
                    msg = "this model does not mine specific features; no actions to dump"
                    raise ConfigError(msg)
                columns = np.concatenate([trace.actions[m].data for m in modalities], axis=1)
                _write_csv(args.out / f"actions_{sample_id}.csv", modalities, columns.tolist())
            case "weights":
                if not trace.decoupled:
                    msg = "decoupling is disabled for this model; no weights to dump"
                    raise ConfigError(msg)
                for m in modalities:
                    for kind in ("common", "specific"):
                        matrix = getattr(trace.decoupled[m], f"w_{kind}").data
                        header = [f"j{j}" for j in range(matrix.shape[1])]
                        path = args.out / f"weights_{sample_id}_{m}_{kind}.csv"
                        _write_csv(path, header, matrix.tolist())
            case "features":
                families = {
                    "common": trace.common,
                    "specific": trace.specific,
                    "complementary": trace.complementary,
                }
                rows = [
                    [m, kind, *dc.mean_pool_over_time(tensors[m]).data.tolist()]
                    for kind, tensors in families.items()
                    for m in modalities
                ]
                header = ["modality", "kind", *(f"f{i}" for i in range(config.d))]
                _write_csv(args.out / f"features_{sample_id}.csv", header, rows)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradient_suite(args.seed)
    failures = {name: e for name, e in results.items() if not e < GRADIENT_TOLERANCE}
    payload = {"tolerance": GRADIENT_TOLERANCE, "errors": results, "failures": sorted(failures)}
    if args.out is not None:
        _write_json(args.out, payload)
    for name, error in results.items():
        sys.stdout.write(f"{name:24s} {error:.3e}{'  FAIL' if name in failures else ''}\n")
    if failures:
        msg = f"gradient check failed for {', '.join(sorted(failures))}"
        raise NumericError(msg)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec()
    if args.spec is not None:
        try:
            values = json.loads(args.spec.read_text())
        except (FileNotFoundError, json.JSONDecodeError) as e:
            msg = f"cannot read synthetic spec {args.spec}: {e}"
            raise ConfigError(msg) from e
        spec = SyntheticSpec.from_dict(values)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    if args.n_samples is not None:
        spec = spec.with_n_samples(args.n_samples)
    generated = generate_synthetic(spec)
    manifest = write_dataset(generated.dataset, args.out)
    _write_csv(args.out / "mask.csv", generated.modalities, generated.mask.astype(int).tolist())
    _write_json(args.out / "spec.json", spec.to_dict())
    logger.info("wrote %d samples to %s", len(generated.dataset), manifest)
    return 0


def cmd_infogain(args: argparse.Namespace) -> int:
    model, config, dataset = _load_for(args.model, args.data)
    probe = ProbeConfig(epochs=args.probe_epochs, lr=args.probe_lr, seed=args.seed)
    report = info_gain_protocol(model, dataset, config, probe)
    _write_json(args.out, {"info_gain": report})
    return 0


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config (defaults when omitted)")
    parser.add_argument("--data", type=Path, required=True, help="dataset manifest")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--epochs", type=int, help="override the config epochs")
    parser.add_argument("--progress", action="store_true", help="show a progress bar")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmcl",
        description="Multimodal collaborative learning: train, evaluate and analyse.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", help="train a model and write a checkpoint and report")
    _add_run_options(p)
    p.add_argument("--eval-data", type=Path, help="manifest scored in the report")
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="metrics JSON path")
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("ablate", help="train and score ablation variants")
    _add_run_options(p)
    p.add_argument("--variant", action="append", help="variant name or 'all' (repeatable)")
    p.add_argument("--modality", action="append", help="modality subset such as 'vt'")
    p.add_argument("--seeds", type=int, nargs="+", help="seeds to repeat every run with")
    p.add_argument("--validation-fraction", type=float, default=0.2)
    p.set_defaults(handler=cmd_ablate)

    p = commands.add_parser("sweep", help="grid over the loss weights alpha1 and alpha2")
    _add_run_options(p)
    p.add_argument("--alpha1", type=float, nargs="+", default=[5.0, 10.0, 15.0, 20.0])
    p.add_argument("--alpha2", type=float, nargs="+", default=[1.0, 5.0, 10.0])
    p.add_argument("--validation-fraction", type=float, default=0.2)
    p.set_defaults(handler=cmd_sweep)

    p = commands.add_parser("inspect", help="dump actions, decoupling weights or features")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--what", choices=("actions", "weights", "features"), required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--sample", action="append", help="sample id (repeatable)")
    p.add_argument("--limit", type=int, default=4, help="samples dumped without --sample")
    p.set_defaults(handler=cmd_inspect)

    p = commands.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="optional JSON report path")
    p.set_defaults(handler=cmd_gradcheck)

    p = commands.add_parser("synth", help="write a synthetic segment-informative dataset")
    p.add_argument("--spec", type=Path, help="JSON synthetic spec")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-samples", type=int)
    p.set_defaults(handler=cmd_synth)

    p = commands.add_parser("infogain", help="information gain rates of learned features")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report JSON path")
    p.add_argument("--probe-epochs", type=int, default=100)
    p.add_argument("--probe-lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_infogain)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except MmclError as e:
        sys.stderr.write(f"mmcl {args.command}: {e}\n")
        return e.exit_code
    except OSError as e:
        sys.stderr.write(f"mmcl {args.command}: {e}\n")
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
