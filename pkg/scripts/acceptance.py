"""Desk-scale acceptance runs on the synthetic segment-informative dataset.

Each run prints its numbers and returns whether it met its target; the
script exits with status 1 when any run falls short.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from mmcl import diffcore as dc
from mmcl.config import Task, load_config
from mmcl.experiments import alpha_sweep, run_ablation
from mmcl.information import info_gain_protocol
from mmcl.metrics import regression_metrics
from mmcl.model import forward
from mmcl.synthetic import SyntheticSpec, generate_synthetic
from mmcl.train import predict, train
from mmcl.util import configure_logging

CONFIGS = Path(__file__).parents[1] / "configs"
SEEDS = (0, 1, 2, 3, 4)
REQUIRED_SEEDS = 4


def _spec() -> SyntheticSpec:
    return SyntheticSpec.from_dict(json.loads((CONFIGS / "synthetic.json").read_text()))


def _run_overfit() -> bool:
    config = load_config(CONFIGS / "train.json")
    data = generate_synthetic(_spec())
    result = train(config, data.dataset, progress=True)
    metrics = regression_metrics(predict(result.model, data.dataset, config), data.dataset.labels)

    losses = [h["loss"] for h in result.history]
    tail = losses[-max(1, len(losses) // 10) :]
    print(f"overfit: training MAE {metrics['mae']:.4f} (target < 0.05)")
    print(f"overfit: first-epoch loss {losses[0]:.4f}, last-10% mean {np.mean(tail):.4f}")
    return metrics["mae"] < 0.05  # noqa: PLR2004


def _run_complementarity() -> bool:
    config = load_config(CONFIGS / "train.json").with_epochs(200)
    passed = 0
    for seed in SEEDS:
        data = generate_synthetic(_spec().with_seed(seed).with_n_samples(256))
        result = train(config.with_seed(seed), data.dataset)
        with dc.no_grad():
            trace = forward(result.model, data.dataset.features, config)
        ratios = {}
        for j, m in enumerate(data.modalities):
            per_step = trace.actions[m].data[..., 0].mean(axis=0)
            informative = data.mask[:, j]
            ratios[m] = per_step[informative].mean() / per_step[~informative].mean()
        ok = all(r > 1.2 for r in ratios.values())  # noqa: PLR2004
        passed += ok
        print(f"complementarity seed {seed}: ratios {ratios} {'pass' if ok else 'fail'}")
    print(f"complementarity: {passed}/{len(SEEDS)} seeds pass (target >= {REQUIRED_SEEDS})")
    return passed >= REQUIRED_SEEDS


def _run_ablation_ordering() -> bool:
    config = load_config(CONFIGS / "ablation.json")
    dataset = generate_synthetic(_spec().with_n_samples(512)).dataset
    rows = run_ablation(config, dataset, ["full", "no-csd", "no-cce", "no-csm"], seeds=SEEDS)
    wins = 0
    for seed in SEEDS:
        mae = {r["variant"]: r["mae"] for r in rows if r["seed"] == seed}
        ok = all(mae["full"] <= mae[v] for v in ("no-csd", "no-cce", "no-csm"))
        wins += ok
        print(f"ablation seed {seed}: {mae}")
    print(f"ablation: full is best in {wins}/{len(SEEDS)} seeds (target >= {REQUIRED_SEEDS})")
    return wins >= REQUIRED_SEEDS


def _run_alpha_sweep() -> bool:
    config = load_config(CONFIGS / "ablation.json")
    dataset = generate_synthetic(_spec().with_n_samples(512)).dataset
    grid = [(a1, a2) for a1 in (5, 10, 15, 20) for a2 in (1, 5, 10)]
    rows = alpha_sweep(config, dataset, grid)
    for row in rows:
        print(f"sweep alpha1={row['alpha1']:>4} alpha2={row['alpha2']:>4} mae={row['mae']:.4f}")
    return all(np.isfinite(row["mae"]) for row in rows)


def _run_info_gain() -> bool:
    config = (
        load_config(CONFIGS / "train.json")
        .with_task(Task.CLASSIFICATION, 3)
        .with_epochs(100)
    )
    spec = _spec().with_task(Task.CLASSIFICATION, 3).with_n_samples(300)
    dataset = generate_synthetic(spec).dataset
    result = train(config, dataset)
    report = info_gain_protocol(result.model, dataset, config)
    print(json.dumps(report, indent=2))
    return all(
        np.isfinite(g)
        for family in ("specific", "complementary")
        for row in report[family]["gain"].values()
        for g in row.values()
    )


RUNS = {
    "overfit": _run_overfit,
    "complementarity": _run_complementarity,
    "ablation ordering": _run_ablation_ordering,
    "alpha sweep": _run_alpha_sweep,
    "info gain": _run_info_gain,
}


if __name__ == "__main__":
    configure_logging(1)
    failed = [name for name, run in RUNS.items() if not run()]
    if failed:
        print(f"acceptance failed: {', '.join(failed)}")
        sys.exit(1)
    print("acceptance passed")
