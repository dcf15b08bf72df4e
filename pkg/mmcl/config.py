from __future__ import annotations

import dataclasses
import json
from copy import copy
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Any, Self

from mmcl.errors import ConfigError


class Modality(StrEnum):
    VISION = "v"
    AUDIO = "a"
    TEXT = "t"


ALL_MODALITIES: tuple[Modality, ...] = (Modality.VISION, Modality.AUDIO, Modality.TEXT)


class CompareMode(StrEnum):
    """How per-pair similarity matrices are combined."""

    MINOR = "minor"
    MAJOR = "major"
    MEAN = "mean"


class FusionMode(StrEnum):
    WEIGHTED_SUM = "weighted_sum"
    CONCAT = "concat"


class Task(StrEnum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class Branches(StrEnum):
    """Which feature families reach the joint representation."""

    BOTH = "both"
    COMMON = "common"
    SPECIFIC = "specific"


@dataclass(frozen=True)
class RewardSpec:
    """Task and discount used to form rewards and TD targets."""

    task: Task = Task.REGRESSION
    num_classes: int | None = None
    gamma: float = 0.5

    def __post_init__(self: Self) -> None:
        if not 0 <= self.gamma <= 1:
            msg = f"gamma must lie in [0, 1], got {self.gamma}"
            raise ConfigError(msg)
        if self.task == Task.CLASSIFICATION and (
            self.num_classes is None or self.num_classes < 2  # noqa: PLR2004
        ):
            msg = f"classification needs num_classes >= 2, got {self.num_classes}"
            raise ConfigError(msg)

    @property
    def output_size(self: Self) -> int:
        if self.task == Task.CLASSIFICATION:
            return int(self.num_classes or 0)
        return 1


@dataclass
class MmclConfig:
    """Architecture, objective and optimisation settings of one run."""

    d: int = 256
    d_ff: int | None = None
    d_critic: int | None = None
    critic_heads: int = 8
    enhance_heads: int = 1
    compare_mode: CompareMode = CompareMode.MINOR
    fusion: FusionMode = FusionMode.WEIGHTED_SUM
    task: Task = Task.REGRESSION
    num_classes: int | None = None
    gamma: float = 0.5
    alpha1: float = 15
    alpha2: float = 5
    batch_size: int = 64
    epochs: int = 200
    lr: float = 1e-3
    seed: int = 0
    use_csd: bool = True
    use_cce: bool = True
    use_csm: bool = True
    branches: Branches = Branches.BOTH
    modalities: tuple[Modality, ...] = field(default=ALL_MODALITIES)
    acc2_exclude_zero: bool = False
    depression_threshold: float | None = None

    def __post_init__(self: Self) -> None:
        self.compare_mode = CompareMode(self.compare_mode)
        self.fusion = FusionMode(self.fusion)
        self.task = Task(self.task)
        self.branches = Branches(self.branches)
        self.modalities = tuple(
            m for m in ALL_MODALITIES if m in {Modality(x) for x in self.modalities}
        )
        self.validate()

    def validate(self: Self) -> None:
        problems: list[str] = []
        if self.d < 1:
            problems.append(f"d must be >= 1, got {self.d}")
        if self.d_ff is not None and self.d_ff < 1:
            problems.append(f"d_ff must be >= 1, got {self.d_ff}")
        if self.alpha1 < 0 or self.alpha2 < 0:
            problems.append("alpha1 and alpha2 must be non-negative")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            problems.append(f"epochs must be >= 0, got {self.epochs}")
        if self.lr < 0:
            problems.append(f"lr must be >= 0, got {self.lr}")
        if not self.modalities:
            problems.append("modalities must select at least one modality")
        if self.critic_dim % self.critic_heads != 0:
            problems.append(
                f"d_critic ({self.critic_dim}) must be divisible by "
                f"critic_heads ({self.critic_heads})",
            )
        if self.d % self.enhance_heads != 0:
            problems.append(
                f"d ({self.d}) must be divisible by enhance_heads ({self.enhance_heads})",
            )
        if problems:
            raise ConfigError("; ".join(problems))
        # Raises on an invalid task/gamma combination.
        _ = self.reward_spec

    @property
    def ff_dim(self: Self) -> int:
        return 2 * self.d if self.d_ff is None else self.d_ff

    @property
    def critic_dim(self: Self) -> int:
        return self.d if self.d_critic is None else self.d_critic

    @property
    def reward_spec(self: Self) -> RewardSpec:
        return RewardSpec(self.task, self.num_classes, self.gamma)

    @property
    def mines_specific(self: Self) -> bool:
        """Whether the actor-critic branch is active."""
        return self.use_csm and self.branches != Branches.COMMON

    def _replace(self: Self, **changes: Any) -> Self:  # noqa: ANN401
        copied = copy(self)
        for key, value in changes.items():
            setattr(copied, key, value)
        copied.__post_init__()
        return copied

    def with_seed(self: Self, seed: int) -> Self:
        return self._replace(seed=seed)

    def with_epochs(self: Self, epochs: int) -> Self:
        return self._replace(epochs=epochs)

    def with_lr(self: Self, lr: float) -> Self:
        return self._replace(lr=lr)

    def with_alphas(self: Self, alpha1: float, alpha2: float) -> Self:
        return self._replace(alpha1=alpha1, alpha2=alpha2)

    def with_compare_mode(self: Self, mode: CompareMode) -> Self:
        return self._replace(compare_mode=mode)

    def with_fusion(self: Self, fusion: FusionMode) -> Self:
        return self._replace(fusion=fusion)

    def with_modalities(self: Self, modalities: tuple[Modality, ...] | str) -> Self:
        return self._replace(modalities=tuple(Modality(m) for m in modalities))

    def with_task(self: Self, task: Task, num_classes: int | None = None) -> Self:
        return self._replace(task=task, num_classes=num_classes)

    def with_variant(self: Self, name: str) -> Self:
        """Apply one of the named ablation variants (see VARIANTS)."""
        try:
            changes = VARIANTS[name]
        except KeyError:
            msg = f"unknown variant {name!r}; valid variants: {', '.join(VARIANTS)}"
            raise ConfigError(msg) from None
        return self._replace(**changes)

    @classmethod
    def for_sentiment(cls: type[Self], **overrides: Any) -> Self:  # noqa: ANN401
        return cls(**{"alpha1": 15, "alpha2": 5, "batch_size": 64, **overrides})

    @classmethod
    def for_emotion(cls: type[Self], num_classes: int = 4, **overrides: Any) -> Self:  # noqa: ANN401
        return cls(
            **{
                "task": Task.CLASSIFICATION,
                "num_classes": num_classes,
                "alpha1": 7,
                "alpha2": 13,
                "batch_size": 128,
                **overrides,
            },
        )

    @classmethod
    def for_depression(cls: type[Self], **overrides: Any) -> Self:  # noqa: ANN401
        return cls(
            **{
                "alpha1": 15,
                "alpha2": 5,
                "batch_size": 128,
                "depression_threshold": 9.0,
                **overrides,
            },
        )


VARIANTS: dict[str, dict[str, Any]] = {
    "full": {},
    "no-csd": {"use_csd": False},
    "no-cce": {"use_cce": False},
    "no-csm": {"use_csm": False},
    "fvs-major": {"compare_mode": CompareMode.MAJOR},
    "fvs-mean": {"compare_mode": CompareMode.MEAN},
    "common-only": {"branches": Branches.COMMON},
    "specific-only": {"branches": Branches.SPECIFIC},
}

_FIELDS = {f.name for f in dataclasses.fields(MmclConfig)}


def config_from_dict(values: dict[str, Any]) -> MmclConfig:
    """Build a config from JSON-like values; unknown keys are an error."""
    unknown = sorted(set(values) - _FIELDS)
    if unknown:
        msg = f"unknown config key(s): {', '.join(unknown)}"
        raise ConfigError(msg)
    values = dict(values)
    if "modalities" in values:
        values["modalities"] = tuple(values["modalities"])
    try:
        return MmclConfig(**values)
    except (TypeError, ValueError) as e:
        msg = f"invalid config: {e}"
        raise ConfigError(msg) from e


def config_to_dict(config: MmclConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, StrEnum):
            value = str(value)
        elif f.name == "modalities":
            value = [str(m) for m in value]
        out[f.name] = value
    return out


def load_config(path: Path) -> MmclConfig:
    try:
        values = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        msg = f"config file not found: {path}"
        raise ConfigError(msg) from e
    except json.JSONDecodeError as e:
        msg = f"config file {path} is not valid JSON: {e}"
        raise ConfigError(msg) from e
    if not isinstance(values, dict):
        msg = f"config file {path} must hold a JSON object"
        raise ConfigError(msg)
    return config_from_dict(values)
