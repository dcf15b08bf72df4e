"""Synthetic tri-modal sequences whose label signal moves between modalities over time.

Every segment of the time axis has one informative modality. There, each
sample's latent u_k is written along a fixed unit direction, on top of a
constant carrier along a second direction orthogonal to the first, plus
noise; the other modalities only carry distractor noise. The carrier marks
informative timesteps without touching the label, which is a linear readout
of the latents.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Self

import numpy as np
from scipy.stats import norm

from mmcl.config import ALL_MODALITIES, Modality, Task
from mmcl.data import MultimodalDataset
from mmcl.errors import ConfigError
from mmcl.util import timed


@dataclass(frozen=True)
class Segment:
    """Timesteps [start, stop) whose signal lives in ``modality``."""

    start: int
    stop: int
    modality: Modality

    def __post_init__(self: Self) -> None:
        object.__setattr__(self, "modality", Modality(self.modality))


def _default_segments() -> tuple[Segment, ...]:
    return (
        Segment(0, 3, Modality.VISION),
        Segment(3, 6, Modality.AUDIO),
        Segment(6, 9, Modality.TEXT),
    )


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 64
    length: int = 9
    dims: dict[str, int] = field(default_factory=lambda: {"v": 8, "a": 8, "t": 8})
    segments: tuple[Segment, ...] = field(default_factory=_default_segments)
    noise: float = 0.1
    distractor: float = 1.0
    carrier: float = 2.0
    label_scale: float = 1.0
    task: Task = Task.REGRESSION
    num_classes: int | None = None
    seed: int = 0

    def __post_init__(self: Self) -> None:
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(
            self,
            "segments",
            tuple(s if isinstance(s, Segment) else Segment(**s) for s in self.segments),
        )
        self.validate()

    def validate(self: Self) -> None:
        if self.n_samples < 1 or self.length < 1:
            msg = f"need n_samples >= 1 and length >= 1, got {self.n_samples}, {self.length}"
            raise ConfigError(msg)
        if self.noise < 0 or self.distractor < 0:
            msg = "noise and distractor levels must be non-negative"
            raise ConfigError(msg)
        if self.carrier and min(self.dims.values(), default=2) < 2:  # noqa: PLR2004
            msg = "a carrier needs every modality to be at least 2 wide"
            raise ConfigError(msg)
        if not self.dims or set(self.dims) - {str(m) for m in ALL_MODALITIES}:
            msg = f"dims must map modality codes to widths, got {self.dims}"
            raise ConfigError(msg)
        position = 0
        for segment in self.segments:
            if segment.start != position or segment.stop <= segment.start:
                msg = f"segments must partition [0, {self.length}) in order, got {self.segments}"
                raise ConfigError(msg)
            if segment.modality not in self.dims:
                msg = f"segment modality {segment.modality} has no feature dimension"
                raise ConfigError(msg)
            position = segment.stop
        if position != self.length:
            msg = f"segments cover [0, {position}), expected [0, {self.length})"
            raise ConfigError(msg)
        if self.task == Task.CLASSIFICATION and (self.num_classes or 0) < 2:  # noqa: PLR2004
            msg = "classification needs num_classes >= 2"
            raise ConfigError(msg)

    def with_seed(self: Self, seed: int) -> Self:
        return dataclasses.replace(self, seed=seed)

    def with_n_samples(self: Self, n_samples: int) -> Self:
        return dataclasses.replace(self, n_samples=n_samples)

    def with_noise(self: Self, noise: float) -> Self:
        return dataclasses.replace(self, noise=noise)

    def with_carrier(self: Self, carrier: float) -> Self:
        return dataclasses.replace(self, carrier=carrier)

    def with_task(self: Self, task: Task, num_classes: int | None = None) -> Self:
        return dataclasses.replace(self, task=task, num_classes=num_classes)

    @property
    def modalities(self: Self) -> list[str]:
        return [str(m) for m in ALL_MODALITIES if m in self.dims]

    @property
    def readout(self: Self) -> np.ndarray[Any, np.dtype[np.float64]]:
        """Label weights c_k = label_scale / sqrt(K) of the segment latents."""
        k = len(self.segments)
        return np.full(k, self.label_scale / np.sqrt(k))

    @classmethod
    def from_dict(cls: type[Self], values: dict[str, Any]) -> Self:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            msg = f"unknown synthetic spec key(s): {', '.join(unknown)}"
            raise ConfigError(msg)
        values = dict(values)
        if "segments" in values:
            values["segments"] = tuple(
                Segment(**s) if isinstance(s, dict) else Segment(*s)
                for s in values["segments"]
            )
        try:
            return cls(**values)
        except (TypeError, ValueError) as e:
            msg = f"invalid synthetic spec: {e}"
            raise ConfigError(msg) from e

    def to_dict(self: Self) -> dict[str, Any]:
        return {
            "n_samples": self.n_samples,
            "length": self.length,
            "dims": dict(self.dims),
            "segments": [
                {"start": s.start, "stop": s.stop, "modality": str(s.modality)}
                for s in self.segments
            ],
            "noise": self.noise,
            "distractor": self.distractor,
            "carrier": self.carrier,
            "label_scale": self.label_scale,
            "task": str(self.task),
            "num_classes": self.num_classes,
            "seed": self.seed,
        }


@dataclass
class SyntheticData:
    """A generated dataset with its ground truth.

    ``mask[t, j]`` is True when modality ``modalities[j]`` carries the label
    signal at timestep t.
    """

    dataset: MultimodalDataset
    mask: np.ndarray[Any, np.dtype[np.bool_]]
    modalities: list[str]
    latents: np.ndarray[Any, np.dtype[np.float64]]
    directions: dict[str, np.ndarray[Any, np.dtype[np.float64]]]
    carrier_directions: dict[str, np.ndarray[Any, np.dtype[np.float64]]]


def informativeness_mask(spec: SyntheticSpec) -> np.ndarray[Any, np.dtype[np.bool_]]:
    mask = np.zeros((spec.length, len(spec.modalities)), dtype=bool)
    for segment in spec.segments:
        mask[segment.start : segment.stop, spec.modalities.index(segment.modality)] = True
    return mask


def _orthogonal_unit(
    rng: np.random.Generator,
    direction: np.ndarray[Any, np.dtype[np.float64]],
) -> np.ndarray[Any, np.dtype[np.float64]]:
    v = rng.normal(size=direction.shape)
    v -= (v @ direction) * direction
    return v / np.linalg.norm(v)


@timed
def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Generate a segment-informative dataset and its ground truth.

    Parameters
    ----------
    spec : SyntheticSpec
        Sizes, segment plan, noise levels and seed.

    Returns
    -------
    SyntheticData
        The dataset, the [L, M] informativeness mask and the latents and
        directions it was built from.
    """
    rng = np.random.default_rng(spec.seed)
    n, length = spec.n_samples, spec.length
    directions = {}
    carrier_directions = {}
    for m in spec.modalities:
        v = rng.normal(size=spec.dims[m])
        directions[m] = v / np.linalg.norm(v)
        carrier_directions[m] = (
            _orthogonal_unit(rng, directions[m]) if spec.carrier else np.zeros(spec.dims[m])
        )

    latents = rng.normal(size=(n, len(spec.segments)))
    features = {
        m: rng.normal(0, spec.distractor, size=(n, length, spec.dims[m]))
        for m in spec.modalities
    }
    for k, segment in enumerate(spec.segments):
        m = str(segment.modality)
        width = segment.stop - segment.start
        signal = latents[:, k, None, None] * directions[m]
        signal = signal + spec.carrier * carrier_directions[m]
        noise = rng.normal(0, spec.noise, size=(n, width, spec.dims[m]))
        features[m][:, segment.start : segment.stop] = signal + noise

    readout = latents @ spec.readout
    if spec.task == Task.CLASSIFICATION:
        classes = int(spec.num_classes or 0)
        standardized = latents.sum(axis=1) / np.sqrt(len(spec.segments))
        edges = norm.ppf(np.arange(1, classes) / classes)
        labels = np.digitize(standardized, edges).astype(np.int64)
    else:
        labels = readout

    dataset = MultimodalDataset(
        features=features,
        labels=labels,
        ids=[f"syn{i:05d}" for i in range(n)],
        task=spec.task,
        num_classes=spec.num_classes,
    )
    return SyntheticData(
        dataset=dataset,
        mask=informativeness_mask(spec),
        modalities=spec.modalities,
        latents=latents,
        directions=directions,
        carrier_directions=carrier_directions,
    )
