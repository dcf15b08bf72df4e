"""Parameter-free common/specific decoupling.

Each modality is compared, timestep against timestep, with every other
modality through cosine similarity. Pairs that agree across modalities form
the common weights W_c; their complement forms the specific weights W_s.
Both are row-normalised and applied to the modality's own sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from mmcl import diffcore as dc
from mmcl.config import CompareMode
from mmcl.errors import ShapeError

if TYPE_CHECKING:
    from collections.abc import Sequence

    from mmcl.diffcore import Tensor


@dataclass(frozen=True)
class SimilarityMatrix:
    """Cosine similarities between the timesteps of two modalities, in [-1, 1]."""

    values: Tensor
    source_pair: tuple[str, str] = ("", "")


@dataclass(frozen=True)
class DecoupledPair:
    common: Tensor
    specific: Tensor
    w_common: Tensor
    w_specific: Tensor


def pairwise_cosine(
    za: Tensor | Any,  # noqa: ANN401
    zb: Tensor | Any,  # noqa: ANN401
    source_pair: tuple[str, str] = ("", ""),
) -> SimilarityMatrix:
    """Entry (i, j) is cos(za_i, zb_j); rows of zero norm give similarity 0."""
    za, zb = dc.as_tensor(za), dc.as_tensor(zb)
    if za.shape != zb.shape or za.ndim < 2:  # noqa: PLR2004
        raise ShapeError("pairwise_cosine", za.shape, zb.shape)
    values = dc.row_l2_normalize(za) @ dc.transpose(dc.row_l2_normalize(zb))
    return SimilarityMatrix(values, source_pair)


def combine_similarities(
    sims: Sequence[SimilarityMatrix],
    mode: CompareMode = CompareMode.MINOR,
) -> Tensor:
    """Entrywise minimum, maximum or mean of the similarity matrices."""
    if not sims:
        msg = "combine_similarities needs at least one similarity matrix"
        raise ValueError(msg)
    shapes = {s.values.shape for s in sims}
    if len(shapes) != 1:
        raise ShapeError("combine_similarities", *shapes)
    combined = sims[0].values
    for sim in sims[1:]:
        match CompareMode(mode):
            case CompareMode.MINOR:
                combined = dc.minimum(combined, sim.values)
            case CompareMode.MAJOR:
                combined = dc.maximum(combined, sim.values)
            case CompareMode.MEAN:
                combined = combined + sim.values
    if mode == CompareMode.MEAN and len(sims) > 1:
        combined = combined * (1 / len(sims))
    return combined


def decouple(
    z: Tensor | Any,  # noqa: ANN401
    others: Sequence[Tensor | Any],
    mode: CompareMode = CompareMode.MINOR,
) -> DecoupledPair:
    """Split z into common (W_c z) and specific (W_s z) components.

    Negative similarities are clamped to 0 and W_s is formed as 1 - S before
    normalisation. Each weight matrix is then scaled to unit row sums.

    Parameters
    ----------
    z : Tensor
        [..., L, d] features of the modality being split
    others : Sequence[Tensor]
        features of every other modality, each shaped like z
    mode : CompareMode, optional
        how the per-pair similarities combine, by default CompareMode.MINOR

    Returns
    -------
    DecoupledPair
    """
    z = dc.as_tensor(z)
    if not others:
        msg = "decouple needs at least one other modality"
        raise ValueError(msg)
    sims = [pairwise_cosine(z, other) for other in others]
    similarity = dc.clip(combine_similarities(sims, mode), 0.0, 1.0)
    w_common = dc.row_sum_normalize(similarity)
    w_specific = dc.row_sum_normalize(1.0 - similarity)
    return DecoupledPair(
        common=w_common @ z,
        specific=w_specific @ z,
        w_common=w_common,
        w_specific=w_specific,
    )
