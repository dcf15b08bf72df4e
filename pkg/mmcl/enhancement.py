"""Enhancement of crucial common features.

Intra-modal self-attention is followed by a feed-forward layer, and the two
outputs are summed: enhance(z) = attn(z) + ffn(attn(z)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Self

from mmcl import diffcore as dc
from mmcl.layers import (
    FeedForward,
    SelfAttention,
    init_feed_forward,
    init_self_attention,
)

if TYPE_CHECKING:
    import numpy as np

    from mmcl.diffcore import Tensor


@dataclass
class EnhanceBlock:
    attention: SelfAttention
    ffn: FeedForward

    @property
    def d(self: Self) -> int:
        return self.attention.query.in_features


def init_enhance_block(
    rng: np.random.Generator,
    d: int,
    d_ff: int | None = None,
    *,
    heads: int = 1,
) -> EnhanceBlock:
    return EnhanceBlock(
        init_self_attention(rng, d, heads),
        init_feed_forward(rng, d, 2 * d if d_ff is None else d_ff),
    )


def self_attention(zc: Tensor, block: EnhanceBlock) -> Tensor:
    return block.attention(dc.as_tensor(zc))


def enhance(zc: Tensor, block: EnhanceBlock) -> Tensor:
    attended = self_attention(zc, block)
    return attended + block.ffn(attended)
