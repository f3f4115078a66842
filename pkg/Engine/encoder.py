"""
encoder.py
----------
Weight-shared ViT encoder: frame -> TokenGrid.

Every frame is encoded independently with the same weights; there is no
cross-frame state, so encoding a batch equals encoding its frames one by one.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from embeddings import add_patch_embedding, grid_positions, patchify, rope_tables
from exceptions import DimensionError
from layers import Parameters, add_attention, add_layer_norm, add_mlp, layer_norm, mlp, self_attention
from models import ModelConfig
from numerics import Tensor

logger = logging.getLogger(__name__)


@dataclass
class TokenGrid:
    """K x C tokens of one frame on a (rows, cols) patch grid."""

    tokens: Tensor
    grid: Tuple[int, int]
    t: int

    def __post_init__(self):
        rows, cols = self.grid
        if self.tokens.shape[0] != rows * cols:
            raise DimensionError(f"TokenGrid has {self.tokens.shape[0]} tokens for grid {self.grid}")

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


def add_encoder(params: Parameters, cfg: ModelConfig) -> None:
    add_patch_embedding(params, cfg.patch_size, cfg.width)
    for i in range(cfg.encoder_depth):
        add_layer_norm(params, f"enc.{i}.ln1", cfg.width)
        add_attention(params, f"enc.{i}.attn", cfg.width, cfg.num_heads)
        add_layer_norm(params, f"enc.{i}.ln2", cfg.width)
        add_mlp(params, f"enc.{i}.mlp", cfg.width, cfg.mlp_ratio)
    add_layer_norm(params, "enc.norm", cfg.width)


def encoder_block(params: Parameters, cfg: ModelConfig, i: int, x: Tensor, rope) -> Tensor:
    """Pre-norm block: x + Attn(LN(x)) then x + MLP(LN(x)); RoPE on q and k."""
    x = x + self_attention(params, f"enc.{i}.attn", layer_norm(params, f"enc.{i}.ln1", x),
                           cfg.num_heads, rope)
    return x + mlp(params, f"enc.{i}.mlp", layer_norm(params, f"enc.{i}.ln2", x))


def encode_images(params: Parameters, cfg: ModelConfig, images) -> Tensor:
    """
    Encode a stack of frames.

    Args:
        images: (n, H, W, 3) RGB in [0, 1]

    Returns:
        (n, K, C) encoder tokens F_t

    Raises:
        DimensionError: resolution differs from the model's image size
    """
    shape = images.shape
    if tuple(shape[1:3]) != tuple(cfg.image_size):
        raise DimensionError(f"Frame resolution {tuple(shape[1:3])} != model image size {tuple(cfg.image_size)}")
    x = patchify(params, images, cfg.patch_size)
    cos, sin = rope_tables(grid_positions(cfg.grid), cfg.head_dim, cfg.rope_base, dtype=x.dtype)
    for i in range(cfg.encoder_depth):
        x = encoder_block(params, cfg, i, x, (cos, sin))
    return layer_norm(params, "enc.norm", x)


def encode(params: Parameters, cfg: ModelConfig, rgb: np.ndarray, t: int = 1) -> TokenGrid:
    """Encode a single H x W x 3 frame."""
    tokens = encode_images(params, cfg, np.asarray(rgb)[None])
    return TokenGrid(tokens[0], cfg.grid, t)


def encode_frames(params: Parameters, cfg: ModelConfig, frames: Sequence[np.ndarray]) -> List[TokenGrid]:
    tokens = encode_images(params, cfg, np.stack(frames))
    return [TokenGrid(tokens[i], cfg.grid, i + 1) for i in range(len(frames))]
