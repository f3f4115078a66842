"""
embeddings.py
-------------
Image tokenization and rotary position embedding.

This module turns RGB frames into patch tokens and builds the 2D rotary
tables the encoder applies to queries and keys. Separated from encoder.py
so the decoder and the tests can use the position code on its own.
"""

import logging
from typing import Tuple

import numpy as np

from exceptions import ConfigError, DimensionError
from layers import Parameters, add_linear, linear
from numerics import Tensor, reshape, rope_rotate, transpose

logger = logging.getLogger(__name__)


def add_patch_embedding(params: Parameters, patch_size: int, width: int) -> None:
    add_linear(params, "patch_embed", patch_size * patch_size * 3, width)


def patch_vectors(images, patch_size: int) -> Tensor:
    """
    Flatten non-overlapping p x p x 3 patches in row-major patch order.

    Args:
        images: (n, H, W, 3) array or Tensor

    Returns:
        (n, K, p*p*3) with K = (H/p) * (W/p)

    Raises:
        DimensionError: H or W not divisible by p
    """
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images))
    if x.ndim != 4 or x.shape[-1] != 3:
        raise DimensionError(f"Expected images of shape (n, H, W, 3), got {x.shape}")
    n, height, width, _ = x.shape
    if height % patch_size or width % patch_size:
        raise DimensionError(f"Image {height}x{width} is not divisible by patch size {patch_size}")
    rows, cols = height // patch_size, width // patch_size
    x = reshape(x, (n, rows, patch_size, cols, patch_size, 3))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (n, rows * cols, patch_size * patch_size * 3))


def patchify(params: Parameters, images, patch_size: int) -> Tensor:
    """Linear projection of flattened patches: (n, H, W, 3) -> (n, K, C)."""
    return linear(params, "patch_embed", patch_vectors(images, patch_size))


# ----------------------------------------------------------------------
# 2D RoPE
# ----------------------------------------------------------------------
def grid_positions(grid: Tuple[int, int]) -> np.ndarray:
    """(K, 2) integer (row, col) of every patch in row-major order."""
    rows, cols = grid
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.stack([r.reshape(-1), c.reshape(-1)], axis=-1)


def rope_frequencies(head_dim: int, base: float) -> np.ndarray:
    if head_dim % 2:
        raise ConfigError(f"RoPE needs an even head dimension, got {head_dim}")
    pairs = head_dim // 2
    return base ** (-2.0 * (np.arange(pairs) // 2) / pairs)


def rope_tables(positions: np.ndarray, head_dim: int, base: float,
                dtype=np.float32) -> Tuple[np.ndarray, np.ndarray]:
    """
    cos / sin tables of shape (K, head_dim).

    Feature pair j rotates with the row coordinate when j is even and with
    the column coordinate when j is odd; both entries of a pair share the angle.
    """
    freqs = rope_frequencies(head_dim, base)
    axis = np.arange(freqs.size) % 2
    angles = positions[:, axis].astype(np.float64) * freqs[None, :]
    angles = np.repeat(angles, 2, axis=-1)
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def apply_rope(x, positions: np.ndarray, base: float) -> Tensor:
    """Rotate features (..., K, d) by the 2D positions (K, 2)."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    cos, sin = rope_tables(positions, x.shape[-1], base, dtype=x.dtype)
    return rope_rotate(x, cos, sin)
