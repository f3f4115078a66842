"""
heads.py
--------
Prediction heads on top of the decoder pyramid.

- Two pointmap heads (local, global) with independent weights, each reading
  levels B/2 and B: linear -> per-patch p x p x 4 unshuffle -> two 3x3 conv
  refinements with a residual. Channels are xyz + raw confidence, with
  confidence = 1 + exp(raw).
- A pose head: mean-pooled level B -> MLP -> 9 values mapped to a unit
  quaternion (w >= 0), a translation and two positive focal lengths.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from exceptions import DimensionError
from geometry import CameraPose, Pointmap
from layers import Parameters, add_linear, linear
from models import FrameOfReference, ModelConfig
from numerics import Tensor, concat, exp, gelu, im2col3x3, matmul, reshape, transpose, vector_norm

logger = logging.getLogger(__name__)

QUAT_GUARD = 1e-8
POINTMAP_KINDS = ("local", "global")
_IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass
class HeadOutputs:
    """Differentiable head outputs for a stack of n frames."""

    x_local: Tensor
    c_local: Tensor
    x_global: Tensor
    c_global: Tensor
    q: Tensor
    tau: Tensor
    f: Tensor

    def __len__(self) -> int:
        return self.q.shape[0]

    def to_predictions(self, first_index: int = 1) -> List["PointmapPrediction"]:
        return [
            PointmapPrediction(
                x_local=Pointmap(self.x_local.data[i], FrameOfReference.LOCAL),
                c_local=self.c_local.data[i],
                x_global=Pointmap(self.x_global.data[i], FrameOfReference.GLOBAL),
                c_global=self.c_global.data[i],
                pose=CameraPose(self.q.data[i].astype(np.float64), self.tau.data[i].astype(np.float64),
                                self.f.data[i].astype(np.float64)),
                t=first_index + i,
            )
            for i in range(len(self))
        ]


@dataclass
class PointmapPrediction:
    x_local: Pointmap
    c_local: np.ndarray
    x_global: Pointmap
    c_global: np.ndarray
    pose: CameraPose
    t: int


def add_heads(params: Parameters, cfg: ModelConfig) -> None:
    p2 = cfg.patch_size * cfg.patch_size
    for kind in POINTMAP_KINDS:
        add_linear(params, f"head.{kind}.proj", 2 * cfg.width, p2 * 4)
        add_linear(params, f"head.{kind}.conv1", 9 * 4, cfg.head_hidden)
        add_linear(params, f"head.{kind}.conv2", 9 * cfg.head_hidden, 4)
    add_linear(params, "head.pose.fc1", cfg.width, cfg.width)
    add_linear(params, "head.pose.fc2", cfg.width, 9)


def _check_pyramid(cfg: ModelConfig, levels: Sequence[Tensor]) -> None:
    if len(levels) != cfg.decoder_depth + 1:
        raise DimensionError(f"Pyramid has {len(levels)} levels, expected {cfg.decoder_depth + 1}")


def unshuffle(x: Tensor, cfg: ModelConfig, channels: int) -> Tensor:
    """(n, K, p*p*c) patch tokens -> (n, H, W, c) pixels."""
    n = x.shape[0]
    rows, cols = cfg.grid
    p = cfg.patch_size
    x = reshape(x, (n, rows, cols, p, p, channels))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (n, rows * p, cols * p, channels))


def conv3x3(params: Parameters, name: str, x: Tensor) -> Tensor:
    return linear(params, name, im2col3x3(x))


def head_pointmap(params: Parameters, cfg: ModelConfig, kind: str,
                  levels: Sequence[Tensor]):
    """
    Dense pointmap and confidence from the pyramid.

    Args:
        kind: "local" or "global"
        levels: B+1 tensors (n, K, C)

    Returns:
        (points (n, H, W, 3), confidence (n, H, W))
    """
    _check_pyramid(cfg, levels)
    mid, last = cfg.tap_levels
    name = f"head.{kind}"
    features = concat([levels[mid], levels[last]], axis=-1)
    base = unshuffle(linear(params, f"{name}.proj", features), cfg, 4)
    refined = base + conv3x3(params, f"{name}.conv2", gelu(conv3x3(params, f"{name}.conv1", base)))
    points = refined[..., 0:3]
    confidence = exp(refined[..., 3]) + 1.0
    return points, confidence


def head_pose(params: Parameters, cfg: ModelConfig, levels: Sequence[Tensor]):
    """
    Camera pose from the mean-pooled last level.

    Returns:
        q (n, 4) unit with w >= 0, tau (n, 3), f (n, 2) positive pixels
    """
    _check_pyramid(cfg, levels)
    pooled = levels[-1].mean(axis=1)
    raw = linear(params, "head.pose.fc2", gelu(linear(params, "head.pose.fc1", pooled)))

    q_raw = raw[:, 0:4] + _IDENTITY_QUAT.astype(raw.dtype)
    norms = np.linalg.norm(q_raw.data, axis=-1, keepdims=True)
    keep = (norms >= QUAT_GUARD).astype(raw.dtype)
    if not keep.all():
        logger.debug("Pose head produced a near-zero quaternion; using identity")
    q_safe = q_raw * keep + _IDENTITY_QUAT.astype(raw.dtype) * (1.0 - keep)
    q = q_safe / vector_norm(q_safe, axis=-1, keepdims=True)
    sign = np.where(q.data[:, 0:1] < 0, -1.0, 1.0).astype(raw.dtype)
    q = q * sign

    tau = raw[:, 4:7]
    f = exp(raw[:, 7:9]) * float(cfg.image_size[1])
    return q, tau, f


def run_heads(params: Parameters, cfg: ModelConfig, levels: Sequence[Tensor]) -> HeadOutputs:
    x_local, c_local = head_pointmap(params, cfg, "local", levels)
    x_global, c_global = head_pointmap(params, cfg, "global", levels)
    q, tau, f = head_pose(params, cfg, levels)
    return HeadOutputs(x_local, c_local, x_global, c_global, q, tau, f)
