"""
losses.py
---------
Training objective.

Per pixel, for each pointmap branch:
    c * || x_pred / s_pred - x_gt / s_gt || - alpha * log(c)
averaged over valid pixels, plus a pose term per frame:
    ||q_pred - q_gt|| + ||tau_pred / s_pred - tau_gt / s_gt|| + ||f_pred / W - f_gt / W||

The normalizers are the mean distance to the origin of the global pointmaps
(ground truth for s_gt, prediction for s_pred). In metric mode s_pred := s_gt.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Sequence, Union

import numpy as np

from exceptions import ContractError, DegenerateError, DimensionError
from geometry import CameraPose
from heads import HeadOutputs
from models import ScaleMode
from numerics import Tensor, log, mul, tsum, vector_norm

logger = logging.getLogger(__name__)

Scale = Union[Tensor, np.ndarray, float]


@dataclass
class NormScale:
    """Ground-truth and predicted normalizers, scalar or one per frame."""

    s_gt: np.ndarray
    s_pred: Scale
    metric: bool = False

    def __post_init__(self):
        self.s_gt = np.asarray(self.s_gt, dtype=np.float64)
        if np.any(self.s_gt <= 0):
            raise DegenerateError(f"Ground-truth scale must be positive, got {self.s_gt}")


@dataclass
class LossReport:
    """Loss components; `loss` is the graph root used for backward."""

    loss: Tensor
    conf_local: float
    conf_global: float
    pose_q: float
    pose_tau: float
    pose_f: float
    mean_conf_local: float
    mean_conf_global: float
    pose_weight: float = 1.0

    @property
    def total(self) -> float:
        return self.loss.item()

    @property
    def pose(self) -> float:
        return self.pose_q + self.pose_tau + self.pose_f

    def as_dict(self) -> Dict[str, float]:
        return {
            "total": self.total,
            "conf_local": self.conf_local,
            "conf_global": self.conf_global,
            "pose": self.pose,
            "pose_q": self.pose_q,
            "pose_tau": self.pose_tau,
            "pose_f": self.pose_f,
            "mean_conf_local": self.mean_conf_local,
            "mean_conf_global": self.mean_conf_global,
        }


def scale_factor(points, valid_mask: np.ndarray, per_frame: bool = False):
    """
    Mean Euclidean norm of valid points.

    Args:
        points: (..., H, W, 3) array or Tensor
        valid_mask: (..., H, W) bool
        per_frame: reduce over (H, W) only, keeping a leading frame axis

    Raises:
        DegenerateError: no valid point (in any reduced group)
    """
    mask = np.asarray(valid_mask, dtype=bool)
    axes = (-2, -1) if per_frame else None
    count = mask.sum(axis=axes)
    if np.any(count == 0):
        raise DegenerateError("Scale factor needs at least one valid point")
    if isinstance(points, Tensor):
        norms = vector_norm(points, axis=-1)
        weights = mask.astype(points.dtype)
        return tsum(mul(norms, weights), axis=axes) / count.astype(points.dtype)
    norms = np.linalg.norm(np.asarray(points, dtype=np.float64), axis=-1)
    return (norms * mask).sum(axis=axes) / count


def _expand(scale: Scale, ndim_extra: int):
    """Append singleton axes so a per-frame scale broadcasts over (H, W, 3)."""
    if isinstance(scale, Tensor):
        return scale.reshape(scale.shape + (1,) * ndim_extra) if scale.ndim else scale
    scale = np.asarray(scale)
    return scale.reshape(scale.shape + (1,) * ndim_extra) if scale.ndim else scale


def conf_loss(pred: Tensor, conf: Tensor, gt: np.ndarray, mask: np.ndarray, scales: NormScale,
              alpha: float, reduction: str = "mean") -> Tensor:
    """
    Confidence-weighted regression term of one branch.

    Args:
        pred: (..., H, W, 3) predicted points
        conf: (..., H, W) confidences, > 0
        gt: ground-truth points, same shape as pred
        mask: valid pixels
        reduction: "mean" over valid pixels or "sum"

    Raises:
        DimensionError: shape mismatch
        ContractError: non-positive confidence
    """
    if pred.shape != gt.shape or conf.shape != pred.shape[:-1] or mask.shape != conf.shape:
        raise DimensionError(f"conf_loss shapes differ: pred {pred.shape}, conf {conf.shape}, "
                             f"gt {gt.shape}, mask {mask.shape}")
    if np.any(conf.data <= 0):
        raise ContractError(f"Confidence must be positive, min is {float(conf.data.min())}")
    s_pred = scales.s_pred if isinstance(scales.s_pred, Tensor) else np.asarray(scales.s_pred, dtype=pred.dtype)
    s_pred = _expand(s_pred, 3)
    s_gt = _expand(scales.s_gt, 3)
    target = (np.asarray(gt, dtype=np.float64) / s_gt).astype(pred.dtype)
    residual = vector_norm(pred / s_pred - target, axis=-1)
    per_pixel = conf * residual - log(conf) * alpha
    weights = mask.astype(pred.dtype)
    total = tsum(mul(per_pixel, weights))
    if reduction == "sum":
        return total
    count = int(mask.sum())
    if count == 0:
        raise DegenerateError("conf_loss over an empty mask")
    return total / float(count)


def pose_loss_terms(q: Tensor, tau: Tensor, f: Tensor, gt: CameraPose, s_pred: Scale, s_gt: float,
                    width: float):
    """Quaternion, translation and focal terms of one frame's pose loss (Tensors)."""
    term_q = vector_norm(q - gt.q.astype(q.dtype), axis=-1)
    term_tau = vector_norm(tau / s_pred - (gt.tau / s_gt).astype(tau.dtype), axis=-1)
    term_f = vector_norm(f / float(width) - (gt.f / width).astype(f.dtype), axis=-1)
    return term_q, term_tau, term_f


def pose_loss(pred: CameraPose, gt: CameraPose, scales: NormScale, width: float) -> float:
    """
    Pose loss between two canonicalized poses; focal normalized by image width.

    Example:
        >>> gt = CameraPose([1, 0, 0, 0], [1, 0, 0], [32, 32])
        >>> pred = CameraPose([1, 0, 0, 0], [0, 0, 0], [32, 32])
        >>> pose_loss(pred, gt, NormScale(2.0, 2.0), 32)
        0.5
    """
    s_pred = float(np.asarray(scales.s_gt if scales.metric else scales.s_pred))
    s_gt = float(scales.s_gt)
    return float(np.linalg.norm(pred.q - gt.q)
                 + np.linalg.norm(pred.tau / s_pred - gt.tau / s_gt)
                 + np.linalg.norm(pred.f / width - gt.f / width))


def compute_scales(outputs: HeadOutputs, frames: Sequence, metric: bool,
                   mode: ScaleMode = ScaleMode.SEQUENCE) -> NormScale:
    """Normalizers from the global ground truth and the global prediction."""
    gt_global = np.stack([f.ptmap_global for f in frames])
    masks = np.stack([f.valid_mask for f in frames])
    per_frame = mode == ScaleMode.FRAME
    s_gt = scale_factor(gt_global, masks, per_frame=per_frame)
    if metric:
        return NormScale(s_gt, np.asarray(s_gt), metric=True)
    return NormScale(s_gt, scale_factor(outputs.x_global, masks, per_frame=per_frame))


def total_loss(outputs: HeadOutputs, frames: Sequence, alpha: float, pose_weight: float = 1.0,
               metric: bool = False, mode: ScaleMode = ScaleMode.SEQUENCE) -> LossReport:
    """
    Full objective over both pointmap branches and all frame poses.

    Args:
        outputs: head outputs for n frames
        frames: the n ground-truth frames (in the same order)
        alpha: confidence regularizer weight
        pose_weight: weight of the summed pose terms
        metric: metric-scale supervision (s_pred := s_gt)
        mode: one normalizer per sequence or per frame

    Raises:
        ContractError: prediction count differs from frame count
    """
    n = len(frames)
    if len(outputs) != n:
        raise ContractError(f"{len(outputs)} predictions for {n} frames")
    scales = compute_scales(outputs, frames, metric, mode)
    masks = np.stack([f.valid_mask for f in frames])

    local = conf_loss(outputs.x_local, outputs.c_local, np.stack([f.ptmap_local for f in frames]),
                      masks, scales, alpha)
    world = conf_loss(outputs.x_global, outputs.c_global, np.stack([f.ptmap_global for f in frames]),
                      masks, scales, alpha)

    width = float(frames[0].depth.shape[1])
    q_terms, tau_terms, f_terms = [], [], []
    for i, frame in enumerate(frames):
        s_pred_i = scales.s_pred if np.ndim(scales.s_gt) == 0 else scales.s_pred[i]
        s_gt_i = float(scales.s_gt if np.ndim(scales.s_gt) == 0 else scales.s_gt[i])
        if isinstance(s_pred_i, np.ndarray):
            s_pred_i = float(s_pred_i)
        tq, tt, tf = pose_loss_terms(outputs.q[i], outputs.tau[i], outputs.f[i], frame.pose,
                                     s_pred_i, s_gt_i, width)
        q_terms.append(tq)
        tau_terms.append(tt)
        f_terms.append(tf)

    pose_sum = q_terms[0] + tau_terms[0] + f_terms[0]
    for tq, tt, tf in zip(q_terms[1:], tau_terms[1:], f_terms[1:]):
        pose_sum = pose_sum + tq + tt + tf
    loss = local + world + pose_sum * pose_weight

    valid = masks.astype(bool)
    report = LossReport(
        loss=loss,
        conf_local=local.item(),
        conf_global=world.item(),
        pose_q=float(sum(t.item() for t in q_terms)),
        pose_tau=float(sum(t.item() for t in tau_terms)),
        pose_f=float(sum(t.item() for t in f_terms)),
        mean_conf_local=float(outputs.c_local.data[valid].mean()),
        mean_conf_global=float(outputs.c_global.data[valid].mean()),
        pose_weight=pose_weight,
    )
    if not np.isfinite(report.total):
        logger.warning(f"Non-finite loss: {report.as_dict()}")
    return report
