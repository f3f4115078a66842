"""
evalsuite.py
------------
Evaluation protocols: video depth, camera trajectory and 3D reconstruction.

- Depth: Abs Rel, Sq Rel, RMSE and the 1.25 / 1.25^2 / 1.25^3 inlier ratios
  after per-frame median, per-sequence scale, per-sequence scale+shift or no
  alignment. Metrics are computed per frame and averaged over frames.
- Pose: Sim(3) alignment of camera centres (Umeyama), ATE as RMSE of the
  aligned centres, RPE over consecutive relative motions.
- Reconstruction: accuracy / completion as nearest-neighbour distances in
  both directions, normal consistency as |n_pred . n_gt| at the neighbour.
"""

import json
import logging
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from data_loader import count_predictions, read_dataset, read_prediction
from exceptions import ConsistencyError, DegenerateError, DimensionError
from geometry import CameraPose, Pointmap, Sim3, quat_to_matrix, rotation_angle_deg, umeyama_sim3
from heads import PointmapPrediction
from models import (DepthAlignment, DepthMetrics, FrameOfReference, MetricsReport, PoseMetrics,
                    ReconMetrics)

logger = logging.getLogger(__name__)

MIN_DEPTH = 1e-6


# ----------------------------------------------------------------------
# Depth
# ----------------------------------------------------------------------
def _frame_depth_errors(pred: np.ndarray, gt: np.ndarray) -> Tuple[float, ...]:
    thresh = np.maximum(gt / pred, pred / gt)
    return (
        float(np.mean(np.abs(gt - pred) / gt)),
        float(np.mean((gt - pred) ** 2 / gt)),
        float(np.sqrt(np.mean((gt - pred) ** 2))),
        float(np.mean(thresh < 1.25)),
        float(np.mean(thresh < 1.25 ** 2)),
        float(np.mean(thresh < 1.25 ** 3)),
    )


def depth_metrics(pred_depths: Sequence[np.ndarray], gt_depths: Sequence[np.ndarray],
                  masks: Sequence[np.ndarray],
                  mode: DepthAlignment = DepthAlignment.PER_FRAME_MEDIAN) -> DepthMetrics:
    """
    Depth errors after the requested alignment.

    Args:
        pred_depths: per-frame predicted z-depth (H, W)
        gt_depths: per-frame ground-truth depth
        masks: per-frame valid pixels (gt > 0 is also required)
        mode: alignment applied to the predictions

    Returns:
        DepthMetrics averaged over frames, with the fitted scales

    Raises:
        DimensionError: mismatched inputs
        DegenerateError: a frame without valid pixels or a zero median
    """
    if not (len(pred_depths) == len(gt_depths) == len(masks)) or not pred_depths:
        raise DimensionError(f"Depth inputs differ in length: {len(pred_depths)}, {len(gt_depths)}, {len(masks)}")
    preds, gts = [], []
    for pred, gt, mask in zip(pred_depths, gt_depths, masks):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise DimensionError(f"Predicted depth {pred.shape} != ground truth {gt.shape}")
        valid = np.asarray(mask, dtype=bool) & (gt > 0)
        if not valid.any():
            raise DegenerateError("Frame without valid depth pixels")
        preds.append(pred[valid])
        gts.append(gt[valid])

    scales: List[float] = []
    shift: Optional[float] = None
    if mode == DepthAlignment.PER_FRAME_MEDIAN:
        aligned = []
        for pred, gt in zip(preds, gts):
            med = np.median(pred)
            if med == 0:
                raise DegenerateError("Predicted depth has zero median")
            scales.append(float(np.median(gt) / med))
            aligned.append(pred * scales[-1])
        preds = aligned
    elif mode == DepthAlignment.PER_SEQUENCE_SCALE:
        all_pred, all_gt = np.concatenate(preds), np.concatenate(gts)
        usable = all_pred != 0
        if not usable.any():
            raise DegenerateError("Predicted depth is zero everywhere")
        scale = float(np.median(all_gt[usable] / all_pred[usable]))
        if scale == 0:
            raise DegenerateError("Per-sequence scale has zero median")
        scales.append(scale)
        preds = [p * scale for p in preds]
    elif mode == DepthAlignment.PER_SEQUENCE_SCALE_SHIFT:
        all_pred, all_gt = np.concatenate(preds), np.concatenate(gts)
        design = np.stack([all_pred, np.ones_like(all_pred)], axis=-1)
        (scale, shift), *_ = np.linalg.lstsq(design, all_gt, rcond=None)
        scales.append(float(scale))
        shift = float(shift)
        preds = [p * scale + shift for p in preds]

    per_frame = np.array([_frame_depth_errors(np.maximum(p, MIN_DEPTH), g) for p, g in zip(preds, gts)])
    abs_rel, sq_rel, rmse, d1, d2, d3 = per_frame.mean(axis=0)
    return DepthMetrics(
        abs_rel=float(abs_rel), sq_rel=float(sq_rel), rmse=float(rmse),
        delta_125=float(d1), delta_125_2=float(d2), delta_125_3=float(d3),
        alignment=mode, scales=scales, shift=shift, n_frames=len(preds),
    )


# ----------------------------------------------------------------------
# Pose
# ----------------------------------------------------------------------
def _pose_matrix(rotation: np.ndarray, center: np.ndarray) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rotation
    T[:3, 3] = center
    return T


def align_trajectory(pred: Sequence[CameraPose], gt: Sequence[CameraPose]) -> Tuple[Sim3, List[np.ndarray]]:
    """Sim(3) from predicted to ground-truth centres, and the aligned predicted poses as 4x4."""
    if len(pred) != len(gt):
        raise DimensionError(f"Trajectory lengths differ: {len(pred)} vs {len(gt)}")
    if len(pred) < 3:
        raise DegenerateError(f"Trajectory alignment needs at least 3 poses, got {len(pred)}")
    sim = umeyama_sim3(np.stack([p.tau for p in pred]), np.stack([g.tau for g in gt]))
    aligned = [
        _pose_matrix(sim.rotation @ quat_to_matrix(p.q), sim.apply(p.tau[None])[0]) for p in pred
    ]
    return sim, aligned


def relative_pose_errors(pred: Sequence[CameraPose], gt: Sequence[CameraPose]) -> List[Tuple[float, float]]:
    """(translation error, rotation error in degrees) for each consecutive pair, after alignment."""
    _, aligned = align_trajectory(pred, gt)
    gt_mats = [_pose_matrix(quat_to_matrix(g.q), g.tau) for g in gt]
    errors = []
    for i in range(len(gt) - 1):
        rel_pred = np.linalg.inv(aligned[i]) @ aligned[i + 1]
        rel_gt = np.linalg.inv(gt_mats[i]) @ gt_mats[i + 1]
        delta = np.linalg.inv(rel_gt) @ rel_pred
        errors.append((float(np.linalg.norm(delta[:3, 3])), rotation_angle_deg(delta[:3, :3])))
    return errors


def pose_metrics(pred: Sequence[CameraPose], gt: Sequence[CameraPose]) -> PoseMetrics:
    """
    ATE / RPE after Sim(3) alignment of camera centres.

    Raises:
        DegenerateError: fewer than 3 poses or collinear/coincident centres
    """
    sim, aligned = align_trajectory(pred, gt)
    aligned_centers = np.stack([T[:3, 3] for T in aligned])
    gt_centers = np.stack([g.tau for g in gt])
    ate = float(np.sqrt(np.mean(np.sum((aligned_centers - gt_centers) ** 2, axis=-1))))
    errors = np.array(relative_pose_errors(pred, gt))
    return PoseMetrics(
        ate=ate,
        rpe_trans=float(errors[:, 0].mean()),
        rpe_rot=float(errors[:, 1].mean()),
        align_scale=float(sim.scale),
        n_poses=len(gt),
    )


def trajectory_extent(poses: Sequence[CameraPose]) -> float:
    centers = np.stack([p.tau for p in poses])
    return float(np.linalg.norm(centers.max(axis=0) - centers.min(axis=0)))


# ----------------------------------------------------------------------
# Reconstruction
# ----------------------------------------------------------------------
def normals_from_pointmap(points: np.ndarray, valid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unit normals from grid finite differences (cross product of the
    horizontal and vertical derivatives). Pixels whose normal is undefined
    are reported invalid.
    """
    points = np.asarray(points, dtype=np.float64)
    d_row = np.gradient(points, axis=0)
    d_col = np.gradient(points, axis=1)
    normals = np.cross(d_col, d_row)
    norm = np.linalg.norm(normals, axis=-1, keepdims=True)
    ok = valid & (norm[..., 0] > 1e-12)
    ok[:-1] &= valid[1:]
    ok[1:] &= valid[:-1]
    ok[:, :-1] &= valid[:, 1:]
    ok[:, 1:] &= valid[:, :-1]
    return np.where(norm > 1e-12, normals / np.where(norm > 1e-12, norm, 1.0), 0.0), ok


def brute_force_nn(query: np.ndarray, ref: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    dist = np.sqrt(((query[:, None, :] - ref[None, :, :]) ** 2).sum(axis=-1))
    idx = dist.argmin(axis=1)
    return dist[np.arange(len(query)), idx], idx


def recon_metrics(pred_points: np.ndarray, gt_points: np.ndarray,
                  pred_normals: Optional[np.ndarray] = None,
                  gt_normals: Optional[np.ndarray] = None) -> ReconMetrics:
    """
    Accuracy, completion and normal consistency between two clouds.
    Normal consistency is left as None unless both normal sets are given.

    Raises:
        DegenerateError: an empty cloud
    """
    pred_points = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    gt_points = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if len(pred_points) == 0 or len(gt_points) == 0:
        raise DegenerateError(f"Empty cloud: {len(pred_points)} predicted, {len(gt_points)} ground-truth points")

    acc, idx_acc = cKDTree(gt_points).query(pred_points)
    comp, idx_comp = cKDTree(pred_points).query(gt_points)

    nc_mean = nc_median = None
    if pred_normals is not None and gt_normals is not None:
        nc_acc = np.abs(np.sum(pred_normals * gt_normals[idx_acc], axis=-1))
        nc_comp = np.abs(np.sum(gt_normals * pred_normals[idx_comp], axis=-1))
        nc_mean = float(np.clip((nc_acc.mean() + nc_comp.mean()) / 2, -1.0, 1.0))
        nc_median = float(np.clip((np.median(nc_acc) + np.median(nc_comp)) / 2, -1.0, 1.0))
    return ReconMetrics(
        acc_mean=float(acc.mean()), acc_median=float(np.median(acc)),
        comp_mean=float(comp.mean()), comp_median=float(np.median(comp)),
        nc_mean=nc_mean, nc_median=nc_median,
        n_pred=len(pred_points), n_gt=len(gt_points),
    )


def gather_cloud(pointmaps: Sequence[np.ndarray], masks: Sequence[np.ndarray]):
    """Stack valid points and their grid normals from several pointmaps."""
    points, normals = [], []
    for pm, mask in zip(pointmaps, masks):
        n, ok = normals_from_pointmap(pm, mask)
        points.append(np.asarray(pm, dtype=np.float64)[ok])
        normals.append(n[ok])
    return np.concatenate(points), np.concatenate(normals)


# ----------------------------------------------------------------------
# Sequences
# ----------------------------------------------------------------------
def evaluate_sequence(frames: Sequence, predictions: Sequence[PointmapPrediction],
                      depth_mode: DepthAlignment = DepthAlignment.PER_FRAME_MEDIAN,
                      min_confidence: float = 0.0, scene: str = "") -> MetricsReport:
    """
    All three metric bundles for one sequence.

    Reconstruction uses the predicted global pointmaps after a Sim(3) fit to
    the ground-truth global pointmaps over valid pixels. A degenerate camera
    trajectory leaves the pose bundle empty and adds a note.
    """
    if len(frames) != len(predictions):
        raise DimensionError(f"{len(predictions)} predictions for {len(frames)} frames")
    notes = [f"depth alignment: {depth_mode.value}"]
    masks = [f.valid_mask for f in frames]

    depth = depth_metrics([p.x_local.points[..., 2] for p in predictions],
                          [f.depth for f in frames], masks, depth_mode)

    pose = None
    try:
        pose = pose_metrics([p.pose for p in predictions], [f.pose for f in frames])
        notes.append(f"pose: sim3 on camera centres, scale {pose.align_scale:.6g}")
    except DegenerateError as e:
        logger.warning(f"Skipping pose metrics for {scene or 'sequence'}: {e}")
        notes.append(f"pose: skipped ({e})")

    keep = [m & (p.c_global >= min_confidence) for m, p in zip(masks, predictions)]
    pred_pts = np.concatenate([p.x_global.points[k] for p, k in zip(predictions, keep)]).astype(np.float64)
    gt_pts = np.concatenate([f.ptmap_global[k] for f, k in zip(frames, keep)]).astype(np.float64)
    try:
        sim = umeyama_sim3(pred_pts, gt_pts)
    except DegenerateError:
        sim = Sim3.identity()
    aligned = [sim.apply(np.asarray(p.x_global.points, dtype=np.float64)) for p in predictions]
    pred_cloud, pred_normals = gather_cloud(aligned, keep)
    gt_cloud, gt_normals = gather_cloud([f.ptmap_global for f in frames], masks)
    recon = recon_metrics(pred_cloud, gt_cloud, pred_normals, gt_normals)
    notes.append(f"recon: sim3 on global points, scale {sim.scale:.6g}, min_confidence {min_confidence}")

    return MetricsReport(scene=scene, depth=depth, pose=pose, recon=recon, notes=notes)


def write_metrics(report: MetricsReport, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write(report.model_dump_json(indent=2))
    logger.info(f"Wrote metrics to {path}")
    return path


def read_metrics(path: str) -> MetricsReport:
    with open(path) as f:
        return MetricsReport.model_validate(json.load(f))


def load_predictions(pred_dir: str, resolution: Tuple[int, int], n_frames: int) -> List[PointmapPrediction]:
    """Read the per-frame dumps written by a streaming run."""
    found = count_predictions(pred_dir)
    if found != n_frames:
        raise ConsistencyError(f"{pred_dir}: {found} prediction dumps for {n_frames} frames")
    predictions = []
    for t in range(1, n_frames + 1):
        dump = read_prediction(pred_dir, t, resolution)
        predictions.append(PointmapPrediction(
            x_local=Pointmap(dump["x_local"].astype(np.float64), FrameOfReference.LOCAL),
            c_local=dump["c_local"],
            x_global=Pointmap(dump["x_global"].astype(np.float64), FrameOfReference.GLOBAL),
            c_global=dump["c_global"],
            pose=dump["pose"],
            t=t,
        ))
    return predictions


def evaluate_directory(scene_dir: str, pred_dir: str,
                       depth_mode: DepthAlignment = DepthAlignment.PER_FRAME_MEDIAN,
                       min_confidence: float = 0.0) -> MetricsReport:
    seq = read_dataset(scene_dir)
    height, width = seq.frames[0].depth.shape
    predictions = load_predictions(pred_dir, (height, width), len(seq))
    report = evaluate_sequence(seq.frames, predictions, depth_mode, min_confidence,
                               scene=os.path.basename(os.path.normpath(scene_dir)))
    logger.info(f"Evaluated {scene_dir}: abs_rel={report.depth.abs_rel:.4f} "
                f"ate={report.pose.ate if report.pose else float('nan'):.4f} "
                f"acc={report.recon.acc_mean:.4f}")
    return report
