"""
trainer.py
----------
Toy-scale training loop.

Each step samples ordered frame subsequences from the training scenes,
re-expresses their ground truth in the first sampled camera's frame, runs the
batched forward pass, the confidence/pose objective, backward and one AdamW
update. Losses are logged to a CSV (step, total, conf_local, conf_global,
pose, wall_ms); checkpoints carry the optimizer moments and the sampler RNG
state so that a resumed run continues bit for bit.
"""

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

import config
from checkpoint import Checkpoint, restore_optimizer, save_checkpoint
from exceptions import ConfigError, TrainingError
from geometry import CameraPose, transform_points
from losses import total_loss
from models import ModelConfig, TrainConfig
from numerics import AdamW, backward
from reconstructor import StreamingReconstructor
from scenegen import Frame, SceneSequence

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "total", "conf_local", "conf_global", "pose", "wall_ms"]


@dataclass
class TrainResult:
    model: StreamingReconstructor
    optimizer: AdamW
    log: pd.DataFrame
    checkpoints: List[str] = field(default_factory=list)

    @property
    def final_checkpoint(self) -> Optional[str]:
        return self.checkpoints[-1] if self.checkpoints else None


# ----------------------------------------------------------------------
# Sampling
# ----------------------------------------------------------------------
def sample_indices(rng: np.random.Generator, length: int, frame_range) -> List[int]:
    """
    Ordered frame indices of one subsequence.

    The count is drawn from frame_range (capped by the scene length), the
    start uniformly among positions that leave room for the remaining
    frames, and the rest without replacement from the frames after the start.
    """
    lo, hi = frame_range
    if length < lo:
        raise TrainingError(f"Scene has {length} frames, fewer than the minimum {lo}")
    n = int(rng.integers(lo, min(hi, length) + 1))
    start = int(rng.integers(0, length - n + 1))
    rest = np.sort(rng.choice(np.arange(start + 1, length), size=n - 1, replace=False))
    return [start] + [int(i) for i in rest]


def rebase_frames(frames: Sequence[Frame]) -> List[Frame]:
    """Re-express poses and global pointmaps in the first given frame's camera."""
    world_from_first = frames[0].pose.matrix()
    first_from_world = np.linalg.inv(world_from_first)
    rebased = []
    for i, frame in enumerate(frames):
        pose = CameraPose.from_matrix(first_from_world @ frame.pose.matrix(), frame.pose.f)
        if i == 0:
            world_points = frame.ptmap_local.copy()
        else:
            moved = transform_points(first_from_world, frame.ptmap_global.astype(np.float64))
            world_points = np.where(frame.valid_mask[..., None], moved, 0.0).astype(np.float32)
        rebased.append(Frame(frame.rgb, frame.depth, frame.valid_mask, pose, i + 1,
                             frame.ptmap_local, world_points))
    return rebased


def sample_batch(rng: np.random.Generator, scenes: Sequence[SceneSequence],
                 frame_range=config.DEFAULT_FRAME_RANGE, batch: int = 1) -> List[List[Frame]]:
    """
    Draw `batch` subsequences, each from a uniformly chosen scene.

    Raises:
        TrainingError: no scenes, or a scene shorter than the minimum count
    """
    if not scenes:
        raise TrainingError("No training scenes")
    if frame_range[0] < 2 or frame_range[0] > frame_range[1]:
        raise ConfigError(f"Invalid frame range {tuple(frame_range)}")
    batch_frames = []
    for _ in range(batch):
        scene = scenes[int(rng.integers(0, len(scenes)))]
        indices = sample_indices(rng, len(scene), frame_range)
        batch_frames.append(rebase_frames([scene.frames[i] for i in indices]))
    return batch_frames


def color_jitter(rng: np.random.Generator, images: np.ndarray, strength: float) -> np.ndarray:
    """Same per-channel gain and brightness offset for every frame of a sequence."""
    if strength <= 0:
        return images
    gain = 1.0 + rng.uniform(-strength, strength, size=3)
    offset = rng.uniform(-strength, strength) * 0.5
    return np.clip(images * gain + offset, 0.0, 1.0).astype(images.dtype)


def warmup_lr(step: int, base_lr: float, warmup_steps: int) -> float:
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, (step + 1) / warmup_steps)


# ----------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------
def _check_scenes(model_cfg: ModelConfig, scenes: Sequence[SceneSequence]) -> bool:
    """Resolution check; returns whether the scenes carry metric scale."""
    metric = {scene.metric_scale for scene in scenes}
    if len(metric) > 1:
        raise TrainingError("Cannot mix metric-scale and up-to-scale scenes in one run")
    for scene in scenes:
        resolution = tuple(scene.frames[0].depth.shape)
        if resolution != tuple(model_cfg.image_size):
            raise TrainingError(
                f"Scene seed={scene.seed} has resolution {resolution}, model expects {tuple(model_cfg.image_size)}"
            )
    return metric.pop()


def _rng_state(rng: np.random.Generator) -> Dict:
    return rng.bit_generator.state


def train_step(model: StreamingReconstructor, optimizer: AdamW, sequences: List[List[Frame]],
               train_cfg: TrainConfig, rng: np.random.Generator, lr: float,
               metric: bool = False) -> Dict[str, float]:
    """One optimizer step over a batch of subsequences; returns the averaged loss parts."""
    optimizer.zero_grad()
    reports = []
    loss = None
    for frames in sequences:
        images = color_jitter(rng, np.stack([f.rgb for f in frames]), train_cfg.color_jitter)
        outputs, _ = model.forward(images, train_cfg.policy)
        report = total_loss(outputs, frames, train_cfg.conf_alpha, train_cfg.pose_weight,
                            metric=metric, mode=train_cfg.scale_mode)
        reports.append(report)
        loss = report.loss if loss is None else loss + report.loss
    loss = loss / float(len(sequences))

    if not np.isfinite(loss.item()):
        raise TrainingError(f"Non-finite loss {loss.item()}: {[r.as_dict() for r in reports]}")
    backward(loss)
    dead = [name for name, p in model.params.items() if p.grad is None]
    if dead:
        raise TrainingError(f"Parameters received no gradient: {dead[:5]}")
    optimizer.step(lr=lr)

    return {
        "total": loss.item(),
        "conf_local": float(np.mean([r.conf_local for r in reports])),
        "conf_global": float(np.mean([r.conf_global for r in reports])),
        "pose": float(np.mean([r.pose for r in reports])),
    }


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, scenes: Sequence[SceneSequence],
          out_dir: Optional[str] = None, resume: Optional[Checkpoint] = None,
          progress: bool = False) -> TrainResult:
    """
    Train (or continue training) a model on in-memory scenes.

    Args:
        model_cfg: architecture; must match a resumed checkpoint
        train_cfg: optimisation settings
        scenes: training sequences, all at model_cfg.image_size
        out_dir: where checkpoints and the CSV log go (nothing is written if None)
        resume: checkpoint to continue from (weights, moments, step, RNG)
        progress: show a tqdm progress bar

    Raises:
        TrainingError: non-finite loss, a parameter without gradient, or a
                       scene/model mismatch
    """
    train_cfg.check()
    model_cfg.check()
    if not scenes:
        raise TrainingError("No training scenes")
    metric = _check_scenes(model_cfg, scenes)

    model = StreamingReconstructor(model_cfg)
    optimizer = AdamW(model.params.as_dict(), lr=train_cfg.lr, betas=train_cfg.betas,
                      eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    start_step = 0
    rows: List[Dict[str, float]] = []

    if resume is not None:
        if resume.config != model_cfg:
            raise TrainingError("Checkpoint model config differs from the requested one")
        model.load_state_dict(resume.params)
        state = restore_optimizer(resume)
        if state is not None:
            optimizer.state = state
        start_step = int(resume.train_state.get("step", 0))
        if "rng" in resume.train_state:
            rng.bit_generator.state = resume.train_state["rng"]
        rows = list(resume.train_state.get("log", []))
        logger.info(f"Resuming training at step {start_step}")

    checkpoints: List[str] = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def checkpoint(step: int, name: str) -> None:
        if not out_dir:
            return
        state = {"step": step, "rng": _rng_state(rng), "log": rows,
                 "train_config": train_cfg.model_dump(mode="json")}
        checkpoints.append(save_checkpoint(os.path.join(out_dir, name), model, optimizer.state, state))

    steps = range(start_step, train_cfg.steps)
    bar = tqdm(steps, desc="train", disable=not progress)
    for step in bar:
        began = time.perf_counter()
        sequences = sample_batch(rng, scenes, train_cfg.frame_range, train_cfg.batch)
        parts = train_step(model, optimizer, sequences, train_cfg, rng,
                           warmup_lr(step, train_cfg.lr, train_cfg.warmup_steps), metric)
        row = {"step": step, **parts, "wall_ms": (time.perf_counter() - began) * 1000.0}
        rows.append(row)
        bar.set_postfix(loss=f"{parts['total']:.4f}")
        if step % train_cfg.log_every == 0:
            logger.info(f"step {step}: total={parts['total']:.5f} conf_local={parts['conf_local']:.5f} "
                        f"conf_global={parts['conf_global']:.5f} pose={parts['pose']:.5f}")
        done = step + 1
        if train_cfg.checkpoint_every and done % train_cfg.checkpoint_every == 0 and done < train_cfg.steps:
            checkpoint(done, f"ckpt_{done:06d}.s3r")

    checkpoint(max(train_cfg.steps, start_step), "final.s3r")
    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    if out_dir or train_cfg.log_path:
        log_path = train_cfg.log_path or os.path.join(out_dir, "train_log.csv")
        log.to_csv(log_path, index=False)
        logger.info(f"Wrote training log ({len(log)} rows) to {log_path}")
    return TrainResult(model, optimizer, log, checkpoints)
