"""
scenegen.py
-----------
Procedural synthetic scenes for training and evaluation.

Analytic primitives (spheres, planar discs, boxes) inside a room made of a
back wall and a floor are ray-cast from a moving pinhole camera. Every frame
carries exact depth, local and global pointmaps and its camera pose. The
world frame is the first camera.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

import config
from exceptions import ConfigError, GenerationError
from geometry import (CameraPose, Pointmap, axis_angle_to_quat, local_to_global,
                      pixel_rays, quat_multiply, quat_to_matrix, unproject)
from models import FrameOfReference, PrimitiveKind, PrimitiveSpec, SceneConfig, Trajectory

logger = logging.getLogger(__name__)

MAX_DEPTH = 100.0
ROOM_FLOOR_Y = 1.5
ROOM_BACK_Z = 9.0
ORBIT_MAX_SWEEP_DEG = 40.0
DOLLY_MAX_TRAVEL = 1.5
RANDOM_WALK_YAW_LIMIT = 35.0
RANDOM_WALK_PITCH_LIMIT = 12.0
_LIGHT = np.array([0.3, -0.8, -0.5]) / np.linalg.norm([0.3, -0.8, -0.5])


@dataclass
class Frame:
    """One rendered view with its ground truth."""

    rgb: np.ndarray
    depth: np.ndarray
    valid_mask: np.ndarray
    pose: CameraPose
    t: int
    ptmap_local: np.ndarray
    ptmap_global: np.ndarray

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.depth.shape

    def local(self) -> Pointmap:
        return Pointmap(self.ptmap_local, FrameOfReference.LOCAL, self.valid_mask)

    def global_(self) -> Pointmap:
        return Pointmap(self.ptmap_global, FrameOfReference.GLOBAL, self.valid_mask)


@dataclass
class SceneSequence:
    """Ordered frames of one scene; the world frame is frame 1's camera."""

    frames: List[Frame]
    config: SceneConfig
    seed: int
    primitives: List[PrimitiveSpec] = field(default_factory=list)
    world: str = "frame-1"

    @property
    def metric_scale(self) -> bool:
        return self.config.metric_scale

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def poses(self) -> List[CameraPose]:
        return [frame.pose for frame in self.frames]


def decode_rgb(u8: np.ndarray) -> np.ndarray:
    """8-bit RGB -> float32 in [0, 1]; shared by the generator and the PPM reader."""
    return (u8.astype(np.float64) / 255.0).astype(np.float32)


def encode_rgb(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


# ----------------------------------------------------------------------
# Textures
# ----------------------------------------------------------------------
def _lattice_hash(i, j, k) -> np.ndarray:
    h = np.sin(i * 12.9898 + j * 78.233 + k * 37.719) * 43758.5453
    return h - np.floor(h)


def value_noise(p: np.ndarray, frequency: float = 2.0) -> np.ndarray:
    """Smooth 3D value noise in [0, 1] evaluated at points (..., 3)."""
    q = p * frequency
    base = np.floor(q)
    frac = q - base
    w = frac * frac * (3.0 - 2.0 * frac)
    total = np.zeros(p.shape[:-1])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                corner = _lattice_hash(base[..., 0] + dx, base[..., 1] + dy, base[..., 2] + dz)
                weight = ((w[..., 0] if dx else 1 - w[..., 0])
                          * (w[..., 1] if dy else 1 - w[..., 1])
                          * (w[..., 2] if dz else 1 - w[..., 2]))
                total += weight * corner
    return total


def texture(spec: PrimitiveSpec, local_points: np.ndarray) -> np.ndarray:
    color = np.asarray(spec.color)
    alt = np.asarray(spec.color_alt)
    if spec.texture == "checker":
        cells = np.floor(local_points * 2.0).astype(np.int64).sum(axis=-1)
        mix = (cells % 2).astype(np.float64)
    elif spec.texture == "gradient":
        mix = 0.5 + 0.5 * np.tanh(local_points[..., 0] + 0.5 * local_points[..., 1])
    elif spec.texture == "noise":
        mix = value_noise(local_points)
    else:
        raise GenerationError(f"Unknown texture '{spec.texture}'")
    return color * (1.0 - mix[..., None]) + alt * mix[..., None]


# ----------------------------------------------------------------------
# Ray casting
# ----------------------------------------------------------------------
def _yaw_matrix(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _primitive_state(spec: PrimitiveSpec, t: int) -> Tuple[np.ndarray, np.ndarray]:
    """Centre and orientation of a primitive at frame index t (0-based)."""
    center = np.asarray(spec.center, dtype=np.float64)
    if not spec.dynamic:
        return center, np.eye(3)
    return center + t * np.asarray(spec.velocity), _yaw_matrix(t * spec.spin_deg)


def intersect(spec: PrimitiveSpec, t: int, origin: np.ndarray,
              dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Ray parameters, world normals and primitive-local hit points for all rays.

    Returns:
        lam (...), normals (..., 3), local hit points (..., 3); misses have lam = inf
    """
    center, rot = _primitive_state(spec, t)
    o = rot.T @ (origin - center)
    d = dirs @ rot
    lam = np.full(dirs.shape[:-1], np.inf)
    normal_local = np.zeros(dirs.shape)

    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.kind == PrimitiveKind.SPHERE:
            r = spec.size[0]
            a = (d * d).sum(-1)
            b = 2.0 * (d @ o)
            c = o @ o - r * r
            disc = b * b - 4 * a * c
            root = np.sqrt(np.maximum(disc, 0.0))
            near = (-b - root) / (2 * a)
            far = (-b + root) / (2 * a)
            hit = np.where(near > 1e-6, near, far)
            ok = (disc >= 0) & (hit > 1e-6)
            lam = np.where(ok, hit, np.inf)
            normal_local = o + lam[..., None] * d
            normal_local = normal_local / r
        elif spec.kind == PrimitiveKind.PLANE:
            n = np.asarray(spec.normal, dtype=np.float64)
            n = n / np.linalg.norm(n)
            denom = d @ n
            hit = -(o @ n) / denom
            ok = np.abs(denom) > 1e-9
            ok &= hit > 1e-6
            radius = spec.size[0] if spec.size else 0.0
            if radius > 0:
                offset = o + hit[..., None] * d
                ok &= np.linalg.norm(offset, axis=-1) <= radius
            lam = np.where(ok, hit, np.inf)
            normal_local = np.broadcast_to(n, dirs.shape).copy()
        elif spec.kind == PrimitiveKind.BOX:
            half = np.asarray(spec.size, dtype=np.float64)
            t0 = (-half - o) / d
            t1 = (half - o) / d
            t_near = np.minimum(t0, t1)
            t_far = np.maximum(t0, t1)
            enter = np.nanmax(t_near, axis=-1)
            leave = np.nanmin(t_far, axis=-1)
            ok = (enter <= leave) & (enter > 1e-6)
            lam = np.where(ok, enter, np.inf)
            axis = np.nanargmax(t_near, axis=-1)
            sign = -np.sign(np.take_along_axis(d, axis[..., None], axis=-1))[..., 0]
            normal_local = np.zeros(dirs.shape)
            np.put_along_axis(normal_local, axis[..., None], sign[..., None], axis=-1)

    hit_any = np.isfinite(lam)[..., None]
    local_hits = o + np.where(hit_any, lam[..., None], 0.0) * d
    normals = np.where(hit_any, np.nan_to_num(normal_local), 0.0) @ rot.T
    return lam, normals, local_hits


def room_primitives() -> List[PrimitiveSpec]:
    return [
        PrimitiveSpec(kind=PrimitiveKind.PLANE, center=[0.0, 0.0, ROOM_BACK_Z], size=[0.0],
                      normal=[0.0, 0.0, -1.0], texture="checker",
                      color=[0.85, 0.82, 0.75], color_alt=[0.35, 0.4, 0.5]),
        PrimitiveSpec(kind=PrimitiveKind.PLANE, center=[0.0, ROOM_FLOOR_Y, 0.0], size=[0.0],
                      normal=[0.0, -1.0, 0.0], texture="noise",
                      color=[0.45, 0.3, 0.2], color_alt=[0.75, 0.6, 0.4]),
    ]


def random_primitives(rng: np.random.Generator, count: int, dynamic: bool) -> List[PrimitiveSpec]:
    textures = ("checker", "gradient", "noise")
    kinds = (PrimitiveKind.SPHERE, PrimitiveKind.BOX, PrimitiveKind.PLANE)
    specs = []
    for i in range(count):
        kind = kinds[int(rng.integers(len(kinds)))]
        center = [float(rng.uniform(-1.5, 1.5)), float(rng.uniform(-0.8, 0.8)),
                  float(rng.uniform(3.5, 6.5))]
        if kind == PrimitiveKind.SPHERE:
            size, normal = [float(rng.uniform(0.3, 0.8))], None
        elif kind == PrimitiveKind.BOX:
            size, normal = [float(v) for v in rng.uniform(0.2, 0.6, size=3)], None
        else:
            normal_vec = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), -1.0])
            size, normal = [float(rng.uniform(0.4, 0.9))], (normal_vec / np.linalg.norm(normal_vec)).tolist()
        moving = dynamic and i % 2 == 0
        specs.append(PrimitiveSpec(
            kind=kind, center=center, size=size, normal=normal,
            texture=textures[int(rng.integers(len(textures)))],
            color=rng.uniform(0.1, 0.9, size=3).tolist(),
            color_alt=rng.uniform(0.1, 0.9, size=3).tolist(),
            dynamic=moving,
            velocity=(rng.uniform(-0.08, 0.08, size=3) if moving else np.zeros(3)).tolist(),
            spin_deg=float(rng.uniform(-6.0, 6.0)) if moving else 0.0,
        ))
    return specs


# ----------------------------------------------------------------------
# Trajectories
# ----------------------------------------------------------------------
def make_trajectory(rng: np.random.Generator, scene: SceneConfig, focal) -> List[CameraPose]:
    """Camera->world poses; the first pose is the identity."""
    n = scene.n_frames
    max_step = scene.max_step_rotation_deg
    poses = [CameraPose.identity(focal)]

    if scene.trajectory == Trajectory.ORBIT:
        pivot = np.array([0.0, 0.0, 4.5])
        step = min(max_step, ORBIT_MAX_SWEEP_DEG / (n - 1)) * (1 if rng.random() < 0.5 else -1)
        for t in range(1, n):
            rot = _yaw_matrix(step * t)
            center = pivot + rot @ (np.zeros(3) - pivot)
            poses.append(CameraPose(axis_angle_to_quat([0, 1, 0], np.radians(step * t)), center, focal))
    elif scene.trajectory == Trajectory.DOLLY:
        direction = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1), 1.0])
        direction = direction / np.linalg.norm(direction)
        travel = DOLLY_MAX_TRAVEL / (n - 1)
        for t in range(1, n):
            poses.append(CameraPose(np.array([1.0, 0.0, 0.0, 0.0]), direction * travel * t, focal))
    elif scene.trajectory == Trajectory.RANDOM_WALK:
        yaw, pitch = 0.0, 0.0
        center = np.zeros(3)
        limit = max_step / np.sqrt(2.0)
        for _ in range(1, n):
            yaw = float(np.clip(yaw + rng.uniform(-limit, limit), -RANDOM_WALK_YAW_LIMIT, RANDOM_WALK_YAW_LIMIT))
            pitch = float(np.clip(pitch + rng.uniform(-limit, limit), -RANDOM_WALK_PITCH_LIMIT, RANDOM_WALK_PITCH_LIMIT))
            center = center + rng.uniform(-0.12, 0.12, size=3)
            q = quat_multiply(axis_angle_to_quat([0, 1, 0], np.radians(yaw)),
                              axis_angle_to_quat([1, 0, 0], np.radians(pitch)))
            poses.append(CameraPose(q, center.copy(), focal))
    else:
        raise ConfigError(f"Unknown trajectory {scene.trajectory}")
    return poses


# ----------------------------------------------------------------------
# Rendering
# ----------------------------------------------------------------------
def render_frame(primitives: List[PrimitiveSpec], pose: CameraPose, t: int,
                 resolution: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Ray-cast one view. Returns (rgb float64 H x W x 3, z-depth H x W, inf on miss)."""
    height, width = resolution
    rays_cam = pixel_rays(height, width, pose.f)
    rot = quat_to_matrix(pose.q)
    rays_world = rays_cam @ rot.T

    depth = np.full((height, width), np.inf)
    rgb = np.zeros((height, width, 3))
    for spec in primitives:
        lam, normals, local_hits = intersect(spec, t, pose.tau, rays_world)
        closer = lam < depth
        if not closer.any():
            continue
        shade = 0.35 + 0.65 * np.abs(normals @ _LIGHT)
        color = texture(spec, local_hits) * shade[..., None]
        depth = np.where(closer, lam, depth)
        rgb = np.where(closer[..., None], color, rgb)
    depth = np.where(depth < MAX_DEPTH, depth, np.inf)
    return np.clip(rgb, 0.0, 1.0), depth


def generate_scene(seed: int, scene: Optional[SceneConfig] = None,
                   patch_size: int = config.PATCH_SIZE) -> SceneSequence:
    """
    Generate one deterministic scene sequence.

    Args:
        seed: RNG seed; same seed and config give identical frames
        scene: generation parameters
        patch_size: resolution must be a multiple of it

    Raises:
        ConfigError: resolution not divisible by patch_size
        GenerationError: nothing to render, or a frame without valid pixels
    """
    scene = scene or SceneConfig()
    height, width = scene.resolution
    if height % patch_size or width % patch_size:
        raise ConfigError(f"Resolution {height}x{width} is not a multiple of patch size {patch_size}")

    rng = np.random.default_rng(seed)
    primitives = random_primitives(rng, scene.n_primitives, scene.dynamic)
    if scene.dynamic and primitives and not any(p.dynamic for p in primitives):
        primitives[0].dynamic = True
    renderable = (room_primitives() if scene.with_room else []) + primitives
    if not renderable:
        raise GenerationError("Empty scene: no primitives and no room")

    focal = np.array([width * scene.focal_scale, width * scene.focal_scale])
    poses = make_trajectory(rng, scene, focal)

    frames = []
    for t, pose in enumerate(poses):
        color, depth = render_frame(renderable, pose, t, (height, width))
        valid = np.isfinite(depth)
        if not valid.any():
            raise GenerationError(f"Frame {t + 1} of scene seed={seed} has no valid pixels")
        local = unproject(np.where(valid, depth, 0.0), pose)
        world = local if t == 0 else local_to_global(local, pose, poses[0])
        local_pts = local.points.astype(np.float32)
        frames.append(Frame(
            rgb=decode_rgb(encode_rgb(color)),
            depth=np.where(valid, depth, 0.0).astype(np.float32),
            valid_mask=valid,
            pose=pose,
            t=t + 1,
            ptmap_local=local_pts,
            ptmap_global=local_pts.copy() if t == 0 else world.points.astype(np.float32),
        ))
        logger.debug(f"Rendered frame {t + 1}/{scene.n_frames}: {valid.mean():.1%} valid")

    logger.info(f"Generated scene seed={seed}: {scene.n_frames} frames at {height}x{width}, "
                f"{len(primitives)} primitives, trajectory={scene.trajectory.value}")
    return SceneSequence(frames, scene, seed, primitives)


def plane_scene(depth: float, resolution: Tuple[int, int] = config.DEFAULT_RESOLUTION,
                n_frames: int = 2, translation=(0.0, 0.0, 0.0)) -> SceneSequence:
    """
    Fronto-parallel textured wall at z = depth seen from identity-oriented cameras.

    Frame t sits at (t - 1) * translation; used as an analytic fixture.
    """
    height, width = resolution
    focal = np.array([float(width), float(width)])
    wall = PrimitiveSpec(kind=PrimitiveKind.PLANE, center=[0.0, 0.0, depth], size=[0.0],
                         normal=[0.0, 0.0, -1.0], texture="checker",
                         color=[0.9, 0.9, 0.9], color_alt=[0.1, 0.2, 0.3])
    scene = SceneConfig(n_frames=n_frames, resolution=resolution, n_primitives=0,
                        trajectory=Trajectory.DOLLY, with_room=False)
    frames = []
    poses = [CameraPose(np.array([1.0, 0, 0, 0]), np.asarray(translation) * t, focal)
             for t in range(n_frames)]
    for t, pose in enumerate(poses):
        color, z = render_frame([wall], pose, t, resolution)
        valid = np.isfinite(z)
        local = unproject(np.where(valid, z, 0.0), pose)
        world = local if t == 0 else local_to_global(local, pose, poses[0])
        local_pts = local.points.astype(np.float32)
        frames.append(Frame(decode_rgb(encode_rgb(color)), np.where(valid, z, 0.0).astype(np.float32),
                            valid, pose, t + 1, local_pts,
                            local_pts.copy() if t == 0 else world.points.astype(np.float32)))
    return SceneSequence(frames, scene, seed=0, primitives=[wall])
