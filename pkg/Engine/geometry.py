"""
geometry.py
-----------
Camera and pose mathematics.

Conventions: OpenCV camera axes (+x right, +y down, +z forward), poses
stored camera->world, quaternions in (w, x, y, z) order canonicalized to
w >= 0, principal point at the image centre unless given.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from exceptions import ContractError, DegenerateError, DimensionError
from models import FrameOfReference, PoseRecord

logger = logging.getLogger(__name__)

QUAT_EPS = 1e-12


# ----------------------------------------------------------------------
# Quaternions
# ----------------------------------------------------------------------
def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm < QUAT_EPS:
        raise ContractError(f"Cannot normalize a zero quaternion {q.tolist()}")
    return q / norm


def quat_canonicalize(q) -> np.ndarray:
    """Unit quaternion with non-negative real part."""
    q = quat_normalize(q)
    return -q if q[0] < 0 else q


def quat_multiply(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_to_matrix(q) -> np.ndarray:
    """
    Rotation matrix of a quaternion (normalized first).

    Raises:
        ContractError: on a zero quaternion
    """
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Canonical quaternion of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    trace = np.trace(R)
    if trace > 0:
        s = 2.0 * np.sqrt(trace + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_canonicalize(q)


def axis_angle_to_quat(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle_rad
    return quat_canonicalize(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def quat_geodesic_deg(q1, q2) -> float:
    """Rotation angle between two orientations in degrees, in [0, 180]."""
    dot = abs(float(np.dot(quat_normalize(q1), quat_normalize(q2))))
    return float(np.degrees(2.0 * np.arccos(np.clip(dot, 0.0, 1.0))))


def rotation_angle_deg(R) -> float:
    cos = (np.trace(R) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


# ----------------------------------------------------------------------
# Poses and transforms
# ----------------------------------------------------------------------
@dataclass
class CameraPose:
    """Camera->world rotation `q`, translation `tau` and focal lengths `f` (pixels)."""

    q: np.ndarray
    tau: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        self.q = quat_canonicalize(self.q)
        self.tau = np.asarray(self.tau, dtype=np.float64).reshape(3)
        self.f = np.asarray(self.f, dtype=np.float64).reshape(2)
        if np.any(self.f <= 0):
            raise ContractError(f"Focal lengths must be positive, got {self.f.tolist()}")

    @classmethod
    def identity(cls, focal: Sequence[float]) -> "CameraPose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), np.asarray(focal, dtype=np.float64))

    @classmethod
    def from_matrix(cls, T: np.ndarray, focal) -> "CameraPose":
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3], focal)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    @property
    def center(self) -> np.ndarray:
        return self.tau

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.tau
        return T

    def to_record(self) -> PoseRecord:
        return PoseRecord(q=self.q.tolist(), tau=self.tau.tolist(), f=self.f.tolist())

    @classmethod
    def from_record(cls, record: PoseRecord) -> "CameraPose":
        return cls(np.array(record.q), np.array(record.tau), np.array(record.f))


def relative_transform(pose_a: CameraPose, pose_b: CameraPose) -> np.ndarray:
    """T_a^-1 T_b: motion of camera b expressed in camera a."""
    return np.linalg.inv(pose_a.matrix()) @ pose_b.matrix()


@dataclass
class Sim3:
    """Similarity transform x -> s R x + t."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.scale <= 0:
            raise ContractError(f"Sim3 scale must be positive, got {self.scale}")
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls) -> "Sim3":
        return cls()

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation

    def compose(self, other: "Sim3") -> "Sim3":
        """self after other."""
        return Sim3(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Sim3":
        inv_rot = self.rotation.T
        return Sim3(1.0 / self.scale, inv_rot, -(inv_rot @ self.translation) / self.scale)

    def apply_to_pose(self, pose: CameraPose) -> CameraPose:
        rot = self.rotation @ pose.rotation
        return CameraPose(matrix_to_quat(rot), self.apply(pose.tau[None])[0], pose.f)


# ----------------------------------------------------------------------
# Pinhole
# ----------------------------------------------------------------------
@dataclass
class Pointmap:
    """H x W x 3 grid of points in a local or global frame."""

    points: np.ndarray
    frame: FrameOfReference = FrameOfReference.LOCAL
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.points.ndim != 3 or self.points.shape[-1] != 3:
            raise DimensionError(f"Pointmap must be H x W x 3, got {self.points.shape}")
        if self.valid is None:
            self.valid = np.isfinite(self.points).all(axis=-1)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.points.shape[:2]


def default_principal_point(height: int, width: int) -> Tuple[float, float]:
    return (width - 1) / 2.0, (height - 1) / 2.0


def pixel_rays(height: int, width: int, focal, principal_point=None) -> np.ndarray:
    """Camera-space ray directions with unit z for every pixel, H x W x 3."""
    fx, fy = focal
    cx, cy = principal_point or default_principal_point(height, width)
    v, u = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64),
                       indexing="ij")
    return np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)], axis=-1)


def unproject(depth: np.ndarray, pose: CameraPose, principal_point=None) -> Pointmap:
    """
    Lift a depth map into the camera frame.

    Args:
        depth: H x W z-depth; pixels with depth <= 0 or non-finite are invalid
        pose: supplies the focal lengths
        principal_point: (cx, cy), default image centre

    Returns:
        local Pointmap; invalid pixels hold zeros
    """
    if np.any(pose.f <= 0):
        raise ContractError(f"Focal lengths must be positive, got {pose.f.tolist()}")
    height, width = depth.shape
    valid = np.isfinite(depth) & (depth > 0)
    safe = np.where(valid, depth, 0.0)
    points = pixel_rays(height, width, pose.f, principal_point) * safe[..., None]
    return Pointmap(points, FrameOfReference.LOCAL, valid)


def unproject_pixel(u: float, v: float, depth: float, focal, principal_point) -> np.ndarray:
    fx, fy = focal
    cx, cy = principal_point
    return np.array([depth * (u - cx) / fx, depth * (v - cy) / fy, depth])


def project(points: np.ndarray, focal, principal_point) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Camera-frame points (..., 3) -> pixel u, pixel v, depth."""
    fx, fy = focal
    cx, cy = principal_point
    z = points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * points[..., 0] / z + cx
        v = fy * points[..., 1] / z + cy
    return u, v, z


def transform_points(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ T[:3, :3].T + T[:3, 3]


def local_to_global(pm: Pointmap, pose_t: CameraPose, pose_1: CameraPose) -> Pointmap:
    """Express a local pointmap of frame t in the first camera's frame."""
    if pose_t is pose_1:
        return Pointmap(pm.points.copy(), FrameOfReference.GLOBAL, pm.valid.copy())
    T = relative_transform(pose_1, pose_t)
    points = np.where(pm.valid[..., None], transform_points(T, pm.points), 0.0)
    return Pointmap(points, FrameOfReference.GLOBAL, pm.valid.copy())


def global_to_local(pm: Pointmap, pose_t: CameraPose, pose_1: CameraPose) -> Pointmap:
    T = relative_transform(pose_t, pose_1)
    points = np.where(pm.valid[..., None], transform_points(T, pm.points), 0.0)
    return Pointmap(points, FrameOfReference.LOCAL, pm.valid.copy())


# ----------------------------------------------------------------------
# Alignment
# ----------------------------------------------------------------------
def umeyama_sim3(src: np.ndarray, dst: np.ndarray) -> Sim3:
    """
    Closed-form similarity minimizing sum ||dst - (s R src + t)||^2.

    Args:
        src: (n, 3) source points
        dst: (n, 3) corresponding target points

    Returns:
        Sim3 mapping src onto dst

    Raises:
        DimensionError: mismatched point sets
        DegenerateError: fewer than 3 points or a rank < 2 source configuration
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise DimensionError(f"Point sets must both be (n, 3), got {src.shape} and {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise DegenerateError(f"Sim3 alignment needs at least 3 points, got {n}")

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    src_c = src - mu_src
    dst_c = dst - mu_dst

    spread = np.linalg.svd(src_c, compute_uv=False)
    if spread[0] <= 0 or spread[1] <= 1e-9 * max(1.0, spread[0]):
        raise DegenerateError(f"Source points are rank-deficient (singular values {spread.tolist()})")

    sigma2 = (src_c ** 2).sum() / n
    cov = dst_c.T @ src_c / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0

    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / sigma2)
    t = mu_dst - s * R @ mu_src
    logger.debug(f"Umeyama alignment over {n} points: scale={s:.6f}")
    return Sim3(s, R, t)
