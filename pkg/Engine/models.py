"""
models.py
---------
Pydantic models for StreamPoint.

Typed records for everything that is serialized (manifests, checkpoint
headers, metric reports) or crosses a module boundary as plain data
(model / scene / training configuration).
"""

from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

import config
from exceptions import ConfigError


class PolicyKind(str, Enum):
    FULL_CAUSAL = "causal"
    WINDOW = "window"
    FULL_ATTENTION = "fa"


class Trajectory(str, Enum):
    ORBIT = "orbit"
    DOLLY = "dolly"
    RANDOM_WALK = "random-walk"


class PrimitiveKind(str, Enum):
    SPHERE = "sphere"
    PLANE = "plane"
    BOX = "box"


class FrameOfReference(str, Enum):
    LOCAL = "local"
    GLOBAL = "global"


class DepthAlignment(str, Enum):
    PER_FRAME_MEDIAN = "per-frame-median"
    PER_SEQUENCE_SCALE = "per-sequence-scale"
    PER_SEQUENCE_SCALE_SHIFT = "per-sequence-scale-shift"
    METRIC_NONE = "metric-none"


class ScaleMode(str, Enum):
    SEQUENCE = "sequence"
    FRAME = "frame"


# ----------------------------------------------------------------------
# Configuration models
# ----------------------------------------------------------------------
class CachePolicy(BaseModel):
    """Which prior frames a frame's cross-attention may read."""

    model_config = ConfigDict(frozen=True)

    kind: PolicyKind = PolicyKind.FULL_CAUSAL
    k: Optional[int] = None

    @classmethod
    def full_causal(cls) -> "CachePolicy":
        return cls(kind=PolicyKind.FULL_CAUSAL)

    @classmethod
    def window(cls, k: int) -> "CachePolicy":
        if k < 1:
            raise ConfigError(f"Window size must be >= 1, got {k}")
        return cls(kind=PolicyKind.WINDOW, k=k)

    @classmethod
    def full_attention(cls) -> "CachePolicy":
        return cls(kind=PolicyKind.FULL_ATTENTION)

    @classmethod
    def parse(cls, text: str) -> "CachePolicy":
        """
        Parse the command-line form: `causal`, `window:K` or `fa`.

        Raises:
            ConfigError: for anything else
        """
        text = text.strip().lower()
        if text == "causal":
            return cls.full_causal()
        if text == "fa":
            return cls.full_attention()
        if text.startswith("window:"):
            try:
                k = int(text.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"Bad window size in policy '{text}'")
            return cls.window(k)
        raise ConfigError(f"Unknown cache policy '{text}' (expected causal | window:K | fa)")

    def __str__(self) -> str:
        return f"window:{self.k}" if self.kind == PolicyKind.WINDOW else self.kind.value


class ModelConfig(BaseModel):
    """Architecture of the streaming reconstructor."""

    patch_size: int = Field(default=config.PATCH_SIZE, ge=1)
    width: int = Field(default=config.MODEL_WIDTH, ge=1)
    encoder_depth: int = Field(default=config.ENCODER_DEPTH, ge=1)
    decoder_depth: int = Field(default=config.DECODER_DEPTH, ge=1)
    num_heads: int = Field(default=config.NUM_HEADS, ge=1)
    mlp_ratio: int = Field(default=config.MLP_RATIO, ge=1)
    head_hidden: int = Field(default=config.HEAD_HIDDEN, ge=1)
    rope_base: float = Field(default=config.ROPE_BASE, gt=0)
    image_size: Tuple[int, int] = config.DEFAULT_RESOLUTION
    window_size: int = Field(default=config.WINDOW_SIZE, ge=1)
    conf_alpha: float = Field(default=config.CONF_ALPHA, ge=0)
    mutual_first_pair: bool = False
    seed: int = 0

    @property
    def head_dim(self) -> int:
        return self.width // self.num_heads

    @property
    def grid(self) -> Tuple[int, int]:
        return self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size

    @property
    def num_tokens(self) -> int:
        rows, cols = self.grid
        return rows * cols

    @property
    def tap_levels(self) -> Tuple[int, int]:
        """Decoder pyramid levels read by the pointmap heads."""
        return self.decoder_depth // 2, self.decoder_depth

    def check(self) -> "ModelConfig":
        """
        Validate cross-field constraints.

        Raises:
            ConfigError: width not divisible by heads, odd head dimension,
                         or image size not divisible by the patch size
        """
        if self.width % self.num_heads != 0:
            raise ConfigError(f"Width {self.width} is not divisible by {self.num_heads} heads")
        if self.head_dim % 2 != 0:
            raise ConfigError(f"Head dimension must be even for RoPE, got {self.head_dim}")
        height, width = self.image_size
        if height % self.patch_size or width % self.patch_size:
            raise ConfigError(
                f"Image size {height}x{width} is not divisible by patch size {self.patch_size}"
            )
        return self


class SceneConfig(BaseModel):
    """Parameters of one procedurally generated scene."""

    n_frames: int = Field(default=config.DEFAULT_FRAMES, ge=2)
    resolution: Tuple[int, int] = config.DEFAULT_RESOLUTION
    n_primitives: int = Field(default=config.DEFAULT_PRIMITIVES, ge=0)
    trajectory: Trajectory = Trajectory.ORBIT
    dynamic: bool = False
    metric_scale: bool = False
    focal_scale: float = Field(default=1.0, gt=0)
    max_step_rotation_deg: float = Field(default=config.MAX_STEP_ROTATION_DEG, gt=0, le=15.0)
    with_room: bool = True


class TrainConfig(BaseModel):
    """Training run parameters."""

    steps: int = Field(default=5000, ge=0)
    lr: float = Field(default=config.DEFAULT_LR, ge=0)
    batch: int = Field(default=1, ge=1)
    frame_range: Tuple[int, int] = config.DEFAULT_FRAME_RANGE
    seed: int = 0
    policy: CachePolicy = CachePolicy()
    conf_alpha: float = Field(default=config.CONF_ALPHA, ge=0)
    pose_weight: float = Field(default=config.POSE_WEIGHT, ge=0)
    checkpoint_every: int = Field(default=500, ge=0)
    log_every: int = Field(default=50, ge=1)
    log_path: Optional[str] = None
    warmup_steps: int = Field(default=config.WARMUP_STEPS, ge=0)
    weight_decay: float = Field(default=0.01, ge=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0)
    scale_mode: ScaleMode = ScaleMode.SEQUENCE
    color_jitter: float = Field(default=0.1, ge=0)

    def check(self) -> "TrainConfig":
        low, high = self.frame_range
        if low < 2 or high < low:
            raise ConfigError(f"Frame range must satisfy 2 <= min <= max, got {self.frame_range}")
        return self


# ----------------------------------------------------------------------
# On-disk records
# ----------------------------------------------------------------------
class FrameFiles(BaseModel):
    rgb: str
    depth: str
    ptmap_local: str
    ptmap_global: str
    pose: str
    mask: str


class PrimitiveSpec(BaseModel):
    kind: PrimitiveKind
    center: List[float]
    size: List[float]
    normal: Optional[List[float]] = None
    texture: str = "checker"
    color: List[float]
    color_alt: List[float]
    dynamic: bool = False
    velocity: List[float] = [0.0, 0.0, 0.0]
    spin_deg: float = 0.0


class SceneManifest(BaseModel):
    """manifest.json of a dataset directory."""

    format: str = "streampoint-dataset"
    version: int = config.DATASET_VERSION
    resolution: Tuple[int, int]
    n_frames: int
    metric_scale: bool
    seed: int
    scene: SceneConfig
    frames: List[FrameFiles]
    checksums: Dict[str, str] = {}
    primitives: List[PrimitiveSpec] = []


class PoseRecord(BaseModel):
    """pose_%04d.json / pred_pose_%04d.json payload."""

    q: List[float]
    tau: List[float]
    f: List[float]


# ----------------------------------------------------------------------
# Metric bundles
# ----------------------------------------------------------------------
class DepthMetrics(BaseModel):
    abs_rel: float = Field(..., ge=0)
    delta_125: float = Field(..., ge=0, le=1)
    sq_rel: float = Field(default=0.0, ge=0)
    rmse: float = Field(default=0.0, ge=0)
    delta_125_2: float = Field(default=0.0, ge=0, le=1)
    delta_125_3: float = Field(default=0.0, ge=0, le=1)
    alignment: DepthAlignment
    scales: List[float] = []
    shift: Optional[float] = None
    n_frames: int = 0


class PoseMetrics(BaseModel):
    ate: float = Field(..., ge=0)
    rpe_trans: float = Field(..., ge=0)
    rpe_rot: float = Field(..., ge=0)
    align_scale: float = 1.0
    n_poses: int = 0


class ReconMetrics(BaseModel):
    acc_mean: float = Field(..., ge=0)
    acc_median: float = Field(..., ge=0)
    comp_mean: float = Field(..., ge=0)
    comp_median: float = Field(..., ge=0)
    # None when no normals were supplied
    nc_mean: Optional[float] = Field(default=None, ge=-1, le=1)
    nc_median: Optional[float] = Field(default=None, ge=-1, le=1)
    n_pred: int = 0
    n_gt: int = 0


class MetricsReport(BaseModel):
    """metrics.json: the three bundles plus alignment provenance."""

    scene: str = ""
    depth: Optional[DepthMetrics] = None
    pose: Optional[PoseMetrics] = None
    recon: Optional[ReconMetrics] = None
    notes: List[str] = []


class RunManifest(BaseModel):
    """run_manifest.json written by every CLI command."""

    command: str
    argv: List[str] = []
    config: Dict = {}
    seed: int = 0
    code_hash: str = ""
    started_at: str = ""
    timings: Dict[str, float] = {}


class BenchRecord(BaseModel):
    policy: str
    n_frames: int
    frame: int
    wall_ms: float
    attended_tokens: int
    resident_tokens: int
