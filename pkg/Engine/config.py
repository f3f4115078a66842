"""
config.py
---------
Configuration module for StreamPoint.

Centralizes paths, environment overrides and the toy-scale defaults shared by
the generator, the model, the trainer and the CLI.
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Find project root
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

DATA_DIR = os.getenv("STREAMPOINT_DATA_DIR", os.path.join(BASE_DIR, "data"))
RUNS_DIR = os.getenv("STREAMPOINT_RUNS_DIR", os.path.join(BASE_DIR, "runs"))
LOG_LEVEL = os.getenv("STREAMPOINT_LOG_LEVEL", "INFO").upper()


def _thread_cap() -> int:
    raw = os.getenv("STREAMPOINT_THREADS")
    if not raw:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# Worker parallelism cap (scene generation pool)
MAX_WORKERS = _thread_cap()

# Model defaults (toy scale)
PATCH_SIZE = 8
MODEL_WIDTH = 64
ENCODER_DEPTH = 4
DECODER_DEPTH = 4
NUM_HEADS = 4
MLP_RATIO = 4
HEAD_HIDDEN = 16
ROPE_BASE = 100.0
WINDOW_SIZE = 5

# Loss defaults
CONF_ALPHA = 0.2
POSE_WEIGHT = 1.0

# Scene defaults
DEFAULT_RESOLUTION = (32, 32)
DEFAULT_FRAMES = 6
DEFAULT_PRIMITIVES = 4
MAX_STEP_ROTATION_DEG = 15.0

# Training defaults
DEFAULT_LR = 1e-3
WARMUP_STEPS = 100
DEFAULT_FRAME_RANGE = (4, 10)

# On-disk format versions
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"S3R1"
CHECKPOINT_VERSION = 1
