"""
data_loader.py
--------------
On-disk formats for scenes and predictions.

Dataset directory:
- manifest.json (format tag, version, resolution, n_frames, metric_scale,
  seed, scene config, per-frame file names, sha256 of every payload file)
- rgb_%04d.ppm (binary P6), depth_%04d.f32, ptmap_local_%04d.f32,
  ptmap_global_%04d.f32 (little-endian f32, row-major, channels last),
  pose_%04d.json, mask_%04d.u8

Prediction directory (one block per frame, written as soon as produced):
- pred_%04d.f32 = [X_local | C_local | X_global | C_global], pred_pose_%04d.json
"""

import hashlib
import json
import logging
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

import config
from exceptions import ChecksumError, ConsistencyError, FormatError
from geometry import CameraPose
from models import FrameFiles, PoseRecord, PrimitiveSpec, SceneManifest
from scenegen import Frame, SceneSequence, decode_rgb, encode_rgb

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
DATASET_FORMAT = "streampoint-dataset"
PPM_MAGIC = b"P6"
LE_F32 = np.dtype("<f4")


def frame_files(index: int) -> FrameFiles:
    return FrameFiles(
        rgb=f"rgb_{index:04d}.ppm",
        depth=f"depth_{index:04d}.f32",
        ptmap_local=f"ptmap_local_{index:04d}.f32",
        ptmap_global=f"ptmap_global_{index:04d}.f32",
        pose=f"pose_{index:04d}.json",
        mask=f"mask_{index:04d}.u8",
    )


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ----------------------------------------------------------------------
# Primitive encoders
# ----------------------------------------------------------------------
def write_ppm(path: str, rgb: np.ndarray) -> None:
    height, width, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(PPM_MAGIC + f"\n{width} {height}\n255\n".encode("ascii"))
        f.write(encode_rgb(rgb).tobytes())


def read_ppm(path: str) -> np.ndarray:
    """Binary P6 reader; returns float32 RGB in [0, 1]."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(PPM_MAGIC):
        raise FormatError(f"{path}: bad PPM magic {raw[:2]!r}")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header")
        fields.append(raw[start:pos])
    pos += 1
    try:
        width, height, maxval = (int(v) for v in fields)
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header {fields}")
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM is supported, got maxval {maxval}")
    payload = raw[pos:]
    if len(payload) != width * height * 3:
        raise FormatError(f"{path}: expected {width * height * 3} pixel bytes, got {len(payload)}")
    return decode_rgb(np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3))


def write_f32(path: str, array: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(array, dtype=LE_F32).tobytes())


def read_f32(path: str, shape: Tuple[int, ...]) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for shape {shape}, got {len(raw)}")
    return np.frombuffer(raw, dtype=LE_F32).reshape(shape).astype(np.float32)


def write_pose(path: str, pose: CameraPose) -> None:
    with open(path, "w") as f:
        f.write(pose.to_record().model_dump_json(indent=2))


def read_pose(path: str) -> CameraPose:
    try:
        with open(path) as f:
            record = PoseRecord.model_validate_json(f.read())
    except ValidationError as e:
        raise FormatError(f"{path}: malformed pose record ({e.error_count()} errors)")
    return CameraPose.from_record(record)


# ----------------------------------------------------------------------
# Dataset directories
# ----------------------------------------------------------------------
def write_dataset(seq: SceneSequence, directory: str) -> SceneManifest:
    """
    Write a scene sequence in the dataset directory format.

    Returns:
        the manifest that was written
    """
    os.makedirs(directory, exist_ok=True)
    height, width = seq.frames[0].resolution
    files, checksums = [], {}

    for frame in seq.frames:
        names = frame_files(frame.t)
        write_ppm(os.path.join(directory, names.rgb), frame.rgb)
        write_f32(os.path.join(directory, names.depth), frame.depth)
        write_f32(os.path.join(directory, names.ptmap_local), frame.ptmap_local)
        write_f32(os.path.join(directory, names.ptmap_global), frame.ptmap_global)
        write_pose(os.path.join(directory, names.pose), frame.pose)
        with open(os.path.join(directory, names.mask), "wb") as f:
            f.write(frame.valid_mask.astype(np.uint8).tobytes())
        for name in names.model_dump().values():
            checksums[name] = sha256_file(os.path.join(directory, name))
        files.append(names)

    manifest = SceneManifest(
        format=DATASET_FORMAT,
        resolution=(height, width),
        n_frames=len(seq.frames),
        metric_scale=seq.metric_scale,
        seed=seq.seed,
        scene=seq.config,
        frames=files,
        checksums=checksums,
        primitives=seq.primitives,
    )
    with open(os.path.join(directory, MANIFEST_NAME), "w") as f:
        f.write(manifest.model_dump_json(indent=2))
    logger.info(f"Wrote {len(files)} frames to {directory}")
    return manifest


def read_manifest(directory: str) -> SceneManifest:
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        logger.error(f"Manifest not found: {path}")
        raise FormatError(f"Manifest not found: {path}")
    try:
        with open(path) as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})")
    if payload.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path}: bad format tag {payload.get('format')!r}")
    if payload.get("version") != config.DATASET_VERSION:
        raise FormatError(
            f"{path}: dataset version {payload.get('version')} != supported {config.DATASET_VERSION}"
        )
    try:
        return SceneManifest.model_validate(payload)
    except ValidationError as e:
        raise FormatError(f"{path}: malformed manifest ({e.error_count()} errors)")


def _check_consistency(directory: str, manifest: SceneManifest) -> None:
    if manifest.n_frames != len(manifest.frames):
        raise ConsistencyError(
            f"{directory}: manifest says {manifest.n_frames} frames but lists {len(manifest.frames)}"
        )
    missing = [
        name for names in manifest.frames for name in names.model_dump().values()
        if not os.path.exists(os.path.join(directory, name))
    ]
    if missing:
        raise ConsistencyError(f"{directory}: {len(missing)} listed files are missing, e.g. {missing[0]}")
    present = {n for n in os.listdir(directory) if n.startswith("rgb_") and n.endswith(".ppm")}
    if len(present) != manifest.n_frames:
        raise ConsistencyError(
            f"{directory}: manifest says {manifest.n_frames} frames but {len(present)} rgb files exist"
        )


def _check_checksums(directory: str, manifest: SceneManifest) -> None:
    for name, expected in manifest.checksums.items():
        actual = sha256_file(os.path.join(directory, name))
        if actual != expected:
            raise ChecksumError(f"{directory}/{name}: sha256 {actual[:12]}... != manifest {expected[:12]}...")


def read_dataset(directory: str, verify: bool = True) -> SceneSequence:
    """
    Read a dataset directory back into a SceneSequence.

    Raises:
        FormatError: missing/malformed manifest, version mismatch, truncated payload
        ConsistencyError: frame count does not match the files present
        ChecksumError: a payload file does not match its recorded sha256
    """
    manifest = read_manifest(directory)
    _check_consistency(directory, manifest)
    if verify:
        _check_checksums(directory, manifest)

    height, width = manifest.resolution
    frames = []
    for t, names in enumerate(manifest.frames, start=1):
        rgb = read_ppm(os.path.join(directory, names.rgb))
        if rgb.shape[:2] != (height, width):
            raise ConsistencyError(f"{names.rgb}: resolution {rgb.shape[:2]} != manifest {(height, width)}")
        mask_path = os.path.join(directory, names.mask)
        with open(mask_path, "rb") as f:
            mask_raw = f.read()
        if len(mask_raw) != height * width:
            raise FormatError(f"{mask_path}: expected {height * width} bytes, got {len(mask_raw)}")
        frames.append(Frame(
            rgb=rgb,
            depth=read_f32(os.path.join(directory, names.depth), (height, width)),
            valid_mask=np.frombuffer(mask_raw, dtype=np.uint8).reshape(height, width).astype(bool),
            pose=read_pose(os.path.join(directory, names.pose)),
            t=t,
            ptmap_local=read_f32(os.path.join(directory, names.ptmap_local), (height, width, 3)),
            ptmap_global=read_f32(os.path.join(directory, names.ptmap_global), (height, width, 3)),
        ))
    logger.debug(f"Read {len(frames)} frames from {directory}")
    return SceneSequence(frames, manifest.scene, manifest.seed,
                         [PrimitiveSpec.model_validate(p) for p in manifest.primitives])


def list_scenes(root: str) -> List[str]:
    """Scene directories under `root` (or `root` itself if it is one)."""
    if os.path.exists(os.path.join(root, MANIFEST_NAME)):
        return [root]
    if not os.path.isdir(root):
        return []
    return sorted(
        os.path.join(root, name) for name in os.listdir(root)
        if os.path.exists(os.path.join(root, name, MANIFEST_NAME))
    )


def verify_dataset(directory: str) -> bool:
    """Check manifest, file set and checksums; log the outcome."""
    try:
        manifest = read_manifest(directory)
        _check_consistency(directory, manifest)
        _check_checksums(directory, manifest)
    except FormatError as e:
        logger.warning(f"Dataset check failed: {e}")
        return False
    logger.info(f"Dataset OK: {directory} ({manifest.n_frames} frames, {len(manifest.checksums)} files)")
    return True


# ----------------------------------------------------------------------
# Prediction dumps
# ----------------------------------------------------------------------
def prediction_files(index: int) -> Tuple[str, str]:
    return f"pred_{index:04d}.f32", f"pred_pose_{index:04d}.json"


def write_prediction(directory: str, index: int, x_local: np.ndarray, c_local: np.ndarray,
                     x_global: np.ndarray, c_global: np.ndarray, pose: CameraPose) -> None:
    """Write one frame's prediction block and pose; both files are closed on return."""
    os.makedirs(directory, exist_ok=True)
    block_name, pose_name = prediction_files(index)
    block = np.concatenate([
        np.asarray(x_local).reshape(-1), np.asarray(c_local).reshape(-1),
        np.asarray(x_global).reshape(-1), np.asarray(c_global).reshape(-1),
    ])
    write_f32(os.path.join(directory, block_name), block)
    write_pose(os.path.join(directory, pose_name), pose)


def read_prediction(directory: str, index: int,
                    resolution: Tuple[int, int]) -> Dict[str, object]:
    """
    Read one frame's prediction dump.

    Returns:
        dict with x_local (H,W,3), c_local (H,W), x_global, c_global, pose
    """
    height, width = resolution
    block_name, pose_name = prediction_files(index)
    pixels = height * width
    block = read_f32(os.path.join(directory, block_name), (pixels * 8,))
    splits = np.cumsum([pixels * 3, pixels, pixels * 3])
    x_local, c_local, x_global, c_global = np.split(block, splits)
    return {
        "x_local": x_local.reshape(height, width, 3),
        "c_local": c_local.reshape(height, width),
        "x_global": x_global.reshape(height, width, 3),
        "c_global": c_global.reshape(height, width),
        "pose": read_pose(os.path.join(directory, pose_name)),
    }


def count_predictions(directory: str) -> int:
    if not os.path.isdir(directory):
        return 0
    return sum(1 for n in os.listdir(directory) if n.startswith("pred_") and n.endswith(".f32"))


if __name__ == "__main__":
    import sys
    from scenegen import generate_scene

    logging.basicConfig(level=config.LOG_LEVEL)
    print("=" * 70)
    print("StreamPoint Dataset Writer".center(70))
    print("=" * 70)

    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(config.DATA_DIR, "demo_scene")
    write_dataset(generate_scene(seed=0), out)
    ok = verify_dataset(out)
    print("=" * 70)
    print(("Dataset verified" if ok else "Dataset verification FAILED").center(70))
    print("=" * 70)
