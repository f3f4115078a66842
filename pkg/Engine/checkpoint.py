"""
checkpoint.py
-------------
Binary checkpoint format.

Layout:
    b"S3R1" | version u32 LE | header length u32 LE | JSON header | payload

The JSON header carries the model config, a manifest of named tensors
(shape, byte offset, byte length into the payload) and the training state.
The payload is the concatenation of all tensors as little-endian f32.
Optimizer moments are stored as tensors named optim.m.<param> / optim.v.<param>.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from pydantic import ValidationError

import config
from exceptions import ConsistencyError, FormatError
from models import ModelConfig
from numerics import OptimizerState
from reconstructor import StreamingReconstructor

logger = logging.getLogger(__name__)

LE_F32 = np.dtype("<f4")
_PREFIX = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: Dict[str, np.ndarray]
    moments_m: Dict[str, np.ndarray] = field(default_factory=dict)
    moments_v: Dict[str, np.ndarray] = field(default_factory=dict)
    train_state: Dict[str, Any] = field(default_factory=dict)

    def build_model(self) -> StreamingReconstructor:
        model = StreamingReconstructor(self.config)
        model.load_state_dict(self.params)
        return model


def encode_checkpoint(model_config: ModelConfig, params: Dict[str, np.ndarray],
                      optimizer: Optional[OptimizerState] = None,
                      train_state: Optional[Dict[str, Any]] = None) -> bytes:
    tensors: Dict[str, np.ndarray] = dict(params)
    if optimizer is not None:
        for name in params:
            tensors[f"optim.m.{name}"] = optimizer.m[name]
            tensors[f"optim.v.{name}"] = optimizer.v[name]

    manifest, chunks, offset = [], [], 0
    for name, array in tensors.items():
        raw = np.ascontiguousarray(array, dtype=LE_F32).tobytes()
        manifest.append({"name": name, "shape": list(array.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)

    header = {
        "config": model_config.model_dump(mode="json"),
        "tensors": manifest,
        "payload_bytes": offset,
        "train_state": train_state or {},
    }
    if optimizer is not None:
        header["optimizer"] = {
            "step": optimizer.step, "lr": optimizer.lr, "betas": list(optimizer.betas),
            "eps": optimizer.eps, "weight_decay": optimizer.weight_decay,
        }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(config.CHECKPOINT_MAGIC, config.CHECKPOINT_VERSION, len(header_bytes)) \
        + header_bytes + b"".join(chunks)


def save_checkpoint(path: str, model: StreamingReconstructor,
                    optimizer: Optional[OptimizerState] = None,
                    train_state: Optional[Dict[str, Any]] = None) -> str:
    blob = encode_checkpoint(model.cfg, model.state_dict(), optimizer, train_state)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(blob)
    logger.info(f"Saved checkpoint {path} ({len(blob):,} bytes)")
    return path


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    """
    Parse and validate a checkpoint.

    Raises:
        FormatError: bad magic, unsupported version, malformed header or a
                     total length that does not match the manifest
    """
    if len(blob) < _PREFIX.size:
        raise FormatError(f"{source}: truncated checkpoint ({len(blob)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != config.CHECKPOINT_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {config.CHECKPOINT_MAGIC!r}")
    if version != config.CHECKPOINT_VERSION:
        raise FormatError(f"{source}: checkpoint version {version} != supported {config.CHECKPOINT_VERSION}")
    start = _PREFIX.size
    if start + header_len > len(blob):
        raise FormatError(f"{source}: header length {header_len} exceeds file size {len(blob)}")
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
        model_config = ModelConfig.model_validate(header["config"])
        manifest = header["tensors"]
        payload_bytes = int(header["payload_bytes"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValidationError) as e:
        raise FormatError(f"{source}: malformed checkpoint header ({e})")

    payload = blob[start + header_len:]
    if len(payload) != payload_bytes:
        raise FormatError(f"{source}: payload has {len(payload)} bytes, header declares {payload_bytes}")

    tensors: Dict[str, np.ndarray] = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        offset, nbytes = entry["offset"], entry["nbytes"]
        if nbytes != int(np.prod(shape)) * 4 or offset + nbytes > payload_bytes:
            raise FormatError(f"{source}: tensor '{entry['name']}' has inconsistent extent")
        tensors[entry["name"]] = np.frombuffer(payload, dtype=LE_F32, count=nbytes // 4,
                                               offset=offset).reshape(shape).astype(np.float32)

    params = {k: v for k, v in tensors.items() if not k.startswith("optim.")}
    moments_m = {k[len("optim.m."):]: v for k, v in tensors.items() if k.startswith("optim.m.")}
    moments_v = {k[len("optim.v."):]: v for k, v in tensors.items() if k.startswith("optim.v.")}
    train_state = dict(header.get("train_state", {}))
    if "optimizer" in header:
        train_state["optimizer"] = header["optimizer"]
    return Checkpoint(model_config, params, moments_m, moments_v, train_state)


def load_checkpoint(path: str, expected: Optional[ModelConfig] = None) -> Checkpoint:
    """
    Read a checkpoint file.

    Args:
        expected: if given, the stored model config must equal it

    Raises:
        FormatError: see decode_checkpoint
        ConsistencyError: stored config differs from `expected`
    """
    if not os.path.exists(path):
        logger.error(f"Checkpoint not found: {path}")
        raise FormatError(f"Checkpoint not found: {path}")
    with open(path, "rb") as f:
        ckpt = decode_checkpoint(f.read(), path)
    if expected is not None and expected != ckpt.config:
        raise ConsistencyError(
            f"{path}: checkpoint config {ckpt.config.model_dump()} != expected {expected.model_dump()}"
        )
    return ckpt


def restore_optimizer(ckpt: Checkpoint) -> Optional[OptimizerState]:
    meta = ckpt.train_state.get("optimizer")
    if meta is None or not ckpt.moments_m:
        return None
    return OptimizerState(
        m={k: v.copy() for k, v in ckpt.moments_m.items()},
        v={k: v.copy() for k, v in ckpt.moments_v.items()},
        step=int(meta["step"]), lr=float(meta["lr"]), betas=tuple(meta["betas"]),
        eps=float(meta["eps"]), weight_decay=float(meta["weight_decay"]),
    )
