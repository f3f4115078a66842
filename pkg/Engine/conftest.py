"""Shared pytest fixtures: a tiny model config and small generated scenes."""

import numpy as np
import pytest

from models import ModelConfig, SceneConfig, Trajectory
from scenegen import generate_scene

TINY_RES = (16, 16)


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(patch_size=8, width=16, encoder_depth=1, decoder_depth=2, num_heads=2,
                       mlp_ratio=2, head_hidden=4, image_size=TINY_RES, seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def two_frame_scene():
    return generate_scene(3, SceneConfig(n_frames=2, resolution=TINY_RES, n_primitives=2))


@pytest.fixture
def six_frame_scene():
    return generate_scene(7, SceneConfig(n_frames=6, resolution=TINY_RES, n_primitives=3,
                                         trajectory=Trajectory.ORBIT))


@pytest.fixture
def random_frames(rng):
    def make(n: int, resolution=TINY_RES) -> np.ndarray:
        return rng.random((n, resolution[0], resolution[1], 3)).astype(np.float32)
    return make
