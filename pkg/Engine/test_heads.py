import numpy as np
import pytest

from exceptions import DimensionError
from heads import add_heads, run_heads, unshuffle
from layers import Parameters
from models import CachePolicy, FrameOfReference
from numerics import Tensor
from reconstructor import StreamingReconstructor


def _levels(cfg, rng, n=3, scale=1.0):
    return [Tensor((rng.normal(size=(n, cfg.num_tokens, cfg.width)) * scale).astype(np.float32))
            for _ in range(cfg.decoder_depth + 1)]


def test_head_output_shapes(tiny_cfg, rng):
    params = Parameters(seed=0)
    add_heads(params, tiny_cfg)
    out = run_heads(params, tiny_cfg, _levels(tiny_cfg, rng))
    h, w = tiny_cfg.image_size
    assert out.x_local.shape == (3, h, w, 3)
    assert out.x_global.shape == (3, h, w, 3)
    assert out.c_local.shape == (3, h, w)
    assert out.q.shape == (3, 4)
    assert out.tau.shape == (3, 3)
    assert out.f.shape == (3, 2)
    assert len(out) == 3


def test_confidence_and_pose_constraints(tiny_cfg, rng):
    params = Parameters(seed=1)
    add_heads(params, tiny_cfg)
    for scale in (0.1, 1.0, 10.0):
        out = run_heads(params, tiny_cfg, _levels(tiny_cfg, rng, scale=scale))
        assert (out.c_local.data > 1.0).all()
        assert (out.c_global.data > 1.0).all()
        assert np.allclose(np.linalg.norm(out.q.data, axis=-1), 1.0, atol=1e-5)
        assert (out.q.data[:, 0] >= 0).all()
        assert (out.f.data > 0).all()


def test_local_and_global_heads_are_independent(tiny_cfg, rng):
    params = Parameters(seed=2)
    add_heads(params, tiny_cfg)
    levels = _levels(tiny_cfg, rng)
    before = run_heads(params, tiny_cfg, levels)
    params["head.global.proj.bias"].data = params["head.global.proj.bias"].data + 1.0
    after = run_heads(params, tiny_cfg, levels)
    assert np.array_equal(before.x_local.data, after.x_local.data)
    assert not np.array_equal(before.x_global.data, after.x_global.data)


def test_wrong_pyramid_depth_is_rejected(tiny_cfg, rng):
    params = Parameters(seed=0)
    add_heads(params, tiny_cfg)
    with pytest.raises(DimensionError):
        run_heads(params, tiny_cfg, _levels(tiny_cfg, rng)[:-1])


def test_unshuffle_places_patches(tiny_cfg):
    p = tiny_cfg.patch_size
    tokens = np.zeros((1, tiny_cfg.num_tokens, p * p), np.float32)
    tokens[0, 1, :] = 1.0
    image = unshuffle(Tensor(tokens), tiny_cfg, 1).data[0, ..., 0]
    assert image[:p, p:].all()
    assert image.sum() == p * p


def test_predictions_carry_frames_and_indices(tiny_cfg, random_frames):
    model = StreamingReconstructor(tiny_cfg, seed=0)
    predictions = model.predict(random_frames(3), CachePolicy.full_causal())
    assert [p.t for p in predictions] == [1, 2, 3]
    assert predictions[0].x_local.frame == FrameOfReference.LOCAL
    assert predictions[0].x_global.frame == FrameOfReference.GLOBAL
    assert predictions[2].pose.q[0] >= 0
