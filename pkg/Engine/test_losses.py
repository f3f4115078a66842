import dataclasses

import numpy as np
import pytest

from exceptions import ContractError, DegenerateError
from geometry import CameraPose
from heads import HeadOutputs
from losses import NormScale, conf_loss, pose_loss, scale_factor, total_loss
from models import CachePolicy, SceneConfig, ScaleMode
from numerics import Tensor, gradient_check
from reconstructor import StreamingReconstructor
from scenegen import generate_scene


def _oracle_outputs(frames, dtype=np.float64) -> HeadOutputs:
    ones = np.ones((len(frames),) + frames[0].depth.shape, dtype)
    return HeadOutputs(
        x_local=Tensor(np.stack([f.ptmap_local for f in frames]).astype(dtype), requires_grad=True),
        c_local=Tensor(ones.copy(), requires_grad=True),
        x_global=Tensor(np.stack([f.ptmap_global for f in frames]).astype(dtype), requires_grad=True),
        c_global=Tensor(ones.copy(), requires_grad=True),
        q=Tensor(np.stack([f.pose.q for f in frames]).astype(dtype)),
        tau=Tensor(np.stack([f.pose.tau for f in frames]).astype(dtype)),
        f=Tensor(np.stack([f.pose.f for f in frames]).astype(dtype)),
    )


def _perturbed_outputs(frames, rng, scale=1.0) -> HeadOutputs:
    out = _oracle_outputs(frames)
    noisy = {
        "x_local": out.x_local.data * scale + rng.normal(scale=0.1, size=out.x_local.shape),
        "x_global": out.x_global.data * scale + rng.normal(scale=0.1, size=out.x_global.shape),
        "c_local": 1.0 + rng.random(out.c_local.shape),
        "c_global": 1.0 + rng.random(out.c_global.shape),
        "tau": out.tau.data * scale + rng.normal(scale=0.1, size=out.tau.shape),
    }
    return dataclasses.replace(out, **{k: Tensor(v) for k, v in noisy.items()})


def _rescaled(outputs: HeadOutputs, factor: float) -> HeadOutputs:
    return dataclasses.replace(outputs, x_local=Tensor(outputs.x_local.data * factor),
                               x_global=Tensor(outputs.x_global.data * factor),
                               tau=Tensor(outputs.tau.data * factor))


def _rescaled_frames(frames, factor: float):
    return [dataclasses.replace(f, depth=f.depth * factor, ptmap_local=f.ptmap_local * factor,
                                ptmap_global=f.ptmap_global * factor,
                                pose=CameraPose(f.pose.q, f.pose.tau * factor, f.pose.f))
            for f in frames]


def test_scale_factor_examples(rng):
    points = rng.normal(size=(4, 5, 3))
    points /= np.linalg.norm(points, axis=-1, keepdims=True) / 2.0
    mask = np.ones((4, 5), bool)
    assert scale_factor(points, mask) == pytest.approx(2.0)
    assert scale_factor(points * 3.0, mask) == pytest.approx(6.0)
    mask[0, :3] = False
    brute = np.mean([np.linalg.norm(p) for p in points[mask]])
    assert scale_factor(points, mask) == pytest.approx(brute, abs=1e-6)


def test_scale_factor_needs_valid_points():
    with pytest.raises(DegenerateError):
        scale_factor(np.ones((2, 2, 3)), np.zeros((2, 2), bool))


def test_conf_loss_scalar_example():
    pred = Tensor(np.array([[[0.5, 0.0, 0.0]]]))
    gt = np.zeros((1, 1, 3))
    conf = Tensor(np.array([[2.0]]))
    loss = conf_loss(pred, conf, gt, np.ones((1, 1), bool), NormScale(1.0, 1.0), alpha=0.2)
    assert loss.item() == pytest.approx(2 * 0.5 - 0.2 * np.log(2.0), abs=1e-12)
    assert loss.item() == pytest.approx(0.861370, abs=1e-6)


def test_conf_loss_perfect_prediction_is_zero(rng):
    gt = rng.normal(size=(3, 3, 3))
    loss = conf_loss(Tensor(gt.copy()), Tensor(np.ones((3, 3))), gt, np.ones((3, 3), bool),
                     NormScale(1.5, 1.5), alpha=0.2)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_conf_loss_optimal_confidence_is_alpha_over_residual():
    alpha, r = 0.2, 0.5
    candidates = np.linspace(0.05, 2.0, 1951)
    values = [conf_loss(Tensor(np.array([[[r, 0.0, 0.0]]])), Tensor(np.array([[c]])), np.zeros((1, 1, 3)),
                        np.ones((1, 1), bool), NormScale(1.0, 1.0), alpha).item()
              for c in candidates]
    assert candidates[int(np.argmin(values))] == pytest.approx(alpha / r, abs=2e-3)


def test_conf_loss_rejects_non_positive_confidence():
    with pytest.raises(ContractError):
        conf_loss(Tensor(np.zeros((1, 1, 3))), Tensor(np.zeros((1, 1))), np.zeros((1, 1, 3)),
                  np.ones((1, 1), bool), NormScale(1.0, 1.0), 0.2)


def test_conf_loss_is_per_pixel_mean():
    pred = Tensor(np.array([[[0.5, 0.0, 0.0], [0.5, 0.0, 0.0]]]))
    conf = Tensor(np.array([[2.0, 2.0]]))
    gt = np.zeros((1, 2, 3))
    both = conf_loss(pred, conf, gt, np.ones((1, 2), bool), NormScale(1.0, 1.0), 0.2).item()
    one = conf_loss(pred, conf, gt, np.array([[True, False]]), NormScale(1.0, 1.0), 0.2).item()
    assert both == pytest.approx(one)


def test_pose_loss_examples():
    gt = CameraPose([1, 0, 0, 0], [1, 0, 0], [32, 32])
    pred = CameraPose([1, 0, 0, 0], [0, 0, 0], [32, 32])
    assert pose_loss(pred, gt, NormScale(2.0, 2.0), 32) == pytest.approx(0.5)
    assert pose_loss(gt, gt, NormScale(2.0, 2.0), 32) == pytest.approx(0.0)
    flipped = CameraPose([-1, 0, 0, 0], [1, 0, 0], [32, 32])
    assert pose_loss(flipped, gt, NormScale(2.0, 2.0), 32) == pytest.approx(0.0)


def test_oracle_predictions_give_zero_terms(six_frame_scene):
    frames = six_frame_scene.frames
    report = total_loss(_oracle_outputs(frames), frames, alpha=0.2)
    assert report.conf_local == pytest.approx(0.0, abs=1e-9)
    assert report.conf_global == pytest.approx(0.0, abs=1e-9)
    assert report.pose == pytest.approx(0.0, abs=1e-9)
    assert report.mean_conf_local == pytest.approx(1.0)


@pytest.mark.parametrize("mode", list(ScaleMode))
def test_loss_is_scale_invariant(six_frame_scene, rng, mode):
    frames = six_frame_scene.frames
    outputs = _perturbed_outputs(frames, rng)
    base = total_loss(outputs, frames, alpha=0.2, mode=mode).total
    moved = total_loss(_rescaled(outputs, 3.7), _rescaled_frames(frames, 0.4), alpha=0.2, mode=mode).total
    assert moved == pytest.approx(base, abs=1e-6)


def test_metric_mode_breaks_scale_invariance(six_frame_scene, rng):
    frames = six_frame_scene.frames
    outputs = _perturbed_outputs(frames, rng)
    base = total_loss(outputs, frames, alpha=0.2, metric=True).total
    moved = total_loss(_rescaled(outputs, 2.0), frames, alpha=0.2, metric=True).total
    assert abs(moved - base) > 1e-3


def test_prediction_count_must_match(six_frame_scene):
    frames = six_frame_scene.frames
    with pytest.raises(ContractError):
        total_loss(_oracle_outputs(frames[:3]), frames, alpha=0.2)


def _gradient_errors(cfg, scene, seed: int, policy: CachePolicy):
    model = StreamingReconstructor(cfg, seed=seed).astype(np.float64)
    frames = scene.frames
    images = np.stack([f.rgb for f in frames]).astype(np.float64)

    def objective():
        outputs, _ = model.forward(images, policy)
        return total_loss(outputs, frames, alpha=0.2).loss

    names = ["dec.register", "head.pose.fc2.bias", "head.global.conv2.bias", "enc.0.ln1.gamma"]
    return gradient_check(objective, {n: model.params[n] for n in names}, h=1e-6)


def test_total_loss_gradient_matches_finite_differences(tiny_cfg, two_frame_scene):
    errors = _gradient_errors(tiny_cfg, two_frame_scene, 4, CachePolicy.full_causal())
    assert max(errors.values()) < 1e-4


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_total_loss_gradient_over_random_draws(tiny_cfg, seed):
    scene = generate_scene(200 + seed, SceneConfig(n_frames=3, resolution=tiny_cfg.image_size, n_primitives=2))
    policy = [CachePolicy.full_causal(), CachePolicy.window(1)][seed % 2]
    errors = _gradient_errors(tiny_cfg, scene, seed, policy)
    assert max(errors.values()) < 1e-4, errors
