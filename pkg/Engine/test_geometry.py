import numpy as np
import pytest

from exceptions import ContractError, DegenerateError, DimensionError
from geometry import (CameraPose, Pointmap, Sim3, axis_angle_to_quat, default_principal_point,
                      global_to_local, local_to_global, matrix_to_quat, quat_geodesic_deg,
                      quat_to_matrix, relative_transform, unproject, unproject_pixel, umeyama_sim3)
from models import FrameOfReference


def random_rotation(rng) -> np.ndarray:
    return quat_to_matrix(rng.normal(size=4))


def random_pose(rng, focal=(30.0, 30.0)) -> CameraPose:
    return CameraPose(rng.normal(size=4), rng.normal(size=3), np.array(focal))


def test_identity_quaternion():
    assert np.allclose(quat_to_matrix([1, 0, 0, 0]), np.eye(3))
    assert quat_geodesic_deg([1, 0, 0, 0], [1, 0, 0, 0]) == pytest.approx(0.0)


def test_double_cover_has_zero_angle(rng):
    q = rng.normal(size=4)
    assert quat_geodesic_deg(q, -q) == pytest.approx(0.0, abs=1e-5)


def test_quarter_turn_about_z():
    q = [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]
    expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
    assert np.allclose(quat_to_matrix(q), expected)
    assert quat_geodesic_deg(q, [1, 0, 0, 0]) == pytest.approx(90.0)


def test_matrix_to_quat_round_trip(rng):
    for _ in range(20):
        R = random_rotation(rng)
        q = matrix_to_quat(R)
        assert q[0] >= 0
        assert np.allclose(quat_to_matrix(q), R, atol=1e-10)


def test_zero_quaternion_is_rejected():
    with pytest.raises(ContractError):
        quat_to_matrix([0, 0, 0, 0])


def test_pose_rejects_non_positive_focal():
    with pytest.raises(ContractError):
        CameraPose([1, 0, 0, 0], np.zeros(3), [0.0, 10.0])


def test_pose_is_canonicalized():
    pose = CameraPose([-1.0, 0, 0, 0], np.zeros(3), [10.0, 10.0])
    assert pose.q.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_unproject_principal_point():
    depth = np.full((5, 7), 3.0)
    pm = unproject(depth, CameraPose.identity([10.0, 10.0]))
    cx, cy = default_principal_point(5, 7)
    assert pm.points[int(cy), int(cx)].tolist() == [0.0, 0.0, 3.0]


def test_unproject_pixel_hand_example():
    assert unproject_pixel(150, 50, 2.0, (100, 100), (50, 50)).tolist() == [2.0, 0.0, 2.0]


def test_zero_depth_pixel_is_invalid():
    depth = np.ones((4, 4))
    depth[1, 2] = 0.0
    pm = unproject(depth, CameraPose.identity([4.0, 4.0]))
    assert not pm.valid[1, 2]
    assert pm.valid.sum() == 15
    assert pm.points[1, 2].tolist() == [0.0, 0.0, 0.0]


def test_first_frame_global_is_local(rng):
    pose = random_pose(rng)
    local = unproject(rng.uniform(1, 5, size=(4, 4)), pose)
    world = local_to_global(local, pose, pose)
    assert np.array_equal(world.points, local.points)
    assert world.frame == FrameOfReference.GLOBAL


def test_pure_translation_shifts_points(rng):
    first = CameraPose.identity([8.0, 8.0])
    moved = CameraPose([1, 0, 0, 0], [1.0, -2.0, 0.5], [8.0, 8.0])
    local = unproject(rng.uniform(1, 5, size=(3, 3)), moved)
    world = local_to_global(local, moved, first)
    assert np.allclose(world.points, local.points + np.array([1.0, -2.0, 0.5]))


def test_local_global_round_trip(rng):
    pose_1, pose_t = random_pose(rng), random_pose(rng)
    local = unproject(rng.uniform(1, 5, size=(6, 6)), pose_t)
    back = global_to_local(local_to_global(local, pose_t, pose_1), pose_t, pose_1)
    assert np.allclose(back.points, local.points, atol=1e-6)


def test_relative_transform_of_same_pose_is_identity(rng):
    pose = random_pose(rng)
    assert np.allclose(relative_transform(pose, pose), np.eye(4), atol=1e-12)


def test_pointmap_shape_checked():
    with pytest.raises(DimensionError):
        Pointmap(np.zeros((4, 4, 2)))


def test_umeyama_identity(rng):
    pts = rng.normal(size=(20, 3))
    sim = umeyama_sim3(pts, pts)
    assert sim.scale == pytest.approx(1.0)
    assert np.allclose(sim.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(sim.translation, 0.0, atol=1e-9)


def test_umeyama_recovers_similarity(rng):
    R0 = random_rotation(rng)
    t0 = rng.normal(size=3)
    src = rng.normal(size=(30, 3))
    dst = 2.0 * src @ R0.T + t0
    sim = umeyama_sim3(src, dst)
    assert sim.scale == pytest.approx(2.0, abs=1e-6)
    assert np.allclose(sim.rotation, R0, atol=1e-6)
    assert np.allclose(sim.translation, t0, atol=1e-6)


def test_umeyama_two_points_is_degenerate(rng):
    with pytest.raises(DegenerateError):
        umeyama_sim3(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))


def test_umeyama_collinear_points_are_degenerate():
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateError):
        umeyama_sim3(line, line)


def test_umeyama_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        umeyama_sim3(rng.normal(size=(5, 3)), rng.normal(size=(4, 3)))


def test_sim3_inverse_and_compose(rng):
    sim = Sim3(1.7, random_rotation(rng), rng.normal(size=3))
    pts = rng.normal(size=(10, 3))
    assert np.allclose(sim.inverse().apply(sim.apply(pts)), pts)
    both = sim.compose(sim.inverse())
    assert both.scale == pytest.approx(1.0)
    assert np.allclose(both.apply(pts), pts)


def test_sim3_moves_pose_centres(rng):
    sim = Sim3(2.0, np.eye(3), np.array([1.0, 0.0, 0.0]))
    pose = CameraPose(axis_angle_to_quat([0, 1, 0], 0.3), [1.0, 1.0, 1.0], [10.0, 10.0])
    moved = sim.apply_to_pose(pose)
    assert moved.tau.tolist() == pytest.approx([3.0, 2.0, 2.0])
    assert quat_geodesic_deg(moved.q, pose.q) == pytest.approx(0.0, abs=1e-6)
