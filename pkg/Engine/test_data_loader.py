import json
import os

import numpy as np
import pytest

from data_loader import (MANIFEST_NAME, count_predictions, frame_files, list_scenes, read_dataset,
                         read_f32, read_ppm, read_prediction, verify_dataset, write_dataset,
                         write_ppm, write_prediction)
from exceptions import ChecksumError, ConsistencyError, FormatError
from geometry import CameraPose


def test_write_read_round_trip(tmp_path, two_frame_scene):
    write_dataset(two_frame_scene, str(tmp_path))
    back = read_dataset(str(tmp_path))
    assert len(back) == len(two_frame_scene)
    for a, b in zip(two_frame_scene.frames, back.frames):
        assert np.array_equal(a.rgb, b.rgb)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.ptmap_local, b.ptmap_local)
        assert np.array_equal(a.ptmap_global, b.ptmap_global)
        assert np.array_equal(a.valid_mask, b.valid_mask)
        assert np.allclose(a.pose.q, b.pose.q, atol=1e-15)
        assert np.array_equal(a.pose.tau, b.pose.tau)
    assert back.config == two_frame_scene.config


def test_same_scene_gives_identical_bytes(tmp_path, two_frame_scene):
    write_dataset(two_frame_scene, str(tmp_path / "a"))
    write_dataset(two_frame_scene, str(tmp_path / "b"))
    for name in sorted(os.listdir(tmp_path / "a")):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_corrupted_ppm_magic(tmp_path, two_frame_scene):
    write_dataset(two_frame_scene, str(tmp_path))
    path = tmp_path / frame_files(1).rgb
    path.write_bytes(b"P3" + path.read_bytes()[2:])
    with pytest.raises(FormatError):
        read_dataset(str(tmp_path), verify=False)
    with pytest.raises(ChecksumError):
        read_dataset(str(tmp_path))
    assert not verify_dataset(str(tmp_path))


def test_bad_format_tag_and_version(tmp_path, two_frame_scene):
    write_dataset(two_frame_scene, str(tmp_path))
    manifest_path = tmp_path / MANIFEST_NAME
    manifest = json.loads(manifest_path.read_text())
    manifest_path.write_text(json.dumps({**manifest, "version": 99}))
    with pytest.raises(FormatError):
        read_dataset(str(tmp_path))
    manifest_path.write_text(json.dumps({**manifest, "format": "something-else"}))
    with pytest.raises(FormatError):
        read_dataset(str(tmp_path))


def test_frame_count_mismatch(tmp_path, two_frame_scene):
    write_dataset(two_frame_scene, str(tmp_path))
    manifest_path = tmp_path / MANIFEST_NAME
    manifest = json.loads(manifest_path.read_text())
    manifest_path.write_text(json.dumps({**manifest, "n_frames": 3}))
    with pytest.raises(ConsistencyError):
        read_dataset(str(tmp_path))


def test_extra_rgb_file_is_inconsistent(tmp_path, two_frame_scene):
    write_dataset(two_frame_scene, str(tmp_path))
    write_ppm(str(tmp_path / "rgb_0003.ppm"), two_frame_scene.frames[0].rgb)
    with pytest.raises(ConsistencyError):
        read_dataset(str(tmp_path))


def test_missing_manifest(tmp_path):
    with pytest.raises(FormatError):
        read_dataset(str(tmp_path))


def test_truncated_float_file(tmp_path):
    path = tmp_path / "x.f32"
    path.write_bytes(b"\x00" * 10)
    with pytest.raises(FormatError):
        read_f32(str(path), (2, 2))


def test_ppm_round_trip(tmp_path, rng):
    rgb = (rng.integers(0, 256, size=(5, 3, 3)) / 255.0).astype(np.float32)
    write_ppm(str(tmp_path / "a.ppm"), rgb)
    assert np.array_equal(read_ppm(str(tmp_path / "a.ppm")), rgb)


def test_list_scenes(tmp_path, two_frame_scene):
    write_dataset(two_frame_scene, str(tmp_path / "scene_001"))
    write_dataset(two_frame_scene, str(tmp_path / "scene_000"))
    (tmp_path / "not_a_scene").mkdir()
    assert [os.path.basename(p) for p in list_scenes(str(tmp_path))] == ["scene_000", "scene_001"]
    assert list_scenes(str(tmp_path / "scene_000")) == [str(tmp_path / "scene_000")]


def test_prediction_dump(tmp_path, rng):
    x_local = rng.normal(size=(4, 6, 3)).astype(np.float32)
    c_local = rng.uniform(1, 2, size=(4, 6)).astype(np.float32)
    x_global = rng.normal(size=(4, 6, 3)).astype(np.float32)
    c_global = rng.uniform(1, 2, size=(4, 6)).astype(np.float32)
    pose = CameraPose([1, 0, 0, 0], [0.5, 0, 0], [6.0, 6.0])
    write_prediction(str(tmp_path), 1, x_local, c_local, x_global, c_global, pose)
    dump = read_prediction(str(tmp_path), 1, (4, 6))
    assert np.array_equal(dump["x_local"], x_local)
    assert np.array_equal(dump["c_global"], c_global)
    assert dump["pose"].tau.tolist() == [0.5, 0.0, 0.0]
    assert count_predictions(str(tmp_path)) == 1
