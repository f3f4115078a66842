import json
import os

import numpy as np
import pandas as pd
import pytest

from checkpoint import load_checkpoint, save_checkpoint
from cli import MANIFEST_NAME, main, parse_resolution
from data_loader import read_dataset
from evalsuite import read_metrics
from exceptions import ConfigError
from models import ModelConfig, RunManifest
from reconstructor import StreamingReconstructor

TINY_MODEL = {"patch_size": 8, "width": 16, "encoder_depth": 1, "decoder_depth": 2, "num_heads": 2,
              "mlp_ratio": 2, "head_hidden": 4, "image_size": [16, 16]}


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["scenegen", "--count", "2", "--frames", "8", "--res", "16", "--seed", "4",
                 "--trajectory", "orbit", "--out", str(out)]) == 0
    return out


@pytest.fixture
def tiny_ckpt(tmp_path, tiny_cfg):
    return save_checkpoint(str(tmp_path / "tiny.s3r"), StreamingReconstructor(tiny_cfg, seed=2))


def test_parse_resolution():
    assert parse_resolution("32") == (32, 32)
    assert parse_resolution("16x24") == (16, 24)
    with pytest.raises(ConfigError):
        parse_resolution("big")


def test_scenegen_writes_scenes_and_manifest(tmp_path):
    out = tmp_path / "data"
    assert main(["scenegen", "--count", "3", "--frames", "3", "--res", "16", "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == [MANIFEST_NAME, "scene_000", "scene_001", "scene_002"]
    seq = read_dataset(str(out / "scene_001"))
    assert len(seq) == 3 and seq.seed == 1
    manifest = RunManifest.model_validate_json((out / MANIFEST_NAME).read_text())
    assert manifest.command == "scenegen"
    assert len(manifest.code_hash) == 64


def test_indivisible_resolution_exits_with_config_error(tmp_path):
    assert main(["scenegen", "--res", "30", "--out", str(tmp_path / "data")]) == 2
    assert not (tmp_path / "data" / "scene_000").exists()


def test_unknown_flag_exits_with_usage_error():
    assert main(["scenegen", "--no-such-flag"]) == 2


def test_bad_policy_exits_with_config_error(tmp_path, dataset, tiny_ckpt):
    assert main(["stream", "--ckpt", tiny_ckpt, "--scene", str(dataset / "scene_000"),
                 "--policy", "window:0"]) == 2


def test_missing_checkpoint_is_runtime_failure(tmp_path, dataset):
    assert main(["stream", "--ckpt", str(tmp_path / "none.s3r"), "--scene", str(dataset / "scene_000")]) == 1


def test_train_zero_steps_saves_initial_weights(tmp_path, dataset):
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps({"model": TINY_MODEL, "train": {"policy": "causal"}}))
    out = tmp_path / "run"
    assert main(["train", "--config", str(config_path), "--data", str(dataset), "--steps", "0",
                 "--out", str(out), "--quiet"]) == 0
    ckpt = load_checkpoint(str(out / "final.s3r"))
    expected = StreamingReconstructor(ModelConfig.model_validate(TINY_MODEL))
    for name, array in expected.state_dict().items():
        assert np.array_equal(ckpt.params[name], array)
    assert (out / MANIFEST_NAME).exists()


def test_train_then_resume(tmp_path, dataset):
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps({"model": TINY_MODEL}))
    common = ["train", "--config", str(config_path), "--data", str(dataset), "--frames-min", "2",
              "--frames-max", "3", "--quiet"]
    assert main(common + ["--steps", "2", "--out", str(tmp_path / "a")]) == 0
    assert main(common + ["--steps", "3", "--out", str(tmp_path / "b"),
                          "--resume", str(tmp_path / "a" / "final.s3r")]) == 0
    log = pd.read_csv(tmp_path / "b" / "train_log.csv")
    assert log["step"].tolist() == [0, 1, 2]


def _stream(tmp_path, dataset, ckpt, policy, name):
    pred, stats = tmp_path / f"pred_{name}", tmp_path / f"stats_{name}.csv"
    assert main(["stream", "--ckpt", ckpt, "--scene", str(dataset / "scene_000"), "--policy", policy,
                 "--dump-pred", str(pred), "--stats", str(stats)]) == 0
    return pred, pd.read_csv(stats)


def test_wide_window_matches_causal(tmp_path, dataset, tiny_ckpt):
    causal, _ = _stream(tmp_path, dataset, tiny_ckpt, "causal", "causal")
    wide, _ = _stream(tmp_path, dataset, tiny_ckpt, "window:1000", "wide")
    for name in sorted(os.listdir(causal)):
        if name == MANIFEST_NAME:
            continue
        assert (causal / name).read_bytes() == (wide / name).read_bytes()


def test_window_stats_are_constant(tmp_path, dataset, tiny_ckpt, tiny_cfg):
    _, stats = _stream(tmp_path, dataset, tiny_ckpt, "window:5", "window")
    assert stats["frame"].tolist() == list(range(1, 9))
    late = stats[stats["frame"] > 6]
    assert late["attended_tokens"].nunique() == 1
    assert late["attended_tokens"].iloc[0] == 6 * tiny_cfg.num_tokens
    assert (stats.loc[stats["frame"] > 1, "attended_tokens"]
            == stats.loc[stats["frame"] > 1, "expected_tokens"]).all()


def test_window_resident_cache_is_bounded(tmp_path, dataset, tiny_ckpt, tiny_cfg):
    per_frame = tiny_cfg.num_tokens * tiny_cfg.decoder_depth
    for k in (1, 2, 5):
        _, stats = _stream(tmp_path, dataset, tiny_ckpt, f"window:{k}", f"resident_{k}")
        assert stats["resident_tokens"].max() <= (k + 1) * per_frame
        assert (stats.loc[stats["frame"] > k + 1, "resident_tokens"] == (k + 1) * per_frame).all()
    _, causal = _stream(tmp_path, dataset, tiny_ckpt, "causal", "resident_causal")
    assert causal["resident_tokens"].tolist() == [t * per_frame for t in causal["frame"]]


def test_causal_stats_grow_linearly(tmp_path, dataset, tiny_ckpt, tiny_cfg):
    _, stats = _stream(tmp_path, dataset, tiny_ckpt, "causal", "causal")
    rows = stats[stats["frame"] > 1]
    assert (rows["attended_tokens"] == (rows["frame"] - 1) * tiny_cfg.num_tokens).all()


def test_full_attention_reports_final_rows(tmp_path, dataset, tiny_ckpt):
    _, stats = _stream(tmp_path, dataset, tiny_ckpt, "fa", "fa")
    assert len(stats) == 16
    assert stats["final"].sum() == 8


def test_eval_writes_metrics(tmp_path, dataset, tiny_ckpt):
    pred, _ = _stream(tmp_path, dataset, tiny_ckpt, "causal", "eval")
    out = tmp_path / "metrics.json"
    assert main(["eval", "--scene", str(dataset / "scene_000"), "--pred", str(pred), "--out", str(out),
                 "--depth-align", "per-sequence-scale", "--min-confidence", "1.0"]) == 0
    report = read_metrics(str(out))
    assert report.depth.n_frames == 8
    assert np.isfinite(report.depth.abs_rel)
    assert report.recon.n_gt > 0


def test_bench_writes_tables(tmp_path):
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps({"model": TINY_MODEL}))
    out = tmp_path / "bench"
    assert main(["bench", "--config", str(config_path), "--policies", "causal,window:2",
                 "--sizes", "4,8", "--out", str(out)]) == 0
    table = pd.read_csv(out / "bench.csv")
    assert len(table) == 2 * (4 + 8)
    window = table[(table["policy"] == "window:2") & (table["frame"] > 3)]
    assert window["attended_tokens"].nunique() == 1
    causal = table[(table["policy"] == "causal") & (table["n_frames"] == 8)]
    assert causal["attended_tokens"].iloc[-1] == 7 * 4
    summary = pd.read_csv(out / "bench_summary.csv")
    assert set(summary["policy"]) == {"causal", "window:2"}
