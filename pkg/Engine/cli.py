"""
cli.py
------
Command-line entry point.

    python Engine/cli.py scenegen --count 3 --frames 6 --res 32 --out data/
    python Engine/cli.py train    --data data/ --steps 2000 --out runs/toy
    python Engine/cli.py stream   --ckpt runs/toy/final.s3r --scene data/scene_000 \
                                  --policy window:5 --dump-pred runs/pred --stats runs/stats.csv
    python Engine/cli.py eval     --scene data/scene_000 --pred runs/pred --out runs/metrics.json
    python Engine/cli.py bench    --out runs/bench

A JSON file given with --config is read first ({"model": {...}, "train":
{...}, "scene": {...}}); explicit flags override it. Every command writes a
run_manifest.json next to its outputs.

Exit codes: 0 success, 1 runtime failure, 2 bad flags or configuration.
"""

import argparse
import glob
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

import config
from checkpoint import load_checkpoint
from data_loader import list_scenes, read_dataset, write_dataset, write_prediction
from evalsuite import evaluate_directory, write_metrics
from exceptions import ConfigError, StreamPointError
from kv_cache import attended_token_count
from models import (BenchRecord, CachePolicy, DepthAlignment, ModelConfig, PolicyKind, RunManifest,
                    SceneConfig, TrainConfig, Trajectory)
from reconstructor import StreamingReconstructor
from scenegen import generate_scene
from trainer import train

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"
BENCH_SIZES = (8, 32, 128)
BENCH_POLICIES = ("causal", f"window:{config.WINDOW_SIZE}", "fa")


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------
def parse_resolution(text: str) -> Tuple[int, int]:
    """`32` or `32x48` (height x width)."""
    try:
        parts = [int(p) for p in text.lower().split("x")]
    except ValueError:
        raise ConfigError(f"Resolution must be N or HxW, got '{text}'")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or min(parts) < 1:
        raise ConfigError(f"Resolution must be N or HxW, got '{text}'")
    return parts[0], parts[1]


def check_resolution(resolution: Tuple[int, int], patch_size: int) -> None:
    if resolution[0] % patch_size or resolution[1] % patch_size:
        raise ConfigError(f"Resolution {resolution[0]}x{resolution[1]} is not divisible by patch size {patch_size}")


def load_config_file(path: Optional[str]) -> Dict:
    if not path:
        return {}
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config file {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    return data


def merge(section: Dict, **flags) -> Dict:
    """Config-file section overridden by every flag that was given."""
    merged = dict(section)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def code_hash() -> str:
    digest = hashlib.sha256()
    for path in sorted(glob.glob(os.path.join(os.path.dirname(os.path.abspath(__file__)), "*.py"))):
        with open(path, "rb") as f:
            digest.update(os.path.basename(path).encode())
            digest.update(f.read())
    return digest.hexdigest()


def write_manifest(out_dir: str, command: str, argv: Sequence[str], resolved: Dict, seed: int,
                   started_at: str, timings: Dict[str, float]) -> str:
    manifest = RunManifest(command=command, argv=list(argv), config=resolved, seed=seed,
                           code_hash=code_hash(), started_at=started_at, timings=timings)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as f:
        f.write(manifest.model_dump_json(indent=2))
    return path


def banner(title: str) -> None:
    print("=" * 70)
    print(title.center(70))
    print("=" * 70)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_scenegen(args, argv: Sequence[str]) -> int:
    started, clock = _now(), time.perf_counter()
    file_cfg = load_config_file(args.config)
    scene_dict = merge(file_cfg.get("scene", {}), n_frames=args.frames,
                       resolution=parse_resolution(args.res) if args.res else None,
                       dynamic=True if args.dynamic else None, trajectory=args.trajectory,
                       metric_scale=True if args.metric else None)
    scene_cfg = SceneConfig.model_validate(scene_dict)
    patch_size = file_cfg.get("model", {}).get("patch_size", config.PATCH_SIZE)
    check_resolution(scene_cfg.resolution, patch_size)
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    out = args.out or config.DATA_DIR

    def build(i: int) -> str:
        directory = os.path.join(out, f"scene_{i:03d}")
        write_dataset(generate_scene(seed + i, scene_cfg, patch_size), directory)
        return directory

    workers = max(1, min(config.MAX_WORKERS, args.count))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        written = list(pool.map(build, range(args.count)))

    write_manifest(out, "scenegen", argv, {"scene": scene_cfg.model_dump(mode="json"), "count": args.count},
                   seed, started, {"total_s": time.perf_counter() - clock})
    banner("SCENE GENERATION")
    for directory in written:
        print(f"   ✓ {directory}")
    return 0


def cmd_train(args, argv: Sequence[str]) -> int:
    started, clock = _now(), time.perf_counter()
    file_cfg = load_config_file(args.config)
    scene_dirs = list_scenes(args.data or config.DATA_DIR)
    if not scene_dirs:
        raise StreamPointError(f"No scene directories under {args.data or config.DATA_DIR}")
    scenes = [read_dataset(d) for d in scene_dirs]
    resolution = tuple(int(x) for x in scenes[0].frames[0].depth.shape)

    frame_range = None
    if args.frames_min is not None or args.frames_max is not None:
        lo, hi = file_cfg.get("train", {}).get("frame_range", config.DEFAULT_FRAME_RANGE)
        frame_range = (args.frames_min or lo, args.frames_max or hi)
    train_section = dict(file_cfg.get("train", {}))
    if isinstance(train_section.get("policy"), str):
        train_section["policy"] = CachePolicy.parse(train_section["policy"])
    train_cfg = TrainConfig.model_validate(merge(
        train_section, steps=args.steps, lr=args.lr, batch=args.batch, seed=args.seed,
        policy=CachePolicy.parse(args.policy) if args.policy else None, frame_range=frame_range,
        checkpoint_every=args.checkpoint_every, log_path=args.log_path,
    )).check()
    model_cfg = ModelConfig.model_validate(merge(file_cfg.get("model", {}), image_size=resolution,
                                                 seed=args.seed)).check()
    out = args.out or os.path.join(config.RUNS_DIR, "train")
    resume = load_checkpoint(args.resume, expected=model_cfg) if args.resume else None

    result = train(model_cfg, train_cfg, scenes, out_dir=out, resume=resume, progress=not args.quiet)

    write_manifest(out, "train", argv, {"model": model_cfg.model_dump(mode="json"),
                                        "train": train_cfg.model_dump(mode="json"),
                                        "scenes": scene_dirs},
                   train_cfg.seed, started, {"total_s": time.perf_counter() - clock})
    banner("TRAINING")
    if len(result.log):
        first, last = result.log.iloc[0], result.log.iloc[-1]
        print(f"   Steps:        {len(result.log)}")
        print(f"   Loss:         {first['total']:.5f} -> {last['total']:.5f}")
    print(f"   Checkpoint:   {result.final_checkpoint}")
    return 0


def cmd_stream(args, argv: Sequence[str]) -> int:
    started, clock = _now(), time.perf_counter()
    policy = CachePolicy.parse(args.policy)
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    seq = read_dataset(args.scene)
    tokens = model.cfg.num_tokens

    rows: List[Dict] = []
    tick = [time.perf_counter()]

    def on_frame(prediction, session) -> None:
        latency = (time.perf_counter() - tick[0]) * 1000.0
        if args.dump_pred:
            write_prediction(args.dump_pred, prediction.t, prediction.x_local.points, prediction.c_local,
                             prediction.x_global.points, prediction.c_global, prediction.pose)
        attended = session.last_attended_tokens
        if session.finalized and policy.kind == PolicyKind.FULL_ATTENTION and len(seq) > 1:
            attended = attended_token_count(policy, max(prediction.t, 2), tokens, len(seq))
        rows.append({
            "frame": prediction.t,
            "wall_ms": latency,
            "attended_tokens": attended,
            "resident_tokens": session.resident_tokens(),
            "final": policy.kind != PolicyKind.FULL_ATTENTION or session.finalized,
        })
        logger.debug(f"Frame {prediction.t}: {latency:.1f} ms, {session.last_attended_tokens} attended tokens")
        tick[0] = time.perf_counter()

    predictions = model.stream([f.rgb for f in seq.frames], policy, on_frame=on_frame)

    out_dir = args.dump_pred or os.path.dirname(os.path.abspath(args.stats or args.ckpt))
    if args.stats:
        stats = pd.DataFrame(rows)
        stats["expected_tokens"] = [
            attended_token_count(policy, t, tokens, len(seq)) if t > 1 else 0 for t in stats["frame"]
        ]
        os.makedirs(os.path.dirname(os.path.abspath(args.stats)), exist_ok=True)
        stats.to_csv(args.stats, index=False)
    write_manifest(out_dir, "stream", argv, {"policy": str(policy), "scene": args.scene, "ckpt": args.ckpt,
                                             "model": model.cfg.model_dump(mode="json")},
                   model.cfg.seed, started, {"total_s": time.perf_counter() - clock})
    banner("STREAMING INFERENCE")
    print(f"   Policy:          {policy}")
    print(f"   Frames:          {len(predictions)}")
    print(f"   Peak resident:   {max((r['resident_tokens'] for r in rows), default=0)} tokens")
    return 0


def cmd_eval(args, argv: Sequence[str]) -> int:
    started, clock = _now(), time.perf_counter()
    try:
        mode = DepthAlignment(args.depth_align)
    except ValueError:
        raise ConfigError(f"Unknown depth alignment '{args.depth_align}'")
    report = evaluate_directory(args.scene, args.pred, mode, args.min_confidence)
    out = args.out or os.path.join(args.pred, "metrics.json")
    write_metrics(report, out)
    write_manifest(os.path.dirname(os.path.abspath(out)), "eval", argv,
                   {"scene": args.scene, "pred": args.pred, "depth_align": mode.value,
                    "min_confidence": args.min_confidence}, 0, started,
                   {"total_s": time.perf_counter() - clock})
    banner("EVALUATION")
    print(report.model_dump_json(indent=2))
    return 0


def bench_policy(model: StreamingReconstructor, policy: CachePolicy, n_frames: int,
                 rng: np.random.Generator) -> List[BenchRecord]:
    """Stream n_frames random images and time every ingest."""
    height, width = model.cfg.image_size
    session = model.new_session(policy)
    records = []
    for t in range(1, n_frames + 1):
        rgb = rng.random((height, width, 3), dtype=np.float32)
        began = time.perf_counter()
        session.ingest_frame(rgb)
        wall_ms = (time.perf_counter() - began) * 1000.0
        records.append(BenchRecord(policy=str(policy), n_frames=n_frames, frame=t, wall_ms=wall_ms,
                                   attended_tokens=session.last_attended_tokens,
                                   resident_tokens=session.resident_tokens()))
    began = time.perf_counter()
    session.finalize()
    logger.debug(f"{policy} N={n_frames}: finalize took {(time.perf_counter() - began) * 1000.0:.1f} ms")
    return records


def cmd_bench(args, argv: Sequence[str]) -> int:
    started, clock = _now(), time.perf_counter()
    file_cfg = load_config_file(args.config)
    if args.ckpt:
        model = load_checkpoint(args.ckpt).build_model()
    else:
        model = StreamingReconstructor(ModelConfig.model_validate(file_cfg.get("model", {})).check())
    policies = [CachePolicy.parse(p) for p in (args.policies.split(",") if args.policies else BENCH_POLICIES)]
    sizes = [int(n) for n in args.sizes.split(",")] if args.sizes else list(BENCH_SIZES)
    rng = np.random.default_rng(args.seed or 0)

    records = []
    for policy in policies:
        for n in sizes:
            records.extend(bench_policy(model, policy, n, rng))
            logger.info(f"Benchmarked {policy} over {n} frames")

    out = args.out or os.path.join(config.RUNS_DIR, "bench")
    os.makedirs(out, exist_ok=True)
    table = pd.DataFrame([r.model_dump() for r in records])
    table.to_csv(os.path.join(out, "bench.csv"), index=False)
    summary = table.groupby(["policy", "n_frames"]).agg(
        mean_ms=("wall_ms", "mean"), last_ms=("wall_ms", "last"),
        last_attended=("attended_tokens", "last"), peak_resident=("resident_tokens", "max"),
    ).reset_index()
    summary.to_csv(os.path.join(out, "bench_summary.csv"), index=False)
    write_manifest(out, "bench", argv, {"policies": [str(p) for p in policies], "sizes": sizes,
                                        "model": model.cfg.model_dump(mode="json")},
                   args.seed or 0, started, {"total_s": time.perf_counter() - clock})
    banner("CACHE SCALING BENCHMARK")
    print(summary.to_string(index=False))
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streampoint", description="Streaming 3D reconstruction toolkit")
    parser.add_argument("--log-level", default=config.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenegen", help="generate synthetic scene datasets")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--res")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--dynamic", action="store_true")
    p.add_argument("--metric", action="store_true")
    p.add_argument("--trajectory", choices=[t.value for t in Trajectory])
    p.add_argument("--out")
    p.set_defaults(handler=cmd_scenegen)

    p = sub.add_parser("train", help="train on generated scenes")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--policy")
    p.add_argument("--frames-min", type=int)
    p.add_argument("--frames-max", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--log-path")
    p.add_argument("--resume")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("stream", help="streaming inference over one scene")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--policy", default="causal")
    p.add_argument("--dump-pred")
    p.add_argument("--stats")
    p.set_defaults(handler=cmd_stream)

    p = sub.add_parser("eval", help="score prediction dumps against a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    p.add_argument("--depth-align", default=DepthAlignment.PER_FRAME_MEDIAN.value,
                   choices=[m.value for m in DepthAlignment])
    p.add_argument("--min-confidence", type=float, default=0.0)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", help="per-frame cost of each cache policy")
    p.add_argument("--config")
    p.add_argument("--ckpt")
    p.add_argument("--policies")
    p.add_argument("--sizes")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args, argv)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 2
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return 2
    except (StreamPointError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
