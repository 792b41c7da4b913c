"""Command-line entry points: synth | train | query | bench | serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .bench import BenchPlan, records_to_csv, render_chart_svg, run_benchmark, verify_speedup
from .errors import SplatfieldError, ValidationError
from .projection import CameraPose
from .query import QueryEmbedding, iou, rle_encode, segment
from .sparse_splat import query_pipeline
from .server import DEFAULT_PORT, DEFAULT_SIZE_CAP, ServeSession, render_query_overlay, serve
from .train import TrainConfig, TrainingBatch, train_field, write_loss_curve


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"environment variable {name} must be an integer, got {raw!r}")


def cmd_synth(args) -> int:
    spec = sio.SyntheticSpec(
        seed=args.seed,
        num_gaussians=args.gaussians,
        num_classes=args.classes,
        layout=args.layout,
        image_size=args.size,
        num_levels=args.levels,
        L=args.L,
        K=args.K,
        D=args.D,
        num_cameras=args.cameras,
    )
    bundle = sio.generate_synthetic(spec)
    paths = sio.write_bundle(args.out, bundle, with_targets=not args.no_targets)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def _load_batches(scene, targets_dir: Path):
    poses, holdout_idx = sio.load_camera_poses(targets_dir / "cameras.json")
    cfg = scene.config
    batches = []
    for j, pose in enumerate(poses):
        maps = []
        for lv in range(cfg.num_levels):
            fb = sio.load_framebuffer(targets_dir / "targets" / f"cam{j}_level{lv}.fbuf")
            maps.append(fb.data.astype(np.float64))
        batches.append(TrainingBatch(camera=pose.to_camera(), targets=np.stack(maps)))
    holdout = batches[holdout_idx]
    train_batches = [b for j, b in enumerate(batches) if j != holdout_idx]
    return train_batches, holdout


def cmd_train(args) -> int:
    scene = sio.load_scene(args.scene)
    targets_dir = Path(args.targets)
    if not (targets_dir / "cameras.json").exists():
        print(f"error: no cameras.json under {targets_dir}", file=sys.stderr)
        return 2
    batches, holdout = _load_batches(scene, targets_dir)
    config = TrainConfig(lr_logits=args.lr_logits, lr_codebook=args.lr_codebook)
    result = train_field(
        scene, batches, args.iters, config, seed=args.seed, holdout=holdout
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sio.save_scene(out / "scene.lsv2", result.scene)
    write_loss_curve(out / "loss.csv", result.loss_curve)
    print(f"scene: {out / 'scene.lsv2'}")
    print(f"loss curve: {out / 'loss.csv'} ({len(result.loss_curve)} rows)")
    if result.loss_curve:
        print(f"loss: {result.initial_loss:.6g} -> {result.final_loss:.6g}")
        print(
            f"holdout: {result.holdout_initial:.6g} -> {result.holdout_final:.6g}"
        )
    return 0


def _camera_from_args(args, bundle_dir: Path | None) -> CameraPose:
    if args.camera_index is not None:
        if bundle_dir is None:
            raise ValidationError("--camera-index requires --cameras")
        poses, _ = sio.load_camera_poses(bundle_dir)
        return poses[args.camera_index]
    pos = tuple(float(v) for v in args.cam_pos.split(","))
    look = tuple(float(v) for v in args.look_at.split(","))
    return CameraPose(
        position=pos, look_at=look, fov_y_deg=args.fov,
        width=args.width, height=args.height,
    )


def cmd_query(args) -> int:
    scene = sio.load_scene(args.scene)
    qs = sio.load_query_set(args.queries)
    if args.list_queries:
        for name in qs.names():
            print(name)
        return 0
    if args.query is None and args.vector_file is None:
        print("error: give --query NAME or --vector-file FILE", file=sys.stderr)
        return 2
    if args.query is not None:
        try:
            query = qs.get(args.query)
        except ValidationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    else:
        vec = np.asarray(json.loads(Path(args.vector_file).read_text()), dtype=np.float64)
        query = QueryEmbedding(name=f"<{args.vector_file}>", vector=vec)

    pose = _camera_from_args(args, Path(args.cameras) if args.cameras else None)
    cam = pose.to_camera()
    level = None if args.level == "auto" else int(args.level)
    result = query_pipeline(
        scene, cam, query, qs.canonicals, window=args.window, level=level,
        workers=_env_int("SPLATFIELD_THREADS", 1),
    )
    seg = segment(result.chosen)

    record = {
        "query": result.query,
        "level": result.level,
        "point": [int(result.point[0]), int(result.point[1])],
        "mask_rle": rle_encode(seg.mask),
        "score_stats": {
            "min": float(result.chosen.data.min()),
            "max": float(result.chosen.data.max()),
            "mean": float(result.chosen.data.mean()),
        },
        "timings_ms": result.timings.as_dict(),
        "settings": {
            "level_mode": args.level,
            "window": args.window,
            "threshold": seg.threshold,
            "degenerate_mask": seg.degenerate,
            "camera": pose.to_dict(),
        },
    }
    gt_rel = qs.gt_mask_paths.get(query.name)
    if gt_rel is not None:
        gt_path = Path(args.queries).parent / gt_rel
        if gt_path.exists():
            from PIL import Image

            gt = np.asarray(Image.open(gt_path)) > 127
            if gt.shape == seg.mask.shape:
                record["iou_vs_gt"] = iou(seg.mask, gt)

    out_text = json.dumps(record, indent=1)
    if args.out:
        Path(args.out).write_text(out_text + "\n")
        print(f"result: {args.out}")
    else:
        print(out_text)

    if args.overlay:
        session = ServeSession(scene=scene, query_set=qs)
        Path(args.overlay).write_bytes(render_query_overlay(session, pose, result))
        print(f"overlay: {args.overlay}")
    return 0


def cmd_bench(args) -> int:
    plan = BenchPlan(
        seed=args.seed,
        gaussians=args.gaussians,
        classes=args.classes,
        image_size=args.size,
        feature_dim=args.D,
        l_sweep=tuple(int(v) for v in args.l_sweep.split(",")),
        k_sweep=tuple(int(v) for v in args.k_sweep.split(",")),
        sweep_levels=args.levels,
        repetitions=args.reps,
        warmup=args.warmup,
        include_speedup_cells=not args.no_speedup_cells,
        max_render_elements=args.memory_cap,
    )
    records = run_benchmark(plan, progress=lambda msg: print(msg, file=sys.stderr))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    workers = _env_int("SPLATFIELD_THREADS", 1)
    (out / "bench.csv").write_text(records_to_csv(records, workers=workers))
    (out / "bench.svg").write_text(render_chart_svg(records))
    print(f"csv: {out / 'bench.csv'}")
    print(f"chart: {out / 'bench.svg'}")
    if not args.no_speedup_cells:
        report = verify_speedup(records)
        print(("PASS " if report.passed else "FAIL ") + report.message)
    return 0


def cmd_serve(args) -> int:
    scene = sio.load_scene(args.scene)
    qs = sio.load_query_set(args.queries)
    default_pose = None
    if args.cameras:
        poses, _ = sio.load_camera_poses(args.cameras)
        if poses:
            default_pose = poses[0]
    session = ServeSession(
        scene=scene, query_set=qs, size_cap=args.size_cap, default_pose=default_pose,
        workers=_env_int("SPLATFIELD_THREADS", 1),
    )
    serve(session, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatfield",
        description="Sparse-coefficient semantic feature splatting toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled scene bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gaussians", type=int, default=200)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--layout", choices=("grid", "clustered"), default="grid")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--D", type=int, default=16)
    p.add_argument("--cameras", type=int, default=4)
    p.add_argument("--no-targets", action="store_true",
                   help="skip rendering training target maps")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the coefficient field and codebooks")
    p.add_argument("--scene", required=True)
    p.add_argument("--targets", required=True, help="bundle directory with cameras.json and targets/")
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr-logits", type=float, default=5e-3)
    p.add_argument("--lr-codebook", type=float, default=1e-3)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("query", help="run an open-vocabulary query against a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--query", default=None)
    p.add_argument("--vector-file", default=None)
    p.add_argument("--list-queries", action="store_true")
    p.add_argument("--cameras", default=None, help="cameras.json for --camera-index")
    p.add_argument("--camera-index", type=int, default=None)
    p.add_argument("--cam-pos", default="0,0,-3.4")
    p.add_argument("--look-at", default="0,0,0")
    p.add_argument("--fov", type=float, default=42.0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--level", default="auto", choices=("auto", "0", "1", "2"))
    p.add_argument("--window", type=int, default=11)
    p.add_argument("--out", default=None)
    p.add_argument("--overlay", default=None)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="dimension sweep + stage breakdown benchmarks")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gaussians", type=int, default=600)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--D", type=int, default=16)
    p.add_argument("--l-sweep", default="16,64,256")
    p.add_argument("--k-sweep", default="4")
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--reps", type=int, default=31)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--no-speedup-cells", action="store_true")
    p.add_argument("--memory-cap", type=int, default=1 << 27,
                   help="render budget in buffer elements; small values force OOM cells")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="serve the interactive query API")
    p.add_argument("--scene", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--cameras", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--size-cap", type=int, default=DEFAULT_SIZE_CAP)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve" and args.port is None:
        args.port = _env_int("SPLATFIELD_PORT", DEFAULT_PORT)
    try:
        return args.func(args)
    except SplatfieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
