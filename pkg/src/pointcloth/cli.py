"""Command-line surface: dataset generation, training, evaluation, animation,
template export, and the seam continuity study.

Every subcommand accepts --seed and --out-dir; train options mirror
TrainConfig and can also come from a JSON file (explicit flags win).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .body import HumanoidConfig, build_humanoid
from .meshio import load_checkpoint
from .model import ClothModel
from .synthdata import (
    Dataset,
    generate_dataset,
    jacket_spec,
    load_dataset,
    loose_spec,
    sample_poses,
    skirt_spec,
)
from .train import (
    TrainConfig,
    build_model,
    evaluate,
    export_cloud,
    export_template,
    train,
)
from .uvgrid import humanoid_atlas, seam_study

OUTFIT_PRESETS = {"jacket": jacket_spec, "skirt": skirt_spec,
                  "loose": loose_spec}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed")
    parser.add_argument("--out-dir", type=Path, default=None,
                        help="directory for generated files")


def _need_out_dir(args) -> Path:
    if args.out_dir is None:
        raise SystemExit("error: --out-dir is required for this command")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    return args.out_dir


def _body_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--resolution", type=float, default=1.0)
    parser.add_argument("--height", type=float, default=1.75)
    parser.add_argument("--bulk", type=float, default=1.0)


def _atlas_for(dataset: Dataset):
    if dataset.body_params is None:
        raise SystemExit("error: manifest lacks body_params; the UV baseline "
                         "needs the procedural body's parameters to rebuild "
                         "its atlas")
    return humanoid_atlas(HumanoidConfig(**dataset.body_params))


def _train_config(args) -> TrainConfig:
    doc = {}
    if args.config is not None:
        doc = json.loads(Path(args.config).read_text())
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
        "points_per_step": args.points_per_step,
        "scan_budget": args.scan_budget,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    doc["seed"] = args.seed
    if args.merge_decoders:
        doc["merge_decoders"] = True
    if args.uv_feature_baseline:
        doc["uv_feature_baseline"] = True
    if args.no_garment_to_pose_decoder:
        doc["garment_to_pose_decoder"] = False
    if args.template_data_term:
        doc["template_data_term"] = True
    if args.desk and "epochs" not in doc:
        doc["epochs"] = 60
    return TrainConfig.from_json_dict(doc)


def cmd_gen_data(args) -> int:
    out = _need_out_dir(args)
    specs = []
    for name in args.outfits.split(","):
        name = name.strip()
        if name not in OUTFIT_PRESETS:
            raise SystemExit(f"error: unknown outfit preset {name!r}; "
                             f"choose from {sorted(OUTFIT_PRESETS)}")
        specs.append(OUTFIT_PRESETS[name]())
    params = {"resolution": args.resolution, "height": args.height,
              "bulk": args.bulk}
    body = build_humanoid(HumanoidConfig(**params))
    manifest = generate_dataset(
        body, specs, out, pose_count=args.poses, split=args.split,
        points_per_scan=args.points, seed=args.seed,
        max_angle=args.max_angle, body_params=params)
    print(f"wrote {len(manifest['scans'])} scans to {out / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    out = _need_out_dir(args)
    dataset = load_dataset(args.data)
    config = _train_config(args)
    atlas = _atlas_for(dataset) if config.uv_feature_baseline else None
    model = build_model(dataset.body, config, atlas=atlas)
    result = train(model, dataset, config, out_dir=out)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss log:   {result.log_path}")
    print(f"validation loss {result.initial_val:.4f} -> {result.final_val:.4f}")
    return 0


def _load_model(args) -> tuple[ClothModel, Dataset]:
    dataset = load_dataset(args.data)
    _, meta = load_checkpoint(args.checkpoint)
    atlas = None
    if meta.get("config", {}).get("uv_features"):
        atlas = _atlas_for(dataset)
    model = ClothModel.load(args.checkpoint, dataset.body, atlas=atlas)
    return model, dataset


def cmd_eval(args) -> int:
    model, dataset = _load_model(args)
    report = evaluate(model, dataset, points=args.points, split=args.split,
                      seed=args.seed)
    doc = report.to_json_dict()
    print(json.dumps(doc, indent=1))
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        path = args.out_dir / "eval.json"
        path.write_text(json.dumps(doc, indent=1))
        print(f"wrote {path}")
    return 0


def cmd_animate(args) -> int:
    out = _need_out_dir(args)
    model, dataset = _load_model(args)
    if args.outfit not in dataset.outfits:
        raise SystemExit(f"error: outfit {args.outfit!r} not in manifest")
    poses = sample_poses(dataset.body, args.frames, args.seed,
                         max_angle=args.max_angle)
    clouds = model.animate(poses, args.outfit, count=args.points,
                           seed=args.seed)
    for i, cloud in enumerate(clouds):
        export_cloud(cloud, out / f"frame_{i:04d}.ply")
    print(f"wrote {len(clouds)} frames to {out}")
    return 0


def cmd_export_template(args) -> int:
    out = _need_out_dir(args)
    model, dataset = _load_model(args)
    if args.outfit not in dataset.outfits:
        raise SystemExit(f"error: outfit {args.outfit!r} not in manifest")
    path = out / f"template_{args.outfit}.ply"
    export_template(model, args.outfit, path, count=args.points,
                    seed=args.seed)
    print(f"wrote {path}")
    return 0


def cmd_seam_study(args) -> int:
    config = HumanoidConfig(resolution=args.resolution, height=args.height,
                            bulk=args.bulk)
    body = build_humanoid(config)
    atlas = humanoid_atlas(config)
    report = seam_study(body, atlas, grid_resolution=args.grid_resolution,
                        num_points=args.points, seed=args.seed)
    print(json.dumps(report, indent=1))
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        path = args.out_dir / "seam_study.json"
        path.write_text(json.dumps(report, indent=1))
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointcloth",
        description="Pose-dependent clothed-human deformation on a "
                    "procedural body")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic scan dataset")
    _common(p)
    _body_args(p)
    p.add_argument("--outfits", default="jacket", help="comma-separated presets")
    p.add_argument("--poses", type=int, default=100)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--points", type=int, default=4096)
    p.add_argument("--max-angle", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a model to a dataset")
    _common(p)
    p.add_argument("--data", required=True, help="path to manifest.json")
    p.add_argument("--config", default=None, help="TrainConfig JSON file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--points-per-step", type=int, default=None)
    p.add_argument("--scan-budget", type=int, default=None)
    p.add_argument("--desk", action="store_true",
                   help="desk-scale schedule (60 epochs)")
    p.add_argument("--merge-decoders", action="store_true",
                   help="ablation: single displacement head, no template")
    p.add_argument("--uv-feature-baseline", action="store_true",
                   help="ablation: seamed UV-grid feature lookup")
    p.add_argument("--no-garment-to-pose-decoder", action="store_true",
                   help="ablation: wrinkle head sees pose features only")
    p.add_argument("--template-data-term", action="store_true",
                   help="ablation: also fit the bare template to scans")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out metrics for a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--points", type=int, default=8192)
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("animate", help="render a pose sequence as PLY frames")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--outfit", required=True)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--points", type=int, default=8192)
    p.add_argument("--max-angle", type=float, default=0.5)
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("export-template",
                       help="write the learned garment template cloud")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--outfit", required=True)
    p.add_argument("--points", type=int, default=8192)
    p.set_defaults(func=cmd_export_template)

    p = sub.add_parser("seam-study",
                       help="compare surface vs UV feature continuity")
    _common(p)
    _body_args(p)
    p.add_argument("--grid-resolution", type=int, default=64)
    p.add_argument("--points", type=int, default=1000)
    p.set_defaults(func=cmd_seam_study)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
