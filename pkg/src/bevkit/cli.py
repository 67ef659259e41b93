"""Operator-facing command line tying the pipeline together.

Subcommands: preprocess, subsample, decode, eval, curve, inspect, plus
loss-fixtures (the golden-file emitter of the reference losses). Every
command is deterministic for a fixed seed and fixed inputs, independent of
the worker count.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment as aug
from .config import PipelineConfig
from .decode import decode_maps, read_proposals, write_proposals
from .evaluate import ap_vs_layers, curve_to_csv, evaluate_detections
from .exchange import (SampleManifest, TensorRecord, grid_from_dict,
                       grid_to_dict, read_tensor, write_tensor)
from .kitti import (GroundTruthObject, estimate_layers, read_calibration,
                    read_labels, read_velodyne, write_velodyne)
from .losses import write_loss_fixtures
from .targets import encode_targets
from .voxels import FEATURE_LAYOUT, encode_sample

LABEL_TENSOR_FIELDS = ("class_id", "x", "y", "z", "h", "w", "l", "theta")


@dataclass
class SamplePaths:
    sample_id: str
    velodyne: Path
    image: Path
    calib: Path
    label: Path | None


def discover_samples(dataset_dir: Path, split_file: Path | None) -> list[SamplePaths]:
    velodyne_dir = dataset_dir / "velodyne"
    if not velodyne_dir.is_dir():
        raise FileNotFoundError(f"no velodyne/ directory under {dataset_dir}")
    if split_file is not None:
        ids = [line.strip() for line in split_file.read_text().splitlines() if line.strip()]
    else:
        ids = sorted(p.stem for p in velodyne_dir.glob("*.bin"))
    samples = []
    for sid in ids:
        label = dataset_dir / "label_2" / f"{sid}.txt"
        samples.append(SamplePaths(
            sample_id=sid,
            velodyne=velodyne_dir / f"{sid}.bin",
            image=dataset_dir / "image_2" / f"{sid}.png",
            calib=dataset_dir / "calib" / f"{sid}.txt",
            label=label if label.exists() else None,
        ))
    return samples


def labels_to_array(labels: list[GroundTruthObject]) -> np.ndarray:
    rows = [[o.class_id, o.x, o.y, o.z, o.h, o.w, o.l, o.theta] for o in labels]
    return np.array(rows, dtype=np.float64).reshape(-1, len(LABEL_TENSOR_FIELDS))


def labels_from_array(arr: np.ndarray) -> list[GroundTruthObject]:
    return [GroundTruthObject(int(r[0]), *map(float, r[1:])) for r in arr.reshape(-1, 8)]


def _process_sample(paths: SamplePaths, index: int, config: PipelineConfig) -> dict:
    """Ingest, optionally augment, encode one sample. Returns everything to write."""
    image = aug.load_image(paths.image)
    calib = read_calibration(paths.calib, image.shape[1], image.shape[0])
    cloud = estimate_layers(read_velodyne(paths.velodyne), config.num_layers)
    labels = read_labels(paths.label, calib) if paths.label else []
    num_source_points = len(cloud)

    record: dict = {"seed": config.seed, "sample_index": index, "enabled": config.augment}
    if config.augment:
        rng = aug.RngStream(config.seed, index)
        lo, hi = config.keep_fraction_range
        fraction = float(rng.gen.uniform(lo, hi))
        layers = aug.choose_layers(config.num_layers, fraction, rng)
        cloud = aug.keep_layers(cloud, layers)
        rect = aug.select_crop(labels, calib, rng, config.patch_width, config.patch_height)
        image, cloud, calib = aug.apply_crop(image, cloud, calib, rect)
        # drop labels whose center projects outside the patch: neither the
        # image nor the surviving points carry evidence for them
        kept_labels = []
        for obj in labels:
            pixels, valid = calib.project_points(np.array([[obj.x, obj.y, obj.z]]))
            if valid[0]:
                kept_labels.append(obj)
        labels = kept_labels
        image, cloud, calib, labels, flipped = aug.horizontal_flip(
            image, cloud, calib, labels, rng)
        image, jitter = aug.color_jitter(image, rng)
        record.update({
            "keep_fraction": fraction,
            "layers_kept": [int(l) for l in layers],
            "crop": {"x0": rect.x0, "y0": rect.y0,
                     "width": rect.width, "height": rect.height},
            "flip": flipped,
            "jitter": {"brightness": jitter[0], "contrast": jitter[1],
                       "saturation": jitter[2]},
        })

    encoded = encode_sample(cloud, config.grid_in(), calib,
                            require_in_image=config.require_in_image)
    targets = encode_targets(labels, config.grid_out())
    return {
        "sample_id": paths.sample_id,
        "tensors": {
            "features": TensorRecord("features", encoded.features.astype("<f4")),
            "bev_indices": TensorRecord("bev_indices", encoded.bev_indices.astype("<i4")),
            "image_coords": TensorRecord("image_coords", encoded.image_coords.astype("<f4")),
            "cls_target": TensorRecord("cls_target", targets.cls.astype("<f4")),
            "reg_target": TensorRecord("reg_target", targets.reg.astype("<f4")),
            "image": TensorRecord("image", image.astype("|u1")),
            "labels": TensorRecord("labels", labels_to_array(labels)),
        },
        "augmentation": record,
        "provenance": {
            "velodyne": str(paths.velodyne),
            "image": str(paths.image),
            "calib": str(paths.calib),
            "label": str(paths.label) if paths.label else None,
            "num_source_points": num_source_points,
            "num_encoded_points": len(cloud),
            "skipped_labels": targets.skipped,
            "collisions": targets.collisions,
        },
        "num_voxels": len(encoded),
        "skipped_labels": targets.skipped,
    }


def _write_sample(result: dict, out_dir: Path, config: PipelineConfig) -> None:
    sid = result["sample_id"]
    tensor_paths = {}
    for role, record in result["tensors"].items():
        filename = f"{sid}.{role}.tensor"
        write_tensor(record, out_dir / filename)
        tensor_paths[role] = filename
    echoed = config.to_dict()
    echoed.pop("workers")  # execution knob; outputs must not depend on it
    manifest = SampleManifest(
        sample_id=sid,
        tensors=tensor_paths,
        grid=grid_to_dict(config.grid_in(), config.grid_out()),
        augmentation=result["augmentation"],
        provenance={**result["provenance"], "config": echoed},
        feature_layout=FEATURE_LAYOUT,
    )
    manifest.save(out_dir / f"{sid}.json")


def cmd_preprocess(args) -> int:
    config = PipelineConfig.load(args.config, {
        "seed": args.seed, "workers": args.workers,
        "augment": args.augment if args.augment is not None else None,
        "require_in_image": (not args.lidar_only) if args.lidar_only else None,
    })
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = discover_samples(Path(args.dataset), Path(args.split) if args.split else None)

    failures: list[tuple[str, str]] = []
    voxel_counts: list[int] = []
    skipped_total = 0
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        futures = {pool.submit(_process_sample, paths, i, config): paths.sample_id
                   for i, paths in enumerate(samples)}
        done = {}
        for future in concurrent.futures.as_completed(futures):
            sid = futures[future]
            try:
                done[sid] = future.result()
            except Exception as exc:  # per-sample failure, keep going
                failures.append((sid, str(exc)))
    # write in id order so the output layout never depends on scheduling
    for paths in samples:
        if paths.sample_id in done:
            result = done[paths.sample_id]
            _write_sample(result, out_dir, config)
            voxel_counts.append(result["num_voxels"])
            skipped_total += result["skipped_labels"]

    ok = len(samples) - len(failures)
    mean_voxels = float(np.mean(voxel_counts)) if voxel_counts else 0.0
    print(f"preprocessed {ok}/{len(samples)} samples"
          f" | mean voxels/sample {mean_voxels:.1f}"
          f" | skipped labels {skipped_total}")
    for sid, message in failures:
        print(f"FAILED {sid}: {message}", file=sys.stderr)
    return 1 if failures else 0


def cmd_subsample(args) -> int:
    cloud = read_velodyne(args.input)
    rng = aug.RngStream(args.seed, 0)
    if args.mode == "layers":
        cloud = estimate_layers(cloud, args.num_layers)
        cloud = aug.drop_layers(cloud, args.fraction, rng)
    elif args.mode == "stride":
        # deterministic every-k-th-layer selection (the evaluation protocol)
        cloud = estimate_layers(cloud, args.num_layers)
        target = int(round(args.fraction * args.num_layers))
        cloud, _ = aug.stride_layer_subset(cloud, target)
    else:
        cloud = aug.uniform_subsample(cloud, args.fraction, rng)
    write_velodyne(cloud, args.output)
    print(f"wrote {len(cloud)} points to {args.output}")
    return 0


def cmd_decode(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = SampleManifest.load(manifest_path)
    cls_map = manifest.read_tensor("cls_pred", manifest_path).array.astype(np.float64)
    reg_map = manifest.read_tensor("reg_pred", manifest_path).array.astype(np.float64)
    grid_out = grid_from_dict(manifest.grid, output=True)
    proposals = decode_maps(cls_map, reg_map, grid_out,
                            neighborhood=args.neighborhood, top_k=args.top_k)
    write_proposals(proposals, args.out)
    print(f"wrote {len(proposals)} proposals to {args.out}")
    return 0


def _gt_by_sample_from_manifests(manifest_dir: Path) -> dict[str, list[GroundTruthObject]]:
    gts = {}
    for path in sorted(manifest_dir.glob("*.json")):
        manifest = SampleManifest.load(path)
        arr = manifest.read_tensor("labels", path).array
        gts[manifest.sample_id] = labels_from_array(arr)
    return gts


def _gt_by_sample_from_kitti(labels_dir: Path, calib_dir: Path) -> dict[str, list[GroundTruthObject]]:
    gts = {}
    for path in sorted(labels_dir.glob("*.txt")):
        calib = read_calibration(calib_dir / path.name)
        gts[path.stem] = read_labels(path, calib)
    return gts


def _load_ground_truth(args) -> dict[str, list[GroundTruthObject]]:
    if args.manifests:
        return _gt_by_sample_from_manifests(Path(args.manifests))
    if not (args.labels and args.calib):
        raise SystemExit("need either --manifests or both --labels and --calib")
    return _gt_by_sample_from_kitti(Path(args.labels), Path(args.calib))


def _paired_samples(proposals_dir: Path, gts: dict[str, list[GroundTruthObject]]):
    det_ids = {p.stem for p in proposals_dir.glob("*.txt")}
    unmatched = sorted(det_ids.symmetric_difference(gts))
    pairs = [(read_proposals(proposals_dir / f"{sid}.txt"), gts[sid])
             for sid in sorted(det_ids & set(gts))]
    return pairs, unmatched


def cmd_eval(args) -> int:
    gts = _load_ground_truth(args)
    pairs, unmatched = _paired_samples(Path(args.proposals), gts)
    result = evaluate_detections(pairs, iou_thresh=args.iou)
    result.notes = {
        "gt_geometry": "tight axis-aligned hull of the rotated BEV footprint",
        "interpolation": "all-point precision envelope",
    }
    Path(args.out).write_text(result.to_json())
    if args.plot:
        from .plots import save_pr_curves

        save_pr_curves(result, args.plot)
    print(f"mean AP {result.mean_ap:.4f} over {len(pairs)} samples -> {args.out}")
    if unmatched:
        print("unmatched sample ids: " + ", ".join(unmatched), file=sys.stderr)
        return 1
    return 0


def cmd_curve(args) -> int:
    gts = _load_ground_truth(args)
    layer_counts = [int(t) for t in args.layer_counts.split(",")]
    root = Path(args.proposals_root)
    per_layer = {}
    missing = []
    exit_code = 0
    for count in layer_counts:
        layer_dir = root / str(count)
        if not layer_dir.is_dir():
            missing.append(count)
            continue
        pairs, unmatched = _paired_samples(layer_dir, gts)
        if unmatched:
            print(f"layer {count}: unmatched ids {', '.join(unmatched)}", file=sys.stderr)
            exit_code = 1
        per_layer[count] = pairs
    rows = ap_vs_layers(per_layer, [c for c in layer_counts if c in per_layer],
                        iou_thresh=args.iou)
    csv_text = curve_to_csv(rows)
    if missing:
        csv_text += "# missing layer counts: " + ",".join(str(c) for c in missing) + "\n"
        print(f"missing proposal directories for layer counts {missing}", file=sys.stderr)
        exit_code = 1
    Path(args.out_csv).write_text(csv_text)
    if args.out_svg:
        from .plots import save_layer_curves

        save_layer_curves(rows, args.out_svg)
    print(f"wrote {args.out_csv}")
    return exit_code


def cmd_inspect(args) -> int:
    path = Path(args.manifest)
    manifest = SampleManifest.load(path)
    print(f"sample {manifest.sample_id}")
    print(f"  feature layout: {manifest.feature_layout or 'n/a'}")
    for role in sorted(manifest.tensors):
        record = manifest.read_tensor(role, path)
        print(f"  {role:14s} {record.dtype:4s} {list(record.shape)}")
    if manifest.grid:
        grid = ", ".join(f"{k}={manifest.grid[k]}" for k in sorted(manifest.grid))
        print(f"  grid: {grid}")
    if manifest.augmentation:
        print(f"  augmentation: {json.dumps(manifest.augmentation, sort_keys=True)}")
    return 0


def cmd_loss_fixtures(args) -> int:
    written = write_loss_fixtures(args.out, count=args.count, seed=args.seed)
    print(f"wrote {len(written)} loss fixtures to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bevkit",
                                     description="LiDAR-camera BEV proposal pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="encode a KITTI-layout dataset into manifests")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--split", default=None, help="file with one sample id per line")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--augment", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--lidar-only", action="store_true",
                   help="keep voxels whose main point misses the image")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("subsample", help="reduce a velodyne scan by layers or points")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=("layers", "uniform", "stride"), required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-layers", type=int, default=64)
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("decode", help="turn a prediction manifest into proposals")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, default=20)
    p.add_argument("--neighborhood", type=int, default=3)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="average precision of proposals against labels")
    p.add_argument("--proposals", required=True, help="directory of <id>.txt files")
    p.add_argument("--manifests", default=None,
                   help="manifest directory carrying ground-truth labels")
    p.add_argument("--labels", default=None, help="KITTI label directory")
    p.add_argument("--calib", default=None, help="KITTI calibration directory")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", required=True, help="result JSON path")
    p.add_argument("--plot", default=None, help="optional PR-curve SVG path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curve", help="AP against the number of kept layers")
    p.add_argument("--proposals-root", required=True,
                   help="directory with one <layer_count>/ subdirectory per setting")
    p.add_argument("--layer-counts", required=True, help="comma separated, e.g. 64,32,16,8")
    p.add_argument("--manifests", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--calib", default=None)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-svg", default=None)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("inspect", help="print a manifest summary")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("loss-fixtures", help="emit golden loss fixtures for trainers")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_loss_fixtures)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
