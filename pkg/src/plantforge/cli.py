"""forge: command-line pipeline for synthetic plant clouds and evaluation.

Subcommands: convert, split, stats, gen-tree, scan, deform, group, eval,
protocol. Logs are line-delimited JSON on stderr; data goes to files only.
Exit codes: 0 success, 2 config/schema error, 3 data corruption,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import deform as dfm
from . import grouping as grp
from . import metrics as mtr
from . import protocol as proto
from .errors import ForgeError, InputError, SchemaError
from .formats import FORMATS, convert
from .mesh import TriMesh
from .treegen import GeneratorConfig, extract_stats, generate_population
from .vls import ScannerConfig, default_tls_positions, scan

_SUBPARSERS: dict[str, argparse.ArgumentParser] = {}


def _log(event: str, **fields) -> None:
    print(json.dumps({"event": event, **fields}, sort_keys=True),
          file=sys.stderr)


def _parse_kv(text: str, cast=float) -> dict:
    out = {}
    for part in text.split(","):
        if not part:
            continue
        key, _, value = part.partition("=")
        if not _:
            raise SchemaError(f"expected key=value, got {part!r}")
        out[key.strip()] = cast(value)
    return out


def _split_sample_path(path: str) -> tuple[Path, str]:
    p = Path(path)
    return (p.parent if p.parent != Path("") else Path(".")), p.name


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker budget (stages are deterministic "
                             "regardless of the value)")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file supplying defaults for this subcommand")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kw):
        p = sub.add_parser(name, **kw)
        _SUBPARSERS[name] = p
        return p

    p = add_parser("convert", help="convert a raw file to the standard format")
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--format", required=True, choices=FORMATS)
    p.add_argument("--map", dest="column_map", default=None,
                   help="field=column pairs, e.g. x=0,y=1,z=2,semantic=3")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--sample-id", required=True)
    p.add_argument("--manifest", type=Path, default=None,
                   help="register the sample in this manifest")
    _add_common(p)

    p = add_parser("split", help="write seed-deterministic dataset splits")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--ratios", required=True,
                   help="name=fraction pairs, e.g. train=0.75,test=0.25")
    p.add_argument("--stratify-by", default=None)
    p.add_argument("--out", type=Path, default=None,
                   help="output manifest path (default: in place)")
    _add_common(p)

    p = add_parser("stats", help="dataset statistics report")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--split", default=None)
    p.add_argument("--out", type=Path, default=None, help="JSON output path")
    _add_common(p)

    p = add_parser("gen-tree", help="generate synthetic tree models")
    p.add_argument("--bases", required=True, type=Path,
                   help="directory of standard-format base tree samples")
    p.add_argument("--count", type=int, default=150)
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--trunk-class", type=int, default=0)
    p.add_argument("--branch-class", type=int, default=1)
    p.add_argument("--out", required=True, type=Path)
    _add_common(p)

    p = add_parser("scan", help="virtual laser scan of a tree mesh")
    p.add_argument("--model", required=True, type=Path, help="mesh PLY path")
    p.add_argument("--resolution-deg", type=float, default=0.06)
    p.add_argument("--positions", type=int, default=4)
    p.add_argument("--standoff", type=float, default=2.0)
    p.add_argument("--elevation", default="-60,90",
                   help="elevation span in degrees, e.g. -60,90")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--max-range", type=float, default=100.0)
    p.add_argument("--out", required=True,
                   help="output sample path: <dir>/<sample_id>")
    _add_common(p)

    p = add_parser("deform", help="elastic deformation augmentation")
    p.add_argument("--in", dest="input", required=True,
                   help="input sample path: <dir>/<sample_id>")
    p.add_argument("--variants", type=int, default=10)
    p.add_argument("--voxel-size", type=float, default=0.001)
    p.add_argument("--force-bound", type=float, default=5.0)
    p.add_argument("--forces-per-variant", type=int, default=8)
    p.add_argument("--materials", type=Path, default=None,
                   help="JSON: class id -> {E, nu}; default: wood everywhere")
    p.add_argument("--out", required=True, type=Path)
    _add_common(p)

    p = add_parser("group", help="grouping-based instance segmentation")
    p.add_argument("--sample", required=True, help="sample id")
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--scores", required=True, type=Path)
    p.add_argument("--offsets", required=True, type=Path)
    p.add_argument("--params", required=True, type=Path,
                   help="JSON: {radius, score_threshold, min_points}")
    p.add_argument("--n-classes", type=int, default=None)
    p.add_argument("--manifest", type=Path, default=None,
                   help="supplies n_classes and instance classes")
    p.add_argument("--mode", choices=("shifted", "dual"), default="shifted")
    p.add_argument("--out", required=True, type=Path)
    _add_common(p)

    p = add_parser("eval", help="evaluate predictions against a split")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--split", default="test")
    p.add_argument("--pred-dir", required=True, type=Path,
                   help="directory with <id>.json (instances) and optional "
                        "<id>.sem (predicted semantics)")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--csv", type=Path, default=None,
                   help="also write per-class rows as CSV")
    p.add_argument("--no-throughput", action="store_true",
                   help="zero the timing fields for byte-reproducible reports")
    _add_common(p)

    p = add_parser("protocol", help="assemble sim-to-real experiment data")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--group-key", default="orchard")
    p.add_argument("--kb", type=int, default=6)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--synthetic-count", type=int, default=150)
    p.add_argument("--mode", choices=("surface", "vls"), default="surface")
    p.add_argument("--points-per-tree", type=int, default=20000)
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--resolution-deg", type=float, default=0.3)
    p.add_argument("--positions", type=int, default=4)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--out", required=True, type=Path)
    _add_common(p)
    return parser


def _apply_config(args: argparse.Namespace, parser_defaults: dict) -> None:
    """Config file values replace built-in defaults; explicit CLI flags win."""
    if getattr(args, "config", None) is None:
        return
    with open(args.config, "r", encoding="utf-8") as f:
        overrides = json.load(f)
    if not isinstance(overrides, dict):
        raise SchemaError("config file must contain a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise SchemaError(f"config key {key!r} unknown for this subcommand")
        if getattr(args, dest) == parser_defaults.get(dest):
            setattr(args, dest, value)


# ---------------------------------------------------------------------------
# Subcommand implementations


def cmd_convert(args) -> int:
    cmap = None
    if args.column_map:
        cast = (lambda v: v) if args.format == "ply" else (lambda v: int(v))
        cmap = _parse_kv(args.column_map, cast=cast)
    cloud = convert(args.input, args.format, cmap)
    ds.write_standard(cloud, args.out_dir, args.sample_id)
    if args.manifest is not None:
        manifest = ds.DatasetManifest.load(args.manifest)
        rel = (args.out_dir / args.sample_id).resolve().relative_to(
            args.manifest.resolve().parent)
        manifest.samples[args.sample_id] = str(rel)
        manifest.save(args.manifest)
    _log("convert", sample=args.sample_id, points=len(cloud))
    return 0


def cmd_split(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    ratios = _parse_kv(args.ratios, cast=float)
    result = ds.make_splits(manifest, ratios, stratify_by=args.stratify_by,
                            seed=args.seed)
    out = args.out or args.manifest
    result.save(out)
    _log("split", sizes={k: len(v) for k, v in result.splits.items()})
    return 0


def _distribution(values: np.ndarray) -> dict:
    if len(values) == 0:
        return {"count": 0}
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    return {"count": int(len(values)), "min": int(values.min()),
            "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": int(values.max())}


def cmd_stats(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    stats = ds.compute_stats(manifest, split=args.split)
    report = {"name": manifest.name, "samples": len(stats.samples),
              "classes": {}}
    for cid, cname in sorted(manifest.classes.items()):
        entry = {
            "points_per_sample": _distribution(stats.points_per_sample(cid)),
            "instances_per_sample": _distribution(stats.instances_per_sample(cid)),
        }
        extent = stats.mean_instance_extent(cid)
        if np.isfinite(extent):
            entry["mean_instance_extent"] = extent
        report["classes"][f"{cid}:{cname}"] = entry
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out is not None:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_gen_tree(args) -> int:
    base_files = sorted(args.bases.glob("*.points"))
    if not base_files:
        raise InputError(f"no standard samples under {args.bases}")
    bases = []
    for path in base_files:
        cloud = ds.load_standard(path.parent, path.stem)
        bases.append(extract_stats(cloud, trunk_class=args.trunk_class,
                                   branch_class=args.branch_class))
    trees = generate_population(bases, args.count, seed=args.seed,
                                max_order=args.max_order,
                                config=GeneratorConfig())
    args.out.mkdir(parents=True, exist_ok=True)
    for i, tree in enumerate(trees):
        tree.save(args.out, f"tree_{i:04d}")
    _log("gen-tree", bases=len(bases), trees=len(trees), out=str(args.out))
    return 0


def cmd_scan(args) -> int:
    mesh = TriMesh.load_ply(args.model)
    lo, hi = (float(v) for v in args.elevation.split(","))
    positions = default_tls_positions(mesh, args.positions, args.standoff)
    cfg = ScannerConfig(positions=positions,
                        angular_resolution=args.resolution_deg,
                        elevation_range=(lo, hi),
                        range_noise_sigma=args.noise_sigma,
                        max_range=args.max_range, seed=args.seed)
    cloud = scan(mesh, cfg)
    out_dir, sample_id = _split_sample_path(args.out)
    ds.write_standard(cloud, out_dir, sample_id)
    _log("scan", sample=sample_id, points=len(cloud),
         resolution_deg=args.resolution_deg)
    return 0


def cmd_deform(args) -> int:
    in_dir, sample_id = _split_sample_path(args.input)
    cloud = ds.load_standard(in_dir, sample_id)
    if args.materials is not None:
        with open(args.materials, "r", encoding="utf-8") as f:
            materials = dfm.MaterialMap.from_dict(json.load(f))
    else:
        present = np.unique(cloud.semantic[cloud.semantic >= 0])
        materials = dfm.MaterialMap({int(c): dfm.WOOD for c in present})
    variants = dfm.augment(cloud, args.variants, args.voxel_size, materials,
                           args.force_bound, seed=args.seed,
                           forces_per_variant=args.forces_per_variant)
    for v, variant in enumerate(variants):
        ds.write_standard(variant, args.out, f"{sample_id}_d{v:02d}")
    _log("deform", sample=sample_id, variants=len(variants))
    return 0


def cmd_group(args) -> int:
    cloud = ds.load_standard(args.data_dir, args.sample)
    instance_classes = None
    n_classes = args.n_classes
    if args.manifest is not None:
        manifest = ds.DatasetManifest.load(args.manifest)
        n_classes = manifest.n_classes
        instance_classes = manifest.instance_classes
    if n_classes is None:
        raise InputError("supply --n-classes or --manifest")
    scores = np.fromfile(args.scores, dtype="<f4")
    if scores.size % n_classes:
        raise SchemaError(f"scores size {scores.size} not divisible by "
                          f"{n_classes} classes")
    offsets = np.fromfile(args.offsets, dtype="<f4").reshape(-1, 3)
    output = grp.ModelOutput(semantic_scores=scores.reshape(-1, n_classes),
                             offsets=offsets)
    with open(args.params, "r", encoding="utf-8") as f:
        params = grp.GroupingParams.from_dict(json.load(f))
    preds = grp.group(cloud, output, params,
                      instance_classes=instance_classes, mode=args.mode)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump([p.to_dict() for p in preds], f, sort_keys=True)
        f.write("\n")
    _log("group", sample=args.sample, predictions=len(preds))
    return 0


def cmd_eval(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    reports = []
    started = time.perf_counter()
    for sid in manifest.split_ids(args.split):
        path = manifest.sample_path(sid)
        gt = ds.load_standard(path.parent, path.name)
        t0 = time.perf_counter()
        sem_result = None
        sem_path = args.pred_dir / f"{sid}.sem"
        if sem_path.exists():
            pred_sem = np.fromfile(sem_path, dtype="<i4")
            sem_result = mtr.semantic_eval(gt, pred_sem,
                                           n_classes=manifest.n_classes)
        inst_result = None
        pred_path = args.pred_dir / f"{sid}.json"
        if pred_path.exists():
            with open(pred_path, "r", encoding="utf-8") as f:
                preds = [grp.InstancePrediction.from_dict(d) for d in json.load(f)]
            inst_result = mtr.instance_eval(
                gt, preds, instance_classes=manifest.instance_classes)
        if sem_result is None and inst_result is None:
            raise InputError(f"no predictions for sample {sid!r} in {args.pred_dir}")
        reports.append(mtr.EvalReport.from_results(
            manifest.classes, sem_result, inst_result,
            wall_clock_s=time.perf_counter() - t0))
    final = mtr.aggregate(reports)
    final.wall_clock_s = time.perf_counter() - started
    if args.no_throughput:
        final.wall_clock_s = 0.0
    final.save(args.out)
    if args.csv is not None:
        _write_csv(final, args.csv)
    _log("eval", samples=final.sample_count, miou=final.miou,
         map=final.map_strict)
    return 0


def _write_csv(report: mtr.EvalReport, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["class_id", "class_name", "precision", "recall",
                         "f1", "iou", "ap25", "ap50", "ap"])
        for cid, cname in sorted(report.classes.items()):
            sem = report.semantic.get(cid, {})
            inst = report.instance.get(cid, {})
            writer.writerow([
                cid, cname,
                sem.get("precision"), sem.get("recall"), sem.get("f1"),
                sem.get("iou"), inst.get("ap25"), inst.get("ap50"),
                inst.get("ap"),
            ])
        writer.writerow(["mean", "", "", "", "", report.miou, report.map25,
                         report.map50, report.map_strict])


def cmd_protocol(args) -> int:
    manifest = ds.DatasetManifest.load(args.manifest)
    config = proto.ProtocolConfig(
        group_key=args.group_key, kb=args.kb, n_folds=args.folds,
        synthetic_count=args.synthetic_count, synthetic_mode=args.mode,
        points_per_tree=args.points_per_tree, max_order=args.max_order,
        resolution_deg=args.resolution_deg, n_positions=args.positions,
        noise_sigma=args.noise_sigma, seed=args.seed)
    summary = proto.run_simreal_protocol(manifest, config, args.out)
    _log("protocol", folds=summary["n_folds"], kb=summary["kb"],
         ratio=summary["kb_test_ratio"])
    return 0


_COMMANDS = {
    "convert": cmd_convert,
    "split": cmd_split,
    "stats": cmd_stats,
    "gen-tree": cmd_gen_tree,
    "scan": cmd_scan,
    "deform": cmd_deform,
    "group": cmd_group,
    "eval": cmd_eval,
    "protocol": cmd_protocol,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    defaults = {action.dest: action.default
                for action in _SUBPARSERS[args.command]._actions}
    try:
        _apply_config(args, defaults)
        return _COMMANDS[args.command](args)
    except ForgeError as exc:
        _log("error", kind=type(exc).__name__, message=str(exc))
        return exc.exit_code
    except FileNotFoundError as exc:
        _log("error", kind="FileNotFoundError", message=str(exc))
        return 2
    except json.JSONDecodeError as exc:
        _log("error", kind="JSONDecodeError", message=str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
