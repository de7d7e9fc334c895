"""Command-line pipeline: synth -> prep -> split -> train -> embed -> eval.

Exit codes: 0 on success, 1 on a domain error (bad inputs, failed stage),
2 on usage errors. All artifacts are written atomically; stages refuse to run
when a crashed previous run left partial outputs in the target directory.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import PipelineConfig, load_config
from .contrastive import DualEncoder, Temperature, TrainConfig, train_toy
from .errors import NisslkitError
from .evaluation import (
    classify_zero_shot,
    coarse_segmentation,
    multi_label_hit_rate,
    retrieval_table,
    segmentation_agreement,
    weighted_prf,
)
from .geometry import Polygon, SizeFilter
from .manifest import (
    check_no_partial_outputs,
    read_jsonl,
    write_json,
    write_jsonl,
)
from .nomenclature import (
    default_policy_path,
    demo_taxonomy_path,
    parse_nomenclature,
    parse_policy,
    resolved_label_set,
)
from .regions import CropConfig, RegionImageRecord, extract_region_images, pad_to_square
from .sections import (
    find_annotations,
    load_annotation,
    load_image_array,
    save_image_array,
    save_section,
)
from .serialization import read_checkpoint, write_checkpoint, write_embeddings
from .splitter import split_tiles, split_whole_region
from .synthdata import (
    SynthRegion,
    SynthSpec,
    demo_suite,
    feature_extract,
    generate_section,
    partition_suite,
)
from .tiler import TileRecord, leaf_polygons_from_section, tile_section

log = logging.getLogger("nisslkit")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _load_taxonomy(args):
    taxonomy = Path(args.taxonomy) if args.taxonomy else demo_taxonomy_path()
    policy_path = Path(args.policy) if args.policy else default_policy_path()
    tree = parse_nomenclature(taxonomy)
    policy = parse_policy(policy_path)
    policy.validate_against(tree)
    return tree, policy


def _read_region_manifest(path: Path) -> list[RegionImageRecord]:
    return [RegionImageRecord.from_json(row) for row in read_jsonl(path)]


def _read_tile_manifest(path: Path) -> list[TileRecord]:
    return [TileRecord.from_json(row) for row in read_jsonl(path)]


def _record_features(records: list[RegionImageRecord], base_dir: Path,
                     input_dim: int) -> np.ndarray:
    feats = []
    for rec in records:
        if not rec.image_path:
            raise NisslkitError(
                f"record {rec.section_id}/{rec.label} has no image to featurize")
        image = load_image_array(base_dir / rec.image_path)
        feats.append(feature_extract(pad_to_square(image, input_dim)))
    return np.stack(feats)


def _captions(records: list[RegionImageRecord], mode: str) -> list[str]:
    if mode not in ("single", "multi"):
        raise NisslkitError(f"unknown caption_mode {mode!r}")
    return [rec.caption(multi=(mode == "multi")) for rec in records]


def _encoder_from_checkpoint(path: Path) -> tuple[DualEncoder, Temperature]:
    w_img, w_txt, logit_scale = read_checkpoint(path)
    return DualEncoder(w_img, w_txt), Temperature(logit_scale)


def _label_embeddings(encoder: DualEncoder, labels: list[str]) -> dict[str, np.ndarray]:
    matrix = encoder.encode_text(labels)
    return {label: matrix[i] for i, label in enumerate(labels)}


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_parse_taxonomy(args, cfg: PipelineConfig) -> int:
    tree, policy = _load_taxonomy(args)
    labels = resolved_label_set(tree, policy)
    summary = {
        "nodes": len(tree),
        "roots": list(tree.roots),
        "max_depth": tree.max_depth(),
        "leaves": len(tree.leaves()),
        "distinct_labels": len(labels),
    }
    print(json.dumps(summary, indent=2))
    if args.labels_out:
        write_json(labels, args.labels_out)
        log.info("wrote %d labels to %s", len(labels), args.labels_out)
    return 0


def _parse_spec_file(path: Path) -> list[SynthSpec]:
    payload = yaml.safe_load(Path(path).read_text())
    specs = []
    for sec in payload.get("sections", []):
        regions = tuple(
            SynthRegion(
                name=r["name"],
                polygon=Polygon(r["polygon"], r.get("holes", [])),
                dot_density=float(r["dot_density"]),
                dot_radius=float(r["dot_radius"]),
                gray_level=int(r["gray_level"]),
            )
            for r in sec.get("regions", [])
        )
        specs.append(SynthSpec(
            section_id=str(sec["section_id"]),
            width=int(sec["width"]),
            height=int(sec["height"]),
            regions=regions,
            seed=int(sec.get("seed", 0)),
            resolution_um_per_px=float(sec.get("resolution_um_per_px", 16.0)),
        ))
    return specs


def _generate_and_save(item: tuple[SynthSpec, str]) -> str:
    spec, out_dir = item
    section = generate_section(spec)
    save_section(section, out_dir)
    return spec.section_id


def cmd_synth(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    check_no_partial_outputs(out_dir)
    if args.spec_file:
        specs = _parse_spec_file(Path(args.spec_file))
    elif args.demo_sections:
        maker = partition_suite if args.layout == "partition" else demo_suite
        specs = maker(args.demo_sections, args.demo_classes, seed=cfg.seed)
    else:
        raise NisslkitError("synth needs --spec-file or --demo-sections")
    ids = _pool_map(_generate_and_save, [(s, str(out_dir)) for s in specs], args.jobs)
    log.info("generated %d sections in %s", len(ids), out_dir)
    return 0


def _extract_one(item) -> list[dict]:
    ann_path, tree, policy, cfg_dict, out_dir = item
    cfg = PipelineConfig(**cfg_dict)
    section = load_annotation(ann_path)
    records = extract_region_images(
        section, tree, policy,
        SizeFilter(cfg.min_area, cfg.min_area_perimeter_ratio),
        cfg.dfs_distance_threshold,
        CropConfig(
            kinds=tuple(cfg.crop_kinds),
            square_min_dims=tuple(cfg.square_min_dims),
            multi_label_threshold=cfg.multi_label_threshold,
            expected_resolution_um=cfg.region_resolution_um,
        ),
        out_dir,
    )
    return [rec.to_json() for rec in records]


def cmd_prep_regions(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    check_no_partial_outputs(out_dir)
    tree, policy = _load_taxonomy(args)
    annotations = find_annotations(args.sections)
    if not annotations:
        raise NisslkitError(f"no section annotations found in {args.sections}")
    items = [(str(p), tree, policy, cfg.to_dict(), str(out_dir)) for p in annotations]
    rows: list[dict] = []
    for recs in _pool_map(_extract_one, items, args.jobs):
        rows.extend(recs)
    write_jsonl(rows, out_dir / "regions.jsonl")
    log.info("wrote %d region records from %d sections", len(rows), len(annotations))
    return 0


def _tile_one(item) -> list[dict]:
    ann_path, names, cfg_dict = item
    cfg = PipelineConfig(**cfg_dict)
    section = load_annotation(ann_path, load_image=False)
    records = tile_section(
        section,
        leaf_polygons_from_section(section, names),
        tile_size=cfg.tile_size,
        overlap_threshold=cfg.tile_overlap_threshold,
        expected_resolution_um=cfg.tile_resolution_um,
    )
    return [rec.to_json() for rec in records]


def cmd_prep_tiles(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    check_no_partial_outputs(out_dir)
    names = None
    if args.taxonomy:
        tree = parse_nomenclature(args.taxonomy)
        names = {rid: tree.name(rid) for rid in tree.ids()}
    annotations = find_annotations(args.sections)
    if not annotations:
        raise NisslkitError(f"no section annotations found in {args.sections}")
    items = [(str(p), names, cfg.to_dict()) for p in annotations]
    rows: list[dict] = []
    for recs in _pool_map(_tile_one, items, args.jobs):
        rows.extend(recs)

    if args.materialize:
        by_section: dict[str, list[dict]] = {}
        for row in rows:
            by_section.setdefault(row["section_id"], []).append(row)
        for ann_path in annotations:
            section = load_annotation(ann_path)
            image = section.require_image()
            for row in by_section.get(section.section_id, []):
                x0, y0, x1, y1 = (int(v) for v in row["bbox"])
                rel = f"tiles/{section.section_id}_{row['grid_x']}_{row['grid_y']}.png"
                save_image_array(np.ascontiguousarray(image[y0:y1, x0:x1]),
                                 out_dir / rel)
                row["image_path"] = rel

    write_jsonl(rows, out_dir / "tiles.jsonl")
    log.info("wrote %d tile records from %d sections", len(rows), len(annotations))
    return 0


def _rebase_paths(rows: list[dict], src_dir: Path, dst_dir: Path) -> list[dict]:
    """Keep file references valid when a manifest moves to a new directory."""
    out = []
    for row in rows:
        row = dict(row)
        for key in ("image_path", "mask_path"):
            value = row.get(key)
            if value:
                row[key] = os.path.relpath(src_dir / value, dst_dir)
        out.append(row)
    return out


def cmd_split(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    check_no_partial_outputs(out_dir)
    manifest = Path(args.manifest)
    fraction = cfg.val_fraction if args.val_fraction is None else args.val_fraction
    if args.kind == "region":
        records = _read_region_manifest(manifest)
        result = split_whole_region(records, fraction, cfg.seed)
    else:
        records = _read_tile_manifest(manifest)
        result = split_tiles(records, fraction, cfg.seed, cfg.same_section_ratio)
    write_jsonl(_rebase_paths([r.to_json() for r in result.train],
                              manifest.parent, out_dir),
                out_dir / "train.jsonl")
    write_jsonl(_rebase_paths([r.to_json() for r in result.val],
                              manifest.parent, out_dir),
                out_dir / "val.jsonl")
    write_json(result.report(), out_dir / "split_report.json")
    if result.uncovered_labels:
        log.warning("labels without validation coverage: %s",
                    ", ".join(result.uncovered_labels))
    log.info("split %d records into %d train / %d val",
             len(records), len(result.train), len(result.val))
    return 0


def cmd_train_toy(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    check_no_partial_outputs(out_dir)
    manifest = Path(args.train_manifest)
    records = _read_region_manifest(manifest)
    if not records:
        raise NisslkitError(f"training manifest {manifest} is empty")
    features = _record_features(records, manifest.parent, cfg.input_dim)
    captions = _captions(records, cfg.caption_mode)
    train_cfg = TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
        beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
        weight_decay=cfg.weight_decay, embed_dim=cfg.embed_dim,
        text_dim=cfg.text_dim, init_scale=cfg.init_scale, seed=cfg.seed)
    result = train_toy(
        captions, features, train_cfg,
        epoch_callback=lambda e, l: log.info("epoch %d: mean loss %.6f", e, l))
    write_checkpoint(out_dir / "checkpoint.bin",
                     result.encoder.image_projection,
                     result.encoder.text_projection,
                     result.temperature.logit_scale)
    write_jsonl(
        [{"epoch": i, "mean_loss": loss} for i, loss in enumerate(result.loss_curve)],
        out_dir / "loss_curve.jsonl")
    log.info("final mean loss %.6f (epoch 0: %.6f)",
             result.loss_curve[-1], result.loss_curve[0])
    return 0


def cmd_embed(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    check_no_partial_outputs(out_dir)
    manifest = Path(args.manifest)
    records = _read_region_manifest(manifest)
    encoder, _ = _encoder_from_checkpoint(Path(args.checkpoint))
    features = _record_features(records, manifest.parent, cfg.input_dim)
    image_emb = encoder.encode_image(features)
    write_embeddings(out_dir / "images.emb", image_emb)
    write_jsonl([rec.to_json() for rec in records], out_dir / "images.meta.jsonl")
    labels = sorted({rec.label for rec in records})
    label_emb = encoder.encode_text(labels)
    write_embeddings(out_dir / "labels.emb", label_emb)
    write_json(labels, out_dir / "labels.json")
    log.info("embedded %d images and %d labels", len(records), len(labels))
    return 0


def _rank_all(image_emb: np.ndarray, label_embeddings: dict[str, np.ndarray]
              ) -> list[list[str]]:
    return [[label for label, _ in classify_zero_shot(emb, label_embeddings)]
            for emb in image_emb]


def cmd_eval_classify(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    check_no_partial_outputs(out_dir)
    manifest = Path(args.manifest)
    records = _read_region_manifest(manifest)
    if not records:
        raise NisslkitError(f"evaluation manifest {manifest} is empty")
    encoder, _ = _encoder_from_checkpoint(Path(args.checkpoint))
    if args.labels_from:
        label_pool = sorted({r.label for r in _read_region_manifest(Path(args.labels_from))})
    else:
        label_pool = sorted({r.label for r in records})
    label_embeddings = _label_embeddings(encoder, label_pool)
    features = _record_features(records, manifest.parent, cfg.input_dim)
    image_emb = encoder.encode_image(features)
    ranked = _rank_all(image_emb, label_embeddings)

    truths = [rec.label for rec in records]
    preds = [r[0] for r in ranked]
    single = weighted_prf(preds, truths)
    multi = multi_label_hit_rate(ranked, [list(rec.multi_labels) for rec in records])

    report = single.to_json()
    report["multi_label"] = multi.report.to_json()["weighted"]
    report["multi_label"]["hit_rate"] = float(np.mean(multi.hits))
    write_json(report, out_dir / "classification_report.json")
    print(f"weighted precision {single.weighted_precision:.4f} "
          f"recall {single.weighted_recall:.4f} f1 {single.weighted_f1:.4f}")
    print(f"multi-label weighted f1 {multi.report.weighted_f1:.4f} "
          f"(hit rate {float(np.mean(multi.hits)):.4f})")
    return 0


def cmd_eval_retrieval(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    check_no_partial_outputs(out_dir)
    manifest = Path(args.manifest)
    records = _read_region_manifest(manifest)
    if not records:
        raise NisslkitError(f"retrieval manifest {manifest} is empty")
    encoder, _ = _encoder_from_checkpoint(Path(args.checkpoint))
    features = _record_features(records, manifest.parent, cfg.input_dim)
    image_emb = encoder.encode_image(features)
    image_labels = [rec.label for rec in records]
    label_pool = sorted(set(image_labels))
    text_emb = encoder.encode_text(label_pool)

    ks = (1, 5, 10)
    tables = {
        "image_to_image": retrieval_table(
            image_emb, image_emb, image_labels, image_labels, ks, exclude_self=True),
        "text_to_image": retrieval_table(
            text_emb, image_emb, label_pool, image_labels, ks),
        "image_to_text": retrieval_table(
            image_emb, text_emb, image_labels, label_pool, ks),
    }
    report = {task: {str(k): v for k, v in table.items()}
              for task, table in tables.items()}
    write_json(report, out_dir / "retrieval_report.json")
    for task, table in tables.items():
        print(task + "  " + "  ".join(f"R@{k} {v:.4f}" for k, v in table.items()))
    return 0


def cmd_segment(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    check_no_partial_outputs(out_dir)
    tiles = _read_tile_manifest(Path(args.tiles))
    section = load_annotation(Path(args.section))
    tiles = [t for t in tiles if t.section_id == section.section_id]
    if not tiles:
        raise NisslkitError(f"no tiles for section {section.section_id}")
    image = section.require_image()
    encoder, _ = _encoder_from_checkpoint(Path(args.checkpoint))
    label_pool = sorted({t.label for t in tiles})
    label_embeddings = _label_embeddings(encoder, label_pool)

    feats = []
    for tile in tiles:
        x0, y0, x1, y1 = (int(v) for v in tile.bbox.to_list())
        feats.append(feature_extract(image[y0:y1, x0:x1]))
    image_emb = encoder.encode_image(np.stack(feats))
    predictions = [classify_zero_shot(emb, label_embeddings)[0][0]
                   for emb in image_emb]

    label_map, label_ids = coarse_segmentation(
        tiles, predictions, (section.width, section.height))
    if len(label_ids) > 255:
        raise NisslkitError("more than 255 labels; cannot write 8-bit label map")
    save_image_array(label_map.astype(np.uint8), out_dir / "segmentation.png")
    write_json({label: int(i) for label, i in label_ids.items()},
               out_dir / "segmentation_legend.json")

    agreement = None
    if args.truth:
        from .geometry import rasterize_mask, BBox

        truth_map = np.zeros((section.height, section.width), dtype=np.int32)
        full = BBox(0, 0, section.width, section.height)
        for ann in sorted(section.regions, key=lambda a: a.region_id):
            if ann.region_id not in label_ids:
                continue
            mask = rasterize_mask(ann.polygon, full).astype(bool)
            truth_map[mask] = label_ids[ann.region_id]
        agreement = segmentation_agreement(label_map, truth_map)
        print(f"pixel agreement over tiled area: {agreement:.4f}")
        write_json({"pixel_agreement": agreement}, out_dir / "segmentation_agreement.json")
    log.info("segmented %s with %d tiles, %d labels",
             section.section_id, len(tiles), len(label_ids))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nisslkit",
        description="Section dataset preparation, contrastive training, and evaluation.")
    parser.add_argument("--version", action="version", version=__version__)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config file (YAML/JSON); "
                        "NISSLKIT_CONFIG is used when unset")
    common.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for per-section stages")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--out-dir", default="out", help="artifact directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse-taxonomy", parents=[common],
                       help="validate a taxonomy + merge policy and summarize labels")
    p.add_argument("--taxonomy")
    p.add_argument("--policy")
    p.add_argument("--labels-out")
    p.set_defaults(func=cmd_parse_taxonomy)

    p = sub.add_parser("synth", parents=[common],
                       help="generate synthetic annotated sections")
    p.add_argument("--spec-file")
    p.add_argument("--demo-sections", type=int)
    p.add_argument("--demo-classes", type=int, default=8)
    p.add_argument("--layout", choices=["blobs", "partition"], default="blobs")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep-regions", parents=[common],
                       help="extract labeled whole-region crops")
    p.add_argument("--sections", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--policy")
    p.set_defaults(func=cmd_prep_regions)

    p = sub.add_parser("prep-tiles", parents=[common],
                       help="tile sections and label tiles by max overlap")
    p.add_argument("--sections", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--materialize", action="store_true",
                   help="write tile pixel data as PNG files")
    p.set_defaults(func=cmd_prep_tiles)

    p = sub.add_parser("split", parents=[common],
                       help="train/validation split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", choices=["region", "tile"], required=True)
    p.add_argument("--val-fraction", type=float)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-toy", parents=[common],
                       help="train the toy dual encoder on a region manifest")
    p.add_argument("--train-manifest", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("embed", parents=[common],
                       help="embed manifest images and label texts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval-classify", parents=[common],
                       help="zero-shot classification report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels-from", help="manifest providing the label pool")
    p.set_defaults(func=cmd_eval_classify)

    p = sub.add_parser("eval-retrieval", parents=[common],
                       help="Recall@K retrieval report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("segment", parents=[common],
                       help="coarse segmentation from tile predictions")
    p.add_argument("--tiles", required=True)
    p.add_argument("--section", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--truth", action="store_true",
                   help="also score agreement against the annotation")
    p.set_defaults(func=cmd_segment)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        return args.func(args, cfg)
    except NisslkitError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
