"""Whole-region crop extraction from low-resolution annotated sections.

For every training label present in a section the pipeline merges the label's
polygons, drops small/narrow ones, groups the survivors by proximity, and
emits one crop per group and crop kind: tight boxes (optionally with an exact
polygon mask) and square expansions at the configured minimum dimensions.
Regions split into several distant groups get per-part records.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import AnnotationError, NisslkitError
from .geometry import (
    BBox,
    Polygon,
    SizeFilter,
    area,
    exact_bbox,
    intersection_area,
    passes_size_filter,
    proximity_groups,
    rasterize_mask,
    square_bbox,
)
from .nomenclature import MergePolicy, NomenclatureTree, resolve_label
from .sections import AnnotatedSection, save_image_array

CROP_EXACT = "ExactBBox"
CROP_EXACT_MASKED = "ExactBBoxMasked"
CROP_SQUARE = "SquareBBox"
ALL_CROP_KINDS = (CROP_EXACT, CROP_EXACT_MASKED, CROP_SQUARE)


@dataclass(frozen=True)
class RegionImageRecord:
    """One prepared whole-region training example."""

    section_id: str
    label: str
    part: Optional[int]
    crop_kind: str
    bbox: BBox
    resolution_um_per_px: float
    multi_labels: tuple[str, ...] = ()
    mask_path: Optional[str] = None
    image_path: Optional[str] = None
    square_min_dim: Optional[int] = None

    def __post_init__(self):
        if self.crop_kind not in ALL_CROP_KINDS:
            raise NisslkitError(f"unknown crop kind {self.crop_kind!r}")
        if not self.multi_labels:
            object.__setattr__(self, "multi_labels", (self.label,))
        if self.multi_labels[0] != self.label:
            raise NisslkitError("multi_labels must start with the primary label")
        if self.part is not None and self.part < 1:
            raise NisslkitError("part numbers start at 1")

    def primary_caption(self) -> str:
        if self.part is not None:
            return f"{self.label} part {self.part}"
        return self.label

    def caption(self, multi: bool = False) -> str:
        """Training text: primary label (with part number), optionally
        followed by the included neighboring labels, joined by '; '."""
        if not multi:
            return self.primary_caption()
        return "; ".join([self.primary_caption(), *self.multi_labels[1:]])

    def to_json(self) -> dict:
        return {
            "section_id": self.section_id,
            "label": self.label,
            "part": self.part,
            "crop_kind": self.crop_kind,
            "bbox": self.bbox.to_list(),
            "resolution_um_per_px": self.resolution_um_per_px,
            "multi_labels": list(self.multi_labels),
            "mask_path": self.mask_path,
            "image_path": self.image_path,
            "square_min_dim": self.square_min_dim,
        }

    @classmethod
    def from_json(cls, row: dict) -> "RegionImageRecord":
        return cls(
            section_id=row["section_id"],
            label=row["label"],
            part=row.get("part"),
            crop_kind=row["crop_kind"],
            bbox=BBox.from_list(row["bbox"]),
            resolution_um_per_px=float(row["resolution_um_per_px"]),
            multi_labels=tuple(row.get("multi_labels") or (row["label"],)),
            mask_path=row.get("mask_path"),
            image_path=row.get("image_path"),
            square_min_dim=row.get("square_min_dim"),
        )


@dataclass(frozen=True)
class CropConfig:
    kinds: tuple[str, ...] = ALL_CROP_KINDS
    square_min_dims: tuple[int, ...] = (336, 224)
    multi_label_threshold: float = 0.80
    expected_resolution_um: Optional[float] = 16.0

    def __post_init__(self):
        for kind in self.kinds:
            if kind not in ALL_CROP_KINDS:
                raise NisslkitError(f"unknown crop kind {kind!r}")


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def multi_labels_for_bbox(bbox: BBox, primary_label: str,
                          labeled_polygons: dict[str, list[Polygon]],
                          threshold: float = 0.80) -> tuple[str, ...]:
    """Primary label plus neighbors with more than `threshold` of their merged
    polygon area inside the bbox, ordered by descending inclusion then name."""
    included: list[tuple[float, str]] = []
    for label in sorted(labeled_polygons):
        if label == primary_label:
            continue
        polys = labeled_polygons[label]
        total = sum(area(p) for p in polys)
        if total <= 0:
            continue
        inside = sum(intersection_area(p, bbox) for p in polys)
        frac = inside / total
        if frac > threshold:
            included.append((frac, label))
    included.sort(key=lambda item: (-item[0], item[1]))
    return (primary_label, *(label for _, label in included))


def assign_multi_region_labels(record: RegionImageRecord,
                               all_labeled_polygons: dict[str, list[Polygon]],
                               threshold: float = 0.80) -> list[str]:
    """Multi-region label list for a square crop record."""
    if record.crop_kind != CROP_SQUARE:
        raise NisslkitError("multi-region labels apply to SquareBBox crops only")
    return list(multi_labels_for_bbox(record.bbox, record.label,
                                      all_labeled_polygons, threshold))


def _clip_bbox_to_section(bbox: BBox, width: int, height: int) -> BBox:
    return BBox(
        min(max(bbox.x0, 0), width), min(max(bbox.y0, 0), height),
        min(max(bbox.x1, 0), width), min(max(bbox.y1, 0), height),
    )


def _snap_square(box: BBox, width: int, height: int) -> BBox:
    """Integer-align a square_bbox result without growing past the section."""
    w = box.width
    h = box.height
    x0 = math.floor(box.x0)
    y0 = math.floor(box.y0)
    x1 = min(x0 + int(round(w)), width)
    y1 = min(y0 + int(round(h)), height)
    return BBox(x0, y0, x1, y1)


def _group_sort_key(polys: Sequence[Polygon]) -> tuple[float, float]:
    b = exact_bbox(polys)
    return (b.y0, b.x0)


def resolve_section_labels(section: AnnotatedSection, tree: NomenclatureTree,
                           policy: MergePolicy) -> dict[str, list[Polygon]]:
    """Merge the section's polygons under their resolved training labels."""
    labeled: dict[str, list[Polygon]] = {}
    for ann in section.regions:
        label = resolve_label(tree, policy, ann.region_id)
        if label is None:
            continue
        labeled.setdefault(label, []).append(ann.polygon)
    return labeled


def extract_region_images(section: AnnotatedSection, tree: NomenclatureTree,
                          policy: MergePolicy, size_filter: SizeFilter,
                          dfs_threshold: float, crop_config: CropConfig,
                          out_dir: str | Path) -> list[RegionImageRecord]:
    """Produce the whole-region crop dataset for one section.

    Returns records in a stable order (label, part, crop kind, square size);
    crop and mask files are written under out_dir/crops and out_dir/masks with
    paths stored relative to out_dir.
    """
    expected = crop_config.expected_resolution_um
    if expected is not None and not math.isclose(
            section.resolution_um_per_px, expected, rel_tol=1e-6):
        raise AnnotationError(
            f"section {section.section_id}: resolution "
            f"{section.resolution_um_per_px} um/px, expected {expected}"
        )
    image = section.require_image()
    ih, iw = image.shape[:2]
    if (iw, ih) != (section.width, section.height):
        raise AnnotationError(
            f"section {section.section_id}: image {iw}x{ih} does not match "
            f"annotation {section.width}x{section.height}"
        )

    out_dir = Path(out_dir)
    labeled = resolve_section_labels(section, tree, policy)

    records: list[RegionImageRecord] = []
    for label in sorted(labeled):
        survivors = [p for p in labeled[label] if passes_size_filter(p, size_filter)]
        if not survivors:
            continue
        groups = proximity_groups(survivors, dfs_threshold)
        group_polys = sorted(
            ([survivors[i] for i in group] for group in groups),
            key=_group_sort_key,
        )
        multi_part = len(group_polys) > 1
        for gi, polys in enumerate(group_polys):
            part = gi + 1 if multi_part else None
            ebox = _clip_bbox_to_section(
                exact_bbox(polys).snap_to_pixels(), section.width, section.height)
            records.extend(_crop_records(
                section, label, part, polys, ebox, labeled, crop_config,
                image, out_dir))
    return records


def _crop_records(section, label, part, polys, ebox, labeled, crop_config,
                  image, out_dir) -> list[RegionImageRecord]:
    records = []
    stem = f"{section.section_id}__{_slug(label)}"
    if part is not None:
        stem += f"__part{part}"

    def save_crop(name: str, pixels: np.ndarray) -> str:
        rel = f"crops/{name}.png"
        save_image_array(pixels, out_dir / rel)
        return rel

    for kind in crop_config.kinds:
        if kind == CROP_EXACT:
            crop = _crop_pixels(image, ebox)
            records.append(RegionImageRecord(
                section_id=section.section_id, label=label, part=part,
                crop_kind=kind, bbox=ebox,
                resolution_um_per_px=section.resolution_um_per_px,
                image_path=save_crop(f"{stem}__exact", crop),
            ))
        elif kind == CROP_EXACT_MASKED:
            crop = _crop_pixels(image, ebox)
            mask = np.zeros(crop.shape[:2], dtype=np.uint8)
            for poly in polys:
                mask |= rasterize_mask(poly, ebox)
            masked = crop * (mask if crop.ndim == 2 else mask[:, :, None])
            mask_rel = f"masks/{stem}__mask.png"
            save_image_array(mask * 255, out_dir / mask_rel)
            records.append(RegionImageRecord(
                section_id=section.section_id, label=label, part=part,
                crop_kind=kind, bbox=ebox,
                resolution_um_per_px=section.resolution_um_per_px,
                mask_path=mask_rel,
                image_path=save_crop(f"{stem}__exact-masked", masked),
            ))
        elif kind == CROP_SQUARE:
            for min_dim in crop_config.square_min_dims:
                sbox = _snap_square(
                    square_bbox(ebox, section.width, section.height, min_dim),
                    section.width, section.height)
                crop = _crop_pixels(image, sbox)
                multi = multi_labels_for_bbox(
                    sbox, label, labeled, crop_config.multi_label_threshold)
                records.append(RegionImageRecord(
                    section_id=section.section_id, label=label, part=part,
                    crop_kind=kind, bbox=sbox,
                    resolution_um_per_px=section.resolution_um_per_px,
                    multi_labels=multi,
                    image_path=save_crop(f"{stem}__square-{min_dim}", crop),
                    square_min_dim=min_dim,
                ))
    return records


def _crop_pixels(image: np.ndarray, bbox: BBox) -> np.ndarray:
    x0, y0, x1, y1 = (int(bbox.x0), int(bbox.y0), int(bbox.x1), int(bbox.y1))
    return np.ascontiguousarray(image[y0:y1, x0:x1])


# ---------------------------------------------------------------------------
# model input transformation: bicubic resize + zero padding
# ---------------------------------------------------------------------------

def _cubic_weights(t: np.ndarray) -> np.ndarray:
    # Catmull-Rom (a = -0.5) cubic convolution kernel
    a = -0.5
    t = np.abs(t)
    w = np.where(
        t <= 1.0,
        (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0,
        np.where(t < 2.0, a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a, 0.0),
    )
    return w


def _resize_axis(data: np.ndarray, new_n: int, axis: int) -> np.ndarray:
    old_n = data.shape[axis]
    if new_n == old_n:
        return data
    scale = old_n / new_n
    centers = (np.arange(new_n, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(centers).astype(int)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    weights = _cubic_weights(centers[:, None] - taps)
    taps = np.clip(taps, 0, old_n - 1)  # clamped edge handling
    moved = np.moveaxis(data, axis, 0)
    gathered = moved[taps]  # (new_n, 4, ...)
    out = np.einsum("nk,nk...->n...", weights, gathered)
    return np.moveaxis(out, 0, axis)


def resize_bicubic(image: np.ndarray, new_height: int, new_width: int) -> np.ndarray:
    """Separable bicubic resampling; returns the input dtype (rounded/clipped
    for integer images)."""
    if image.size == 0:
        raise NisslkitError("resize_bicubic: empty image")
    data = image.astype(np.float64)
    data = _resize_axis(data, new_height, 0)
    data = _resize_axis(data, new_width, 1)
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        data = np.clip(np.rint(data), info.min, info.max)
    return data.astype(image.dtype)


def pad_to_square(image: np.ndarray, target_dim: int) -> np.ndarray:
    """Zero-pad (and, if needed, bicubic-downscale) an image to target square.

    Content is centered; padding pixels are exactly zero in all channels. When
    either source dimension exceeds target_dim the image is first downscaled
    preserving aspect ratio so its larger side equals target_dim.
    """
    if image.size == 0:
        raise NisslkitError("pad_to_square: empty image")
    h, w = image.shape[:2]
    if max(h, w) > target_dim:
        scale = target_dim / max(h, w)
        new_h = max(1, int(round(h * scale)))
        new_w = max(1, int(round(w * scale)))
        image = resize_bicubic(image, new_h, new_w)
        h, w = new_h, new_w
    shape = (target_dim, target_dim) + image.shape[2:]
    out = np.zeros(shape, dtype=image.dtype)
    oy = (target_dim - h) // 2
    ox = (target_dim - w) // 2
    out[oy:oy + h, ox:ox + w] = image
    return out
