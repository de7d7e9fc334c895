"""Fixed-grid tile labeling for high-resolution sections.

Tiles come from a non-overlapping, axis-aligned grid anchored at (0, 0);
partial tiles at the right/bottom edges are dropped. A tile is labeled with
the leaf region of maximum overlap, provided that overlap strictly exceeds
the candidate threshold; ties break lexicographically so output never depends
on polygon input order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .errors import AnnotationError, NisslkitError
from .geometry import BBox, Polygon, intersection_area
from .sections import AnnotatedSection

TILE_SIZE = 224
OVERLAP_THRESHOLD = 0.40


@dataclass(frozen=True)
class TileRecord:
    section_id: str
    grid_x: int
    grid_y: int
    bbox: BBox
    label: str
    overlap: float
    image_path: Optional[str] = None

    def key(self) -> tuple[str, int, int]:
        return (self.section_id, self.grid_x, self.grid_y)

    def to_json(self) -> dict:
        return {
            "section_id": self.section_id,
            "grid_x": self.grid_x,
            "grid_y": self.grid_y,
            "bbox": self.bbox.to_list(),
            "label": self.label,
            "overlap": self.overlap,
            "image_path": self.image_path,
        }

    @classmethod
    def from_json(cls, row: dict) -> "TileRecord":
        return cls(
            section_id=row["section_id"],
            grid_x=int(row["grid_x"]),
            grid_y=int(row["grid_y"]),
            bbox=BBox.from_list(row["bbox"]),
            label=row["label"],
            overlap=float(row["overlap"]),
            image_path=row.get("image_path"),
        )


def leaf_polygons_from_section(section: AnnotatedSection,
                               names: dict[str, str] | None = None
                               ) -> dict[str, list[Polygon]]:
    """Group the section's polygons by leaf label (region id by default)."""
    out: dict[str, list[Polygon]] = {}
    for ann in section.regions:
        label = names.get(ann.region_id, ann.region_id) if names else ann.region_id
        out.setdefault(label, []).append(ann.polygon)
    return out


def tile_section(section: AnnotatedSection,
                 leaf_polygons: dict[str, list[Polygon]] | None = None,
                 tile_size: int = TILE_SIZE,
                 overlap_threshold: float = OVERLAP_THRESHOLD,
                 expected_resolution_um: float | None = 2.0) -> list[TileRecord]:
    """Label every full grid tile of a section, in row-major order.

    For each tile, leaf regions whose overlap fraction strictly exceeds
    overlap_threshold are candidates; the tile takes the candidate with
    maximum overlap (lexicographic tie-break) or is omitted when there is no
    candidate.
    """
    if tile_size <= 0:
        raise NisslkitError("tile_size must be positive")
    if expected_resolution_um is not None and not math.isclose(
            section.resolution_um_per_px, expected_resolution_um, rel_tol=1e-6):
        raise AnnotationError(
            f"section {section.section_id}: resolution "
            f"{section.resolution_um_per_px} um/px, expected {expected_resolution_um}"
        )
    if leaf_polygons is None:
        leaf_polygons = leaf_polygons_from_section(section)

    nx = section.width // tile_size
    ny = section.height // tile_size
    if nx <= 0 or ny <= 0:
        return []

    tile_area = float(tile_size) * float(tile_size)
    # accumulate per-tile overlap per label, visiting only tiles that the
    # polygon's bbox can reach
    overlaps: dict[tuple[int, int], dict[str, float]] = {}
    for label in sorted(leaf_polygons):
        for poly in leaf_polygons[label]:
            pb = poly.bbox()
            gx0 = max(int(pb.x0 // tile_size), 0)
            gy0 = max(int(pb.y0 // tile_size), 0)
            gx1 = min(int(math.ceil(pb.x1 / tile_size)), nx)
            gy1 = min(int(math.ceil(pb.y1 / tile_size)), ny)
            for gy in range(gy0, gy1):
                for gx in range(gx0, gx1):
                    tile = BBox(gx * tile_size, gy * tile_size,
                                (gx + 1) * tile_size, (gy + 1) * tile_size)
                    inter = intersection_area(poly, tile)
                    if inter <= 0.0:
                        continue
                    per_tile = overlaps.setdefault((gx, gy), {})
                    per_tile[label] = per_tile.get(label, 0.0) + inter

    records: list[TileRecord] = []
    for gy in range(ny):
        for gx in range(nx):
            per_tile = overlaps.get((gx, gy))
            if not per_tile:
                continue
            candidates = [
                (frac, label)
                for label, total in per_tile.items()
                if (frac := min(total / tile_area, 1.0)) > overlap_threshold
            ]
            if not candidates:
                continue
            candidates.sort(key=lambda c: (-c[0], c[1]))
            frac, label = candidates[0]
            records.append(TileRecord(
                section_id=section.section_id,
                grid_x=gx,
                grid_y=gy,
                bbox=BBox(gx * tile_size, gy * tile_size,
                          (gx + 1) * tile_size, (gy + 1) * tile_size),
                label=label,
                overlap=frac,
            ))
    return records
