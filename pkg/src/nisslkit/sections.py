"""Annotated sections: raster image + labeled region polygons + resolution.

Annotations use a small GeoJSON subset, one file per section:

    {
      "type": "FeatureCollection",
      "properties": {"section_id": ..., "resolution_um_per_px": ...,
                     "width": ..., "height": ..., "image": "<relative path>"},
      "features": [
        {"type": "Feature",
         "properties": {"region_id": "..."},
         "geometry": {"type": "Polygon" | "MultiPolygon", "coordinates": ...}}
      ]
    }

Polygon coordinates follow GeoJSON: first ring exterior, remaining rings
holes; rings may or may not repeat the first vertex at the end. Images are
lossless rasters (PNG), grayscale or RGB.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import AnnotationError, GeometryError
from .geometry import Polygon


@dataclass(frozen=True)
class RegionAnnotation:
    region_id: str
    polygon: Polygon


@dataclass
class AnnotatedSection:
    section_id: str
    width: int
    height: int
    resolution_um_per_px: float
    regions: list[RegionAnnotation]
    image: np.ndarray | None = None
    image_path: str | None = None
    meta: dict = field(default_factory=dict)

    def polygons_for(self, region_id: str) -> list[Polygon]:
        return [r.polygon for r in self.regions if r.region_id == region_id]

    def region_ids(self) -> list[str]:
        return sorted({r.region_id for r in self.regions})

    def require_image(self) -> np.ndarray:
        if self.image is None:
            raise AnnotationError(f"section {self.section_id}: image not loaded")
        return self.image


def _rings_from_geojson(coords) -> Polygon:
    if not coords:
        raise AnnotationError("empty polygon coordinates")
    try:
        return Polygon(coords[0], coords[1:])
    except GeometryError as exc:
        raise AnnotationError(f"invalid polygon: {exc}") from exc


def _polygons_from_geometry(geom: dict) -> list[Polygon]:
    gtype = geom.get("type")
    if gtype == "Polygon":
        return [_rings_from_geojson(geom.get("coordinates", []))]
    if gtype == "MultiPolygon":
        return [_rings_from_geojson(c) for c in geom.get("coordinates", [])]
    raise AnnotationError(f"unsupported geometry type {gtype!r}")


def load_annotation(path: str | Path, load_image: bool = True) -> AnnotatedSection:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise AnnotationError(f"cannot read annotation {path}: {exc}") from exc
    props = payload.get("properties", {})
    try:
        section = AnnotatedSection(
            section_id=str(props["section_id"]),
            width=int(props["width"]),
            height=int(props["height"]),
            resolution_um_per_px=float(props["resolution_um_per_px"]),
            regions=[],
        )
    except KeyError as exc:
        raise AnnotationError(f"{path}: missing section property {exc}") from exc
    for feature in payload.get("features", []):
        region_id = str(feature.get("properties", {}).get("region_id", ""))
        if not region_id:
            raise AnnotationError(f"{path}: feature without region_id")
        for polygon in _polygons_from_geometry(feature.get("geometry", {})):
            section.regions.append(RegionAnnotation(region_id, polygon))

    image_name = props.get("image")
    if image_name is not None:
        image_path = path.parent / image_name
        section.image_path = str(image_path)
        if load_image:
            section.image = load_image_array(image_path)
            ih, iw = section.image.shape[:2]
            if (iw, ih) != (section.width, section.height):
                raise AnnotationError(
                    f"{path}: image is {iw}x{ih} but annotation says "
                    f"{section.width}x{section.height}"
                )
    return section


def _polygon_to_geojson(polygon: Polygon) -> dict:
    def close(ring):
        pts = [list(p) for p in ring]
        pts.append(list(ring[0]))
        return pts

    return {
        "type": "Polygon",
        "coordinates": [close(polygon.exterior)] + [close(h) for h in polygon.holes],
    }


def annotation_to_dict(section: AnnotatedSection, image_name: str | None) -> dict:
    props = {
        "section_id": section.section_id,
        "resolution_um_per_px": section.resolution_um_per_px,
        "width": section.width,
        "height": section.height,
    }
    if image_name is not None:
        props["image"] = image_name
    return {
        "type": "FeatureCollection",
        "properties": props,
        "features": [
            {
                "type": "Feature",
                "properties": {"region_id": r.region_id},
                "geometry": _polygon_to_geojson(r.polygon),
            }
            for r in section.regions
        ],
    }


def save_section(section: AnnotatedSection, out_dir: str | Path) -> Path:
    """Write <section_id>.png and <section_id>.json into out_dir."""
    from .manifest import atomic_write_bytes, atomic_write_text

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_name = None
    if section.image is not None:
        image_name = f"{section.section_id}.png"
        atomic_write_bytes(out_dir / image_name, encode_png(section.image))
    ann_path = out_dir / f"{section.section_id}.json"
    payload = annotation_to_dict(section, image_name)
    atomic_write_text(ann_path, json.dumps(payload, sort_keys=True) + "\n")
    return ann_path


def load_image_array(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img)
    except OSError as exc:
        raise AnnotationError(f"cannot read image {path}: {exc}") from exc


def encode_png(array: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


def save_image_array(array: np.ndarray, path: str | Path) -> None:
    from .manifest import atomic_write_bytes

    atomic_write_bytes(Path(path), encode_png(array))


def find_annotations(sections_dir: str | Path) -> list[Path]:
    """All section annotation files in a directory, sorted by name."""
    return sorted(Path(sections_dir).glob("*.json"))
