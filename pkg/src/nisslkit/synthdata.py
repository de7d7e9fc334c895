"""Deterministic synthetic sections with cell-like dot textures.

Each region polygon is filled with uniformly placed dark disks ("cells") on a
light background; region identity is carried by dot density, dot radius, and
gray level. The output uses the same image + annotation formats as real
sections, so the whole pipeline can run end to end without any external data.

Everything is a pure function of (spec, seed): the same spec always yields a
bit-identical raster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NisslkitError
from .geometry import Polygon, area, points_in_polygon
from .sections import AnnotatedSection, RegionAnnotation

FEATURE_DIM = 18  # 16 histogram bins + dot density + mean blob radius


@dataclass(frozen=True)
class SynthRegion:
    name: str
    polygon: Polygon
    dot_density: float  # dots per px^2
    dot_radius: float   # px
    gray_level: int     # 0..255, darker than background

    def __post_init__(self):
        if self.dot_density < 0:
            raise NisslkitError(f"region {self.name!r}: dot_density must be >= 0")
        if not (0 <= self.gray_level <= 255):
            raise NisslkitError(f"region {self.name!r}: gray_level out of range")


@dataclass(frozen=True)
class SynthSpec:
    section_id: str
    width: int
    height: int
    regions: tuple[SynthRegion, ...]
    seed: int
    resolution_um_per_px: float = 16.0
    background: int = 255


def _region_mask(polygon: Polygon, width: int, height: int) -> tuple[np.ndarray, int, int]:
    """Pixel-center mask of the polygon restricted to its integer bbox."""
    b = polygon.bbox().snap_to_pixels()
    x0 = max(int(b.x0), 0)
    y0 = max(int(b.y0), 0)
    x1 = min(int(b.x1), width)
    y1 = min(int(b.y1), height)
    if x1 <= x0 or y1 <= y0:
        return np.zeros((0, 0), dtype=bool), x0, y0
    xs = x0 + 0.5 + np.arange(x1 - x0, dtype=np.float64)
    ys = y0 + 0.5 + np.arange(y1 - y0, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    return points_in_polygon(gx, gy, polygon), x0, y0


def _sample_points_in_mask(rng: np.random.Generator, mask: np.ndarray,
                           x0: int, y0: int, count: int) -> np.ndarray:
    """Uniform points over the masked pixels, by rejection in the bbox."""
    h, w = mask.shape
    out = np.empty((count, 2), dtype=np.float64)
    filled = 0
    guard = 0
    while filled < count:
        guard += 1
        if guard > 1000:
            raise NisslkitError("dot placement failed: polygon mask nearly empty")
        n = max((count - filled) * 2, 64)
        px = rng.uniform(0.0, w, size=n)
        py = rng.uniform(0.0, h, size=n)
        ok = mask[np.minimum(py.astype(int), h - 1), np.minimum(px.astype(int), w - 1)]
        accepted = np.stack([px[ok] + x0, py[ok] + y0], axis=1)
        take = min(len(accepted), count - filled)
        out[filled:filled + take] = accepted[:take]
        filled += take
    return out


def _stamp_dots(image: np.ndarray, mask: np.ndarray, x0: int, y0: int,
                centers: np.ndarray, radius: float, gray: int) -> None:
    """Draw disks clipped to the region mask (pixel centers within radius)."""
    h, w = mask.shape
    r = max(radius, 0.5)
    span = int(np.ceil(r + 0.5))
    offs = np.arange(-span, span + 1)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    for cx, cy in centers:
        lx = cx - x0
        ly = cy - y0
        ix = int(lx) + ox
        iy = int(ly) + oy
        dist = np.hypot(ix + 0.5 - lx, iy + 0.5 - ly)
        keep = (dist <= r) & (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        ixk = ix[keep]
        iyk = iy[keep]
        inside = mask[iyk, ixk]
        image[iyk[inside] + y0, ixk[inside] + x0] = gray


def generate_section(spec: SynthSpec) -> AnnotatedSection:
    """Render a synthetic section; dot counts per region land in .meta."""
    rng = np.random.default_rng(spec.seed)
    image = np.full((spec.height, spec.width), spec.background, dtype=np.uint8)
    claimed = np.zeros((spec.height, spec.width), dtype=bool)
    dot_counts: dict[str, int] = {}

    for region in spec.regions:
        mask, x0, y0 = _region_mask(region.polygon, spec.width, spec.height)
        if mask.size == 0 or not mask.any():
            dot_counts[region.name] = dot_counts.get(region.name, 0)
            continue
        view = claimed[y0:y0 + mask.shape[0], x0:x0 + mask.shape[1]]
        if bool(np.any(view & mask)):
            raise NisslkitError(
                f"section {spec.section_id}: region {region.name!r} overlaps "
                "an earlier region"
            )
        view |= mask

        n_dots = int(rng.poisson(region.dot_density * area(region.polygon)))
        dot_counts[region.name] = dot_counts.get(region.name, 0) + n_dots
        if n_dots > 0:
            centers = _sample_points_in_mask(rng, mask, x0, y0, n_dots)
            _stamp_dots(image, mask, x0, y0, centers, region.dot_radius,
                        region.gray_level)

    return AnnotatedSection(
        section_id=spec.section_id,
        width=spec.width,
        height=spec.height,
        resolution_um_per_px=spec.resolution_um_per_px,
        regions=[RegionAnnotation(r.name, r.polygon) for r in spec.regions],
        image=image,
        meta={"dot_counts": dot_counts, "seed": spec.seed},
    )


def feature_extract(patch: np.ndarray, dark_threshold: int = 200,
                    max_blob_fraction: float = 0.01) -> np.ndarray:
    """Fixed-dimension texture features for a grayscale patch.

    Concatenates a 16-bin gray histogram, the estimated dot density (blobs
    per px^2, scaled by 100), and the mean blob radius (px, scaled by 1/4).
    Histogram masses are Hellinger-scaled (square root of the proportion) so
    the dominant background bin does not swamp cosine distances between
    texture signatures. Blobs are dark connected components; components
    larger than max_blob_fraction of the patch are treated as background
    structure, not cells.
    """
    if patch.size == 0:
        raise NisslkitError("feature_extract: empty patch")
    if patch.ndim == 3:
        patch = patch.mean(axis=2)
    patch = np.asarray(patch, dtype=np.float64)

    hist, _ = np.histogram(patch, bins=16, range=(0.0, 256.0))
    hist = np.sqrt(hist.astype(np.float64) / patch.size)

    dark = patch < dark_threshold
    labels, n_blobs = ndimage.label(dark)
    density = 0.0
    mean_radius = 0.0
    if n_blobs > 0:
        sizes = ndimage.sum_labels(np.ones_like(labels), labels,
                                   index=np.arange(1, n_blobs + 1))
        sizes = sizes[sizes <= max_blob_fraction * patch.size]
        if len(sizes) > 0:
            density = len(sizes) / patch.size
            mean_radius = float(np.sqrt(np.mean(sizes) / np.pi))
    return np.concatenate([hist, [density * 100.0, mean_radius / 4.0]])


def demo_regions(n_classes: int) -> list[dict]:
    """Per-class texture parameters with well-separated appearance.

    Gray levels fall in distinct histogram bins (starting at bin 1 so zero
    padding in bin 0 stays unambiguous), dot coverage climbs a ladder, and
    radii cycle through three sizes.
    """
    params = []
    for c in range(n_classes):
        radius = 2.5 + 0.5 * (c % 3)
        coverage = min(0.10 + 0.05 * c, 0.50)
        params.append({
            "name": f"region-{c}",
            "gray_level": 24 + 16 * (c % 14),
            "dot_density": coverage / (np.pi * radius**2),
            "dot_radius": radius,
        })
    return params


def demo_suite(n_sections: int, n_classes: int, seed: int,
               blob_size: int = 200, margin: int = 20,
               resolution_um_per_px: float = 16.0) -> list[SynthSpec]:
    """Sections with one rectangular blob per class on a jittered grid.

    Every section contains every class; blob positions jitter per section so
    crops differ across sections while staying non-overlapping.
    """
    params = demo_regions(n_classes)
    cols = int(np.ceil(np.sqrt(n_classes)))
    rows = int(np.ceil(n_classes / cols))
    cell = blob_size + 2 * margin
    width = cols * cell
    height = rows * cell
    rng = np.random.default_rng(seed)
    specs = []
    for s in range(n_sections):
        regions = []
        for c, p in enumerate(params):
            gx = (c % cols) * cell
            gy = (c // cols) * cell
            jx = int(rng.integers(2, 2 * margin - 2))
            jy = int(rng.integers(2, 2 * margin - 2))
            x0 = gx + jx
            y0 = gy + jy
            poly = Polygon([(x0, y0), (x0 + blob_size, y0),
                            (x0 + blob_size, y0 + blob_size), (x0, y0 + blob_size)])
            regions.append(SynthRegion(polygon=poly, **p))
        specs.append(SynthSpec(
            section_id=f"synth-{s:03d}",
            width=width,
            height=height,
            regions=tuple(regions),
            seed=int(rng.integers(0, 2**31 - 1)),
            resolution_um_per_px=resolution_um_per_px,
        ))
    return specs


def partition_suite(n_sections: int, n_classes: int, seed: int,
                    width: int = 1120, height: int = 896,
                    min_side: int = 64,
                    resolution_um_per_px: float = 2.0) -> list[SynthSpec]:
    """Sections whose regions are a random axis-aligned partition.

    Guillotine cuts at integer coordinates split the section into n_classes
    rectangles; region names cycle through the class list. Axis-aligned
    integer boundaries keep polygon-clipped areas and pixel counts in exact
    agreement, which the tiling round-trip checks rely on.
    """
    params = demo_regions(n_classes)
    rng = np.random.default_rng(seed)
    specs = []
    for s in range(n_sections):
        rects = [(0, 0, width, height)]
        while len(rects) < n_classes:
            # split the largest rectangle that still can be split
            order = sorted(range(len(rects)),
                           key=lambda i: -(rects[i][2] - rects[i][0]) * (rects[i][3] - rects[i][1]))
            for i in order:
                x0, y0, x1, y1 = rects[i]
                horiz_ok = (x1 - x0) >= 2 * min_side
                vert_ok = (y1 - y0) >= 2 * min_side
                if not horiz_ok and not vert_ok:
                    continue
                if horiz_ok and (not vert_ok or bool(rng.integers(0, 2))):
                    cut = int(rng.integers(x0 + min_side, x1 - min_side + 1))
                    rects[i] = (x0, y0, cut, y1)
                    rects.append((cut, y0, x1, y1))
                else:
                    cut = int(rng.integers(y0 + min_side, y1 - min_side + 1))
                    rects[i] = (x0, y0, x1, cut)
                    rects.append((x0, cut, x1, y1))
                break
            else:
                break
        regions = []
        for c, (x0, y0, x1, y1) in enumerate(rects):
            p = params[c % n_classes]
            poly = Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
            regions.append(SynthRegion(polygon=poly, **p))
        specs.append(SynthSpec(
            section_id=f"part-{s:03d}",
            width=width,
            height=height,
            regions=tuple(regions),
            seed=int(rng.integers(0, 2**31 - 1)),
            resolution_um_per_px=resolution_um_per_px,
        ))
    return specs
