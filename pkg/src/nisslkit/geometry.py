"""Polygon primitives for the section-processing pipeline.

Everything here works in pixel units on plain Python/numpy data. Polygons are
immutable after validation and all functions are pure, so they are safe to use
from parallel workers.

Conventions:
  - A ring is an ordered sequence of (x, y) vertices; the closing edge from the
    last vertex back to the first is implicit.
  - Point-in-polygon uses the even-odd rule evaluated at pixel centers
    (x + 0.5, y + 0.5 for integer pixel indices).
  - Rectangle/polygon intersection areas are computed by exact clipping
    (Sutherland-Hodgman against each rectangle edge); clip vertices on a
    boundary line are substituted directly so axis-aligned inputs stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import GeometryError

Point = tuple[float, float]

_AREA_EPS = 1e-9


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with x0 <= x1 and y0 <= y1, in pixel coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise GeometryError(
                f"degenerate bbox ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def is_square(self) -> bool:
        return math.isclose(self.width, self.height,
                            rel_tol=1e-9, abs_tol=1e-9)

    def contains_bbox(self, other: "BBox") -> bool:
        return (
            self.x0 <= other.x0
            and self.y0 <= other.y0
            and self.x1 >= other.x1
            and self.y1 >= other.y1
        )

    def snap_to_pixels(self) -> "BBox":
        """Outward-rounded integer box (floor mins, ceil maxes)."""
        return BBox(
            math.floor(self.x0), math.floor(self.y0),
            math.ceil(self.x1), math.ceil(self.y1),
        )

    def to_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        return cls(*map(float, values))


@dataclass(frozen=True)
class SizeFilter:
    """Thresholds for dropping small or narrow regions.

    min_area is in px^2; min_area_perimeter_ratio is in px (a narrowness
    measure: slivers have a small area-to-perimeter ratio).
    """

    min_area: float = 0.0
    min_area_perimeter_ratio: float = 0.0

    def __post_init__(self):
        if self.min_area < 0 or self.min_area_perimeter_ratio < 0:
            raise GeometryError("size-filter thresholds must be >= 0")


def _as_ring(points: Iterable[Sequence[float]]) -> tuple[Point, ...]:
    ring = tuple((float(p[0]), float(p[1])) for p in points)
    # tolerate explicitly closed rings (first vertex repeated at the end)
    if len(ring) >= 2 and ring[0] == ring[-1]:
        ring = ring[:-1]
    return ring


def _ring_signed_area(ring: Sequence[Point]) -> float:
    xs = np.array([p[0] for p in ring], dtype=np.float64)
    ys = np.array([p[1] for p in ring], dtype=np.float64)
    return 0.5 * float(np.sum(xs * np.roll(ys, -1) - np.roll(xs, -1) * ys))


def _ring_perimeter(ring: Sequence[Point]) -> float:
    xs = np.array([p[0] for p in ring], dtype=np.float64)
    ys = np.array([p[1] for p in ring], dtype=np.float64)
    return float(np.sum(np.hypot(np.roll(xs, -1) - xs, np.roll(ys, -1) - ys)))


def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _ring_self_intersects(ring: Sequence[Point]) -> bool:
    """True if any two non-adjacent edges properly cross."""
    n = len(ring)
    for i in range(n):
        a1 = ring[i]
        a2 = ring[(i + 1) % n]
        for j in range(i + 1, n):
            # skip adjacent edges (they share a vertex by construction)
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1 = ring[j]
            b2 = ring[(j + 1) % n]
            d1 = _cross(a1[0], a1[1], a2[0], a2[1], b1[0], b1[1])
            d2 = _cross(a1[0], a1[1], a2[0], a2[1], b2[0], b2[1])
            d3 = _cross(b1[0], b1[1], b2[0], b2[1], a1[0], a1[1])
            d4 = _cross(b1[0], b1[1], b2[0], b2[1], a2[0], a2[1])
            if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
                return True
    return False


def _validate_ring(ring: tuple[Point, ...], what: str) -> None:
    if len(ring) < 3:
        raise GeometryError(f"{what} has {len(ring)} vertices; need >= 3")
    for k in range(len(ring)):
        if ring[k] == ring[(k + 1) % len(ring)]:
            raise GeometryError(f"{what} has a repeated consecutive vertex at index {k}")
    if abs(_ring_signed_area(ring)) <= _AREA_EPS:
        raise GeometryError(f"{what} is degenerate (zero area)")
    if _ring_self_intersects(ring):
        raise GeometryError(f"{what} self-intersects")


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with optional holes, validated on construction.

    Rejects rings with fewer than 3 vertices, zero area, repeated consecutive
    vertices, or crossing self-intersections. Hole rings must lie inside the
    exterior (checked via their vertices) and must each be smaller than it.
    """

    exterior: tuple[Point, ...]
    holes: tuple[tuple[Point, ...], ...] = ()

    def __init__(self, exterior: Iterable[Sequence[float]],
                 holes: Iterable[Iterable[Sequence[float]]] = ()):
        object.__setattr__(self, "exterior", _as_ring(exterior))
        object.__setattr__(self, "holes", tuple(_as_ring(h) for h in holes))
        _validate_ring(self.exterior, "exterior ring")
        ext_area = abs(_ring_signed_area(self.exterior))
        for i, hole in enumerate(self.holes):
            _validate_ring(hole, f"hole ring {i}")
            if abs(_ring_signed_area(hole)) >= ext_area:
                raise GeometryError(f"hole ring {i} is not smaller than the exterior")
            hx = np.array([p[0] for p in hole])
            hy = np.array([p[1] for p in hole])
            inside = _ring_contains(self.exterior, hx, hy)
            if not bool(np.all(inside)):
                raise GeometryError(f"hole ring {i} is not inside the exterior")

    @property
    def rings(self) -> tuple[tuple[Point, ...], ...]:
        return (self.exterior,) + self.holes

    def bbox(self) -> BBox:
        xs = [p[0] for p in self.exterior]
        ys = [p[1] for p in self.exterior]
        return BBox(min(xs), min(ys), max(xs), max(ys))

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(
            [(x + dx, y + dy) for x, y in self.exterior],
            [[(x + dx, y + dy) for x, y in h] for h in self.holes],
        )

    def scaled(self, s: float) -> "Polygon":
        """Uniform scaling about the origin."""
        return Polygon(
            [(x * s, y * s) for x, y in self.exterior],
            [[(x * s, y * s) for x, y in h] for h in self.holes],
        )


def area(polygon: Polygon) -> float:
    """Shoelace area of the exterior minus the hole areas (>= 0)."""
    total = abs(_ring_signed_area(polygon.exterior))
    for hole in polygon.holes:
        total -= abs(_ring_signed_area(hole))
    return max(total, 0.0)


def perimeter(polygon: Polygon) -> float:
    """Sum of edge lengths of the exterior ring."""
    return _ring_perimeter(polygon.exterior)


def passes_size_filter(polygon: Polygon, size_filter: SizeFilter) -> bool:
    """Area and area-to-perimeter (narrowness) test from the prep pipeline."""
    a = area(polygon)
    p = perimeter(polygon)
    if p <= 0.0:
        return False
    return a >= size_filter.min_area and a / p >= size_filter.min_area_perimeter_ratio


# ---------------------------------------------------------------------------
# point-in-polygon / rasterization
# ---------------------------------------------------------------------------

def _ring_contains(ring: Sequence[Point], px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Even-odd crossing parity of a +x ray, vectorized over query points."""
    inside = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if y1 == y2:
            continue
        cond = (y1 > py) != (y2 > py)
        if not np.any(cond):
            continue
        xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= cond & (px < xint)
    return inside


def points_in_polygon(px: np.ndarray, py: np.ndarray, polygon: Polygon) -> np.ndarray:
    """Even-odd containment over all rings (holes flip parity back out)."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    inside = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    for ring in polygon.rings:
        inside ^= _ring_contains(ring, px, py)
    return inside


def rasterize_mask(polygon: Polygon, bbox: BBox) -> np.ndarray:
    """Binary mask over the (integer-snapped) bbox grid.

    A pixel is set iff its center lies inside the polygon under the even-odd
    rule; hole interiors come out as zeros.
    """
    snapped = bbox.snap_to_pixels()
    w = int(snapped.width)
    h = int(snapped.height)
    if w <= 0 or h <= 0:
        return np.zeros((max(h, 0), max(w, 0)), dtype=np.uint8)
    xs = snapped.x0 + 0.5 + np.arange(w, dtype=np.float64)
    ys = snapped.y0 + 0.5 + np.arange(h, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    return points_in_polygon(gx, gy, polygon).astype(np.uint8)


# ---------------------------------------------------------------------------
# distances and grouping
# ---------------------------------------------------------------------------

def _ring_segments(rings: Sequence[Sequence[Point]]) -> tuple[np.ndarray, np.ndarray]:
    starts = []
    ends = []
    for ring in rings:
        pts = np.array(ring, dtype=np.float64)
        starts.append(pts)
        ends.append(np.roll(pts, -1, axis=0))
    return np.concatenate(starts), np.concatenate(ends)


def _point_segment_dist(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from each point to each segment [a_j, b_j]; shape (n, m)."""
    d = b - a                                     # (m, 2)
    len2 = np.sum(d * d, axis=1)                  # (m,)
    len2 = np.where(len2 == 0.0, 1.0, len2)
    rel = points[:, None, :] - a[None, :, :]      # (n, m, 2)
    t = np.clip(np.sum(rel * d[None, :, :], axis=2) / len2[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * d[None, :, :]
    return np.hypot(points[:, None, 0] - proj[:, :, 0],
                    points[:, None, 1] - proj[:, :, 1])


def _segments_properly_cross(a1, a2, b1, b2) -> bool:
    """Any strict crossing between segment set A (m) and set B (n)."""
    def cross(o, p, q):
        return ((p[..., 0] - o[..., 0]) * (q[..., 1] - o[..., 1])
                - (p[..., 1] - o[..., 1]) * (q[..., 0] - o[..., 0]))

    A1 = a1[:, None, :]
    A2 = a2[:, None, :]
    B1 = b1[None, :, :]
    B2 = b2[None, :, :]
    d1 = cross(A1, A2, B1)
    d2 = cross(A1, A2, B2)
    d3 = cross(B1, B2, A1)
    d4 = cross(B1, B2, A2)
    return bool(np.any(((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0))))


def min_distance(poly_a: Polygon, poly_b: Polygon) -> float:
    """Minimum Euclidean distance between the two boundaries.

    Exact: for non-crossing segments the minimum is attained at a segment
    endpoint, so endpoint-to-segment distances plus a crossing test cover all
    cases. Returns 0.0 when the boundaries touch or cross.
    """
    a1, a2 = _ring_segments(poly_a.rings)
    b1, b2 = _ring_segments(poly_b.rings)
    if _segments_properly_cross(a1, a2, b1, b2):
        return 0.0
    d_ab = _point_segment_dist(a1, b1, b2)
    d_ba = _point_segment_dist(b1, a1, a2)
    return float(min(d_ab.min(), d_ba.min()))


def proximity_groups(polygons: Sequence[Polygon], dist_threshold: float) -> list[list[int]]:
    """Connected components of the proximity graph, found by depth-first search.

    Two polygons are adjacent when min_distance(a, b) <= dist_threshold.
    Returns groups of input indices; each group is sorted and groups are
    ordered by their smallest member, so the output is canonical.
    """
    if dist_threshold < 0:
        raise GeometryError("dist_threshold must be >= 0")
    n = len(polygons)
    adjacent = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if min_distance(polygons[i], polygons[j]) <= dist_threshold:
                adjacent[i].append(j)
                adjacent[j].append(i)
    seen = [False] * n
    groups: list[list[int]] = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        component = []
        while stack:
            v = stack.pop()
            component.append(v)
            for w in adjacent[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        groups.append(sorted(component))
    return groups


# ---------------------------------------------------------------------------
# bounding boxes
# ---------------------------------------------------------------------------

def exact_bbox(polygons: Sequence[Polygon]) -> BBox:
    """Tightest axis-aligned box over all exterior vertices."""
    if not polygons:
        raise GeometryError("exact_bbox of empty polygon list")
    xs: list[float] = []
    ys: list[float] = []
    for poly in polygons:
        xs.extend(p[0] for p in poly.exterior)
        ys.extend(p[1] for p in poly.exterior)
    return BBox(min(xs), min(ys), max(xs), max(ys))


def _expand_axis(lo: float, hi: float, side: float, limit: float) -> tuple[float, float]:
    if side >= limit:
        return 0.0, limit        # section too small: clamp (non-square fallback)
    center = (lo + hi) / 2.0
    new_lo = center - side / 2.0
    if new_lo < 0.0:
        new_lo = 0.0
    elif new_lo + side > limit:
        new_lo = limit - side
    return new_lo, new_lo + side


def square_bbox(bbox: BBox, section_width: float, section_height: float,
                min_dim: float) -> BBox:
    """Square expansion of a bbox, shifted (never shrunk) to stay in-section.

    Side = max(width, height, min_dim), expanded about the bbox center. If the
    section is smaller than the side along an axis, that axis is clamped to the
    full section extent and the result is not square.
    """
    if min_dim <= 0:
        raise GeometryError("min_dim must be > 0")
    side = max(bbox.width, bbox.height, float(min_dim))
    x0, x1 = _expand_axis(bbox.x0, bbox.x1, side, float(section_width))
    y0, y1 = _expand_axis(bbox.y0, bbox.y1, side, float(section_height))
    return BBox(x0, y0, x1, y1)


# ---------------------------------------------------------------------------
# rectangle clipping and overlap fractions
# ---------------------------------------------------------------------------

def _clip_ring_to_rect(ring: Sequence[Point], rect: BBox) -> list[Point]:
    """Sutherland-Hodgman clip of a ring by an axis-aligned rectangle.

    Clip-boundary coordinates are substituted directly into intersection
    points (never recomputed through the parametric form), so clipping
    axis-aligned input against integer rectangles is exact.
    """
    def clip(pts: list[Point], keep, intersect) -> list[Point]:
        out: list[Point] = []
        n = len(pts)
        for i in range(n):
            cur = pts[i]
            nxt = pts[(i + 1) % n]
            cur_in = keep(cur)
            nxt_in = keep(nxt)
            if cur_in:
                out.append(cur)
                if not nxt_in:
                    out.append(intersect(cur, nxt))
            elif nxt_in:
                out.append(intersect(cur, nxt))
        return out

    def ix_at_x(x0):
        def f(p, q):
            t = (x0 - p[0]) / (q[0] - p[0])
            return (x0, p[1] + t * (q[1] - p[1]))
        return f

    def ix_at_y(y0):
        def f(p, q):
            t = (y0 - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), y0)
        return f

    pts = list(ring)
    pts = clip(pts, lambda p: p[0] >= rect.x0, ix_at_x(rect.x0))
    if not pts:
        return []
    pts = clip(pts, lambda p: p[0] <= rect.x1, ix_at_x(rect.x1))
    if not pts:
        return []
    pts = clip(pts, lambda p: p[1] >= rect.y0, ix_at_y(rect.y0))
    if not pts:
        return []
    pts = clip(pts, lambda p: p[1] <= rect.y1, ix_at_y(rect.y1))
    return pts


def _clipped_ring_area(ring: Sequence[Point], rect: BBox) -> float:
    clipped = _clip_ring_to_rect(ring, rect)
    if len(clipped) < 3:
        return 0.0
    return abs(_ring_signed_area(clipped))


def intersection_area(polygon: Polygon, rect: BBox) -> float:
    """Area of polygon (minus holes) inside an axis-aligned rectangle."""
    total = _clipped_ring_area(polygon.exterior, rect)
    for hole in polygon.holes:
        total -= _clipped_ring_area(hole, rect)
    return max(total, 0.0)


def overlap_fraction(tile: BBox, polygon: Polygon) -> float:
    """Fraction of the tile area covered by the polygon, in [0, 1]."""
    if tile.area <= 0:
        raise GeometryError("tile must be non-degenerate")
    frac = intersection_area(polygon, tile) / tile.area
    return min(max(frac, 0.0), 1.0)


def overlap_fraction_pixels(tile: BBox, polygon: Polygon) -> float:
    """Pixel-center counting estimate of overlap_fraction.

    Robust fallback for inputs where exact clipping is unsuitable; also the
    resolution at which tile labels are compared to rasterized ground truth.
    """
    if tile.area <= 0:
        raise GeometryError("tile must be non-degenerate")
    mask = rasterize_mask(polygon, tile)
    if mask.size == 0:
        return 0.0
    return float(mask.sum()) / float(mask.size)
