"""Shared fixtures and independent oracle implementations.

The oracles here deliberately re-derive quantities from first principles
(scalar loops, Monte-Carlo sampling, exhaustive enumeration) so that library
results are checked against code that shares no implementation path with
them.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from nisslkit.geometry import Polygon
from nisslkit.nomenclature import (
    default_policy_path,
    demo_taxonomy_path,
    parse_nomenclature,
    parse_policy,
)


@pytest.fixture(scope="session")
def demo_tree():
    return parse_nomenclature(demo_taxonomy_path())


@pytest.fixture(scope="session")
def demo_policy(demo_tree):
    policy = parse_policy(default_policy_path())
    policy.validate_against(demo_tree)
    return policy


# ---------------------------------------------------------------------------
# geometry oracles
# ---------------------------------------------------------------------------

def oracle_point_in_rings(x: float, y: float, rings) -> bool:
    """Scalar even-odd ray cast over all rings (textbook formulation)."""
    inside = False
    for ring in rings:
        n = len(ring)
        for i in range(n):
            x1, y1 = ring[i]
            x2, y2 = ring[(i + 1) % n]
            if (y1 > y) != (y2 > y):
                x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                if x < x_cross:
                    inside = not inside
    return inside


def oracle_points_in_rings(xs: np.ndarray, ys: np.ndarray, rings) -> np.ndarray:
    out = np.zeros(xs.shape, dtype=bool)
    flat_x = xs.ravel()
    flat_y = ys.ravel()
    flat = out.ravel()
    for k in range(flat_x.size):
        flat[k] = oracle_point_in_rings(float(flat_x[k]), float(flat_y[k]), rings)
    return out


def oracle_monte_carlo_area(polygon: Polygon, n_samples: int, seed: int) -> float:
    """Area estimate by uniform sampling over the polygon's bounding box."""
    rng = np.random.default_rng(seed)
    xs = [p[0] for p in polygon.exterior]
    ys = [p[1] for p in polygon.exterior]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    px = rng.uniform(x0, x1, n_samples)
    py = rng.uniform(y0, y1, n_samples)
    # vectorized even-odd test, written independently of the library
    inside = np.zeros(n_samples, dtype=bool)
    for ring in (polygon.exterior, *polygon.holes):
        ring_arr = np.asarray(ring, dtype=np.float64)
        a = ring_arr
        b = np.roll(ring_arr, -1, axis=0)
        for (x1e, y1e), (x2e, y2e) in zip(a, b):
            if y1e == y2e:
                continue
            crosses = (y1e > py) != (y2e > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_cross = x1e + (py - y1e) * (x2e - x1e) / (y2e - y1e)
            inside ^= crosses & (px < x_cross)
    return float(inside.mean()) * (x1 - x0) * (y1 - y0)


def oracle_pixel_overlap(tile_x0: float, tile_y0: float, tile_size: int,
                         rings) -> float:
    """Fraction of tile pixel centers inside the rings (even-odd)."""
    xs = tile_x0 + 0.5 + np.arange(tile_size, dtype=np.float64)
    ys = tile_y0 + 0.5 + np.arange(tile_size, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    inside = np.zeros(gx.shape, dtype=bool)
    for ring in rings:
        ring_arr = np.asarray(ring, dtype=np.float64)
        a = ring_arr
        b = np.roll(ring_arr, -1, axis=0)
        for (x1e, y1e), (x2e, y2e) in zip(a, b):
            if y1e == y2e:
                continue
            crosses = (y1e > gy) != (y2e > gy)
            x_cross = x1e + (gy - y1e) * (x2e - x1e) / (y2e - y1e)
            inside ^= crosses & (gx < x_cross)
    return float(inside.mean())


def oracle_boundary_samples(polygon: Polygon, n_per_ring: int) -> np.ndarray:
    """Dense, evenly spaced points along every ring boundary."""
    points = []
    for ring in (polygon.exterior, *polygon.holes):
        ring_arr = np.asarray(ring, dtype=np.float64)
        nxt = np.roll(ring_arr, -1, axis=0)
        seg_len = np.hypot(*(nxt - ring_arr).T)
        total = seg_len.sum()
        for (a, b, L) in zip(ring_arr, nxt, seg_len):
            n = max(int(round(n_per_ring * L / total)), 2)
            t = np.linspace(0.0, 1.0, n, endpoint=False)[:, None]
            points.append(a[None, :] + t * (b - a)[None, :])
    return np.concatenate(points)


def oracle_transitive_closure_groups(n: int, adjacent) -> list[list[int]]:
    """Connected components via boolean Floyd-Warshall closure."""
    reach = [[i == j or adjacent(i, j) for j in range(n)] for i in range(n)]
    for k in range(n):
        for i in range(n):
            if reach[i][k]:
                for j in range(n):
                    if reach[k][j]:
                        reach[i][j] = True
    assigned = [None] * n
    groups = []
    for i in range(n):
        if assigned[i] is not None:
            continue
        group = [j for j in range(n) if reach[i][j]]
        for j in group:
            assigned[j] = len(groups)
        groups.append(sorted(group))
    return groups


# ---------------------------------------------------------------------------
# random polygon generators
# ---------------------------------------------------------------------------

def random_star_polygon(rng: np.random.Generator, n_vertices: int = 20,
                        center=(0.0, 0.0), r_min: float = 1.0,
                        r_max: float = 5.0) -> Polygon:
    """Simple polygon, star-shaped about its center (jittered angular grid)."""
    base = np.arange(n_vertices) * (2.0 * np.pi / n_vertices)
    angles = base + rng.uniform(0.15, 0.85, n_vertices) * (2.0 * np.pi / n_vertices)
    radii = rng.uniform(r_min, r_max, n_vertices)
    cx, cy = center
    pts = [(cx + r * math.cos(a), cy + r * math.sin(a))
           for a, r in zip(angles, radii)]
    return Polygon(pts)


# ---------------------------------------------------------------------------
# classification / retrieval oracles
# ---------------------------------------------------------------------------

def oracle_prf(predictions, truths):
    """Brute-force per-class precision/recall/F1 + support-weighted means."""
    classes = sorted(set(predictions) | set(truths))
    per_class = {}
    for cls in classes:
        tp = sum(1 for p, t in zip(predictions, truths) if p == cls and t == cls)
        fp = sum(1 for p, t in zip(predictions, truths) if p == cls and t != cls)
        fn = sum(1 for p, t in zip(predictions, truths) if p != cls and t == cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[cls] = (tp + fn, precision, recall, f1)
    total = sum(s for s, *_ in per_class.values())
    w = [0.0, 0.0, 0.0]
    for support, p, r, f in per_class.values():
        w[0] += support * p / total
        w[1] += support * r / total
        w[2] += support * f / total
    return per_class, tuple(w)


def oracle_recall_at_k(queries, corpus, query_labels, corpus_labels, k,
                       exclude_self=False):
    """Per-query exhaustive sort; returns (mean recall, evaluated, skipped)."""
    fractions = []
    skipped = 0
    for qi in range(len(queries)):
        sims = []
        for ci in range(len(corpus)):
            if exclude_self and ci == qi:
                continue
            sims.append((-float(np.dot(queries[qi], corpus[ci])), ci))
        sims.sort()
        relevant = {ci for ci in range(len(corpus))
                    if corpus_labels[ci] == query_labels[qi]
                    and not (exclude_self and ci == qi)}
        if not relevant:
            skipped += 1
            continue
        top = {ci for _, ci in sims[:k]}
        fractions.append(len(top & relevant) / len(relevant))
    mean = sum(fractions) / len(fractions) if fractions else 0.0
    return mean, len(fractions), skipped
