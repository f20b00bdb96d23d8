"""Polygon and mask primitives: orientation, angles, simplification, containment, IoU.

Coordinate convention used throughout the package: grids are numpy arrays of
shape (H, W) indexed [row, col]; pixel (r, c) covers the unit square
[c, c+1) x [r, r+1) and its center sits at (c + 0.5, r + 0.5). Polygon
vertices live in this continuous (x, y) pixel frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateContourError,
    EmptyMaskError,
    InvalidPolygonError,
)

# Consecutive vertices closer than this are considered coincident.
MIN_VERTEX_SEPARATION = 1e-6


@dataclass(frozen=True)
class Polygon:
    """Closed vertex loop, counter-clockwise, in pixel coordinates.

    The last vertex implicitly connects back to the first. Construction
    normalizes orientation to CCW and rejects degenerate input; it does NOT
    reject self-intersections (the search layer tests for those explicitly
    where the contract requires it).
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise InvalidPolygonError(f"expected (n, 2) vertex array, got shape {v.shape}")
        if len(v) < 3:
            raise InvalidPolygonError(f"polygon needs at least 3 vertices, got {len(v)}")
        if not np.all(np.isfinite(v)):
            raise InvalidPolygonError("vertex coordinates must be finite")
        gaps = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
        if np.any(gaps < MIN_VERTEX_SEPARATION):
            raise InvalidPolygonError(
                f"consecutive vertices closer than {MIN_VERTEX_SEPARATION} px"
            )
        area = _shoelace(v)
        if area == 0.0:
            raise InvalidPolygonError("zero signed area (collinear vertex loop)")
        if area < 0.0:
            v = v[::-1].copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of the vertex set."""
        v = self.vertices
        return (v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max())

    def pixel_window(
        self, grid_shape: tuple[int, int], dilate: int = 0
    ) -> tuple[int, int, int, int]:
        """Integer half-open pixel rect (x0, y0, x1, y1) covering the polygon,
        dilated by `dilate` px and clipped to the grid."""
        h, w = grid_shape
        x_min, y_min, x_max, y_max = self.bbox
        x0 = max(0, int(np.floor(x_min)) - dilate)
        y0 = max(0, int(np.floor(y_min)) - dilate)
        x1 = min(w, int(np.ceil(x_max)) + dilate)
        y1 = min(h, int(np.ceil(y_max)) + dilate)
        return (x0, y0, max(x0, x1), max(y0, y1))

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(self.vertices + np.array([dx, dy]))


def _shoelace(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def signed_area(p: Polygon | np.ndarray) -> float:
    """Shoelace signed area in px^2; positive iff counter-clockwise."""
    v = p.vertices if isinstance(p, Polygon) else np.asarray(p, dtype=np.float64)
    if len(v) < 3:
        raise InvalidPolygonError("signed_area needs at least 3 vertices")
    return _shoelace(v)


def interior_angles(p: Polygon) -> np.ndarray:
    """Interior angle at each vertex, in (0, 2*pi); reflex corners exceed pi.

    At vertex v with neighbors u (previous) and w (next), the turn angle of
    the edge pair is tau = atan2(cross(v-u, w-v), dot(v-u, w-v)); the interior
    angle is pi - tau, which lands in (0, pi) for convex corners of a CCW
    polygon and in (pi, 2*pi) for reflex ones.
    """
    v = p.vertices
    e1 = v - np.roll(v, 1, axis=0)   # incoming edge u -> v
    e2 = np.roll(v, -1, axis=0) - v  # outgoing edge v -> w
    n1 = np.linalg.norm(e1, axis=1)
    n2 = np.linalg.norm(e2, axis=1)
    if np.any(n1 < MIN_VERTEX_SEPARATION) or np.any(n2 < MIN_VERTEX_SEPARATION):
        raise InvalidPolygonError("degenerate zero-length edge")
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    dot = e1[:, 0] * e2[:, 0] + e1[:, 1] * e2[:, 1]
    tau = np.arctan2(cross, dot)
    return np.pi - tau


def _point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point to segment ab."""
    ab = b - a
    denom = float(ab @ ab)
    if denom < MIN_VERTEX_SEPARATION**2:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def simplify_polyline(points: np.ndarray, epsilon: float) -> np.ndarray:
    """Classical Douglas-Peucker on an open polyline; keeps endpoints.

    Returns the retained points (a subset of the input, order preserved).
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        d = _point_segment_distance(pts[i + 1 : j], pts[i], pts[j])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            split = i + 1 + k
            keep[split] = True
            stack.append((i, split))
            stack.append((split, j))
    return pts[keep]


def douglas_peucker(contour: np.ndarray, epsilon: float) -> Polygon:
    """Simplify a closed contour loop into a CCW polygon.

    The loop is split at the point farthest from the first point (the two
    anchors of the closed-curve variant), each half simplified with the
    classical recursion, and the halves rejoined. Every dropped point lies
    within `epsilon` of the output boundary.
    """
    pts = np.asarray(contour, dtype=np.float64)
    if len(pts) < 3:
        raise DegenerateContourError(f"contour has {len(pts)} points, need >= 3")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    far = int(np.argmax(np.linalg.norm(pts - pts[0], axis=1)))
    if far == 0:
        raise DegenerateContourError("contour collapses to a single location")
    first = simplify_polyline(pts[: far + 1], epsilon)
    wrapped = np.concatenate([pts[far:], pts[:1]], axis=0)
    second = simplify_polyline(wrapped, epsilon)
    loop = np.concatenate([first[:-1], second[:-1]], axis=0)
    # Drop coincident consecutive survivors (can appear at the anchors).
    gaps = np.linalg.norm(np.roll(loop, -1, axis=0) - loop, axis=1)
    loop = loop[gaps >= MIN_VERTEX_SEPARATION]
    if len(loop) < 3:
        raise DegenerateContourError("simplification collapsed below 3 vertices")
    try:
        return Polygon(loop)
    except InvalidPolygonError as exc:
        raise DegenerateContourError(f"degenerate simplified contour: {exc}") from exc


@dataclass(frozen=True)
class SegmentMask:
    """Binary occupancy raster for one room segment, full scene size.

    `bbox` is the tight half-open pixel rect (x0, y0, x1, y1) of the set
    pixels, computed at construction.
    """

    grid: np.ndarray
    bbox: tuple[int, int, int, int] = field(init=False)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=bool)
        if g.ndim != 2:
            raise EmptyMaskError(f"mask must be 2-D, got shape {g.shape}")
        rows = np.flatnonzero(g.any(axis=1))
        cols = np.flatnonzero(g.any(axis=0))
        if len(rows) == 0:
            raise EmptyMaskError("mask has no set pixels")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(
            self, "bbox", (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)
        )

    @property
    def area(self) -> int:
        return int(self.grid.sum())

    def dilated_bbox(self, dilate: int) -> tuple[int, int, int, int]:
        """bbox grown by `dilate` px, clipped to the grid."""
        h, w = self.grid.shape
        x0, y0, x1, y1 = self.bbox
        return (max(0, x0 - dilate), max(0, y0 - dilate), min(w, x1 + dilate), min(h, y1 + dilate))


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# Outward half-pixel offset turns the traced pixel-center loop into the true
# region boundary for straight runs and right-angle corners, so a filled
# n x n block traces to a loop enclosing exactly n^2.
_HALF_PX = 0.5


def trace_contour(mask: SegmentMask) -> np.ndarray:
    """Outer boundary loop of the largest 4-connected component, CCW.

    Moore boundary following over the border pixel centers, then each point is
    pushed half a pixel along its outward normal so the loop lies on the true
    region boundary (within half-pixel discretization on diagonal staircases).
    """
    labels, count = ndimage.label(mask.grid, structure=_FOUR_CONN)
    if count == 0:
        raise EmptyMaskError("cannot trace an empty mask")
    if count > 1:
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, count + 1))
        component = labels == (int(np.argmax(sizes)) + 1)
    else:
        component = labels == 1

    centers = _moore_trace(component)
    if len(centers) < 3:
        return _component_corner_loop(component)
    loop = _offset_outward(centers)
    gaps = np.linalg.norm(np.roll(loop, -1, axis=0) - loop, axis=1)
    loop = loop[gaps >= MIN_VERTEX_SEPARATION]
    if len(loop) < 3 or abs(_shoelace(loop)) < 0.5:
        return _component_corner_loop(component)
    if _shoelace(loop) < 0:
        loop = loop[::-1]
    return loop


def _component_corner_loop(component: np.ndarray) -> np.ndarray:
    """Fallback for single-pixel / single-line components: bbox corner loop."""
    rows = np.flatnonzero(component.any(axis=1))
    cols = np.flatnonzero(component.any(axis=0))
    x0, x1 = cols[0], cols[-1] + 1
    y0, y1 = rows[0], rows[-1] + 1
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


# Moore neighborhood in clockwise order starting east, as (dr, dc).
_MOORE = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]


def _moore_trace(component: np.ndarray) -> np.ndarray:
    """Moore-neighbor tracing with Jacob's stopping criterion.

    Returns border pixel centers (x, y) in traversal order; border pixels can
    repeat for one-pixel-wide protrusions, which is fine downstream.
    """
    rows, cols = np.nonzero(component)
    start = (int(rows[0]), int(cols[np.argmin(cols[rows == rows[0]])]))
    h, w = component.shape

    def fg(r: int, c: int) -> bool:
        return 0 <= r < h and 0 <= c < w and component[r, c]

    path = [start]
    # Entered the start pixel moving east from its west neighbor (background,
    # since start is the leftmost pixel of the top row).
    prev_dir = 0
    cur = start
    first_exit_dir = None
    for _ in range(8 * len(rows) + 8):
        # Scan clockwise starting just after the backtrack direction.
        back = (prev_dir + 4) % 8
        found = False
        for k in range(1, 9):
            d = (back + k) % 8
            dr, dc = _MOORE[d]
            nr, nc = cur[0] + dr, cur[1] + dc
            if fg(nr, nc):
                if cur == start:
                    if first_exit_dir is None:
                        first_exit_dir = d
                    elif len(path) > 1 and d == first_exit_dir:
                        # Re-leaving start along the original direction: done.
                        return np.array(
                            [(c + 0.5, r + 0.5) for r, c in path[:-1]], dtype=np.float64
                        )
                cur = (nr, nc)
                path.append(cur)
                prev_dir = d
                found = True
                break
        if not found:
            # Isolated pixel.
            return np.array([(start[1] + 0.5, start[0] + 0.5)], dtype=np.float64)
        if cur == start and len(path) > 1:
            path_arr = path
            # Loop closed; drop the duplicated start.
            return np.array([(c + 0.5, r + 0.5) for r, c in path_arr[:-1]], dtype=np.float64)
    return np.array([(c + 0.5, r + 0.5) for r, c in path], dtype=np.float64)


def _offset_outward(centers: np.ndarray) -> np.ndarray:
    """Push each traced center half a pixel along the outward normal sign."""
    loop = centers
    ccw = _shoelace(loop) > 0
    prev_pts = np.roll(loop, 1, axis=0)
    next_pts = np.roll(loop, -1, axis=0)
    tangent = next_pts - prev_pts
    if ccw:
        normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    else:
        normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    return loop + _HALF_PX * np.sign(normal)


def polygon_iou(
    a: Polygon,
    b: Polygon,
    resolution: int = 256,
    grid_shape: tuple[int, int] | None = None,
) -> float:
    """Raster intersection-over-union of two polygons.

    With `grid_shape` the polygons are rendered on that absolute pixel grid
    (the shared scene grid). Otherwise a local grid covering the joint
    bounding box is used, `resolution` cells across its long side.
    """
    from . import raster  # local import; raster depends on geometry

    if grid_shape is not None:
        ga = raster.render_hard(a, grid_shape).astype(bool)
        gb = raster.render_hard(b, grid_shape).astype(bool)
    else:
        ax0, ay0, ax1, ay1 = a.bbox
        bx0, by0, bx1, by1 = b.bbox
        x0, y0 = min(ax0, bx0), min(ay0, by0)
        x1, y1 = max(ax1, bx1), max(ay1, by1)
        extent = max(x1 - x0, y1 - y0)
        if extent <= 0:
            return 0.0
        scale = resolution / extent
        pad = 1.0 / scale
        shift = np.array([x0 - pad, y0 - pad])
        va = (a.vertices - shift) * scale
        vb = (b.vertices - shift) * scale
        h = int(np.ceil((y1 - y0 + 2 * pad) * scale)) + 1
        w = int(np.ceil((x1 - x0 + 2 * pad) * scale)) + 1
        ga = raster.render_hard(Polygon(va), (h, w)).astype(bool)
        gb = raster.render_hard(Polygon(vb), (h, w)).astype(bool)
    union = np.logical_or(ga, gb).sum()
    if union == 0:
        return 0.0
    inter = np.logical_and(ga, gb).sum()
    return float(inter) / float(union)


def merge_close_vertices(p: Polygon, threshold: float) -> Polygon:
    """Replace runs of mutually close consecutive vertices by their centroid.

    A run is a maximal block of consecutive vertices in which every pair is
    closer than `threshold`. Iterates to a fixpoint, so the operation is
    idempotent. Raises DegenerateContourError if fewer than 3 vertices remain.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    v = p.vertices
    for _ in range(len(v)):
        merged = _merge_pass(v, threshold)
        if len(merged) < 3:
            raise DegenerateContourError("vertex merging collapsed below 3 vertices")
        if len(merged) == len(v):
            break
        v = merged
    try:
        return Polygon(v)
    except InvalidPolygonError as exc:
        raise DegenerateContourError(f"merge produced a degenerate polygon: {exc}") from exc


def _merge_pass(v: np.ndarray, threshold: float) -> np.ndarray:
    n = len(v)
    gaps = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
    # Rotate so index 0 starts a run (its predecessor is far away); if every
    # consecutive pair is close the whole loop collapses to one centroid.
    far = np.flatnonzero(gaps >= threshold)
    if len(far) == 0:
        return v.mean(axis=0, keepdims=True)
    start = (int(far[0]) + 1) % n
    order = np.roll(np.arange(n), -start)
    pts = v[order]
    out: list[np.ndarray] = []
    run = [pts[0]]
    for q in pts[1:]:
        if all(np.linalg.norm(q - r) < threshold for r in run):
            run.append(q)
        else:
            out.append(np.mean(run, axis=0))
            run = [q]
    out.append(np.mean(run, axis=0))
    return np.array(out)


def polygon_is_simple(p: Polygon | np.ndarray) -> bool:
    """True if no two non-adjacent edges intersect (self-intersection test)."""
    v = p.vertices if isinstance(p, Polygon) else np.asarray(p, dtype=np.float64)
    n = len(v)
    segs = [(v[i], v[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # shared endpoint
            if _segments_intersect(segs[i][0], segs[i][1], segs[j][0], segs[j][1]):
                return False
    return True


def _orient(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a: np.ndarray, b: np.ndarray, q: np.ndarray) -> bool:
    return (
        min(a[0], b[0]) - 1e-12 <= q[0] <= max(a[0], b[0]) + 1e-12
        and min(a[1], b[1]) - 1e-12 <= q[1] <= max(a[1], b[1]) + 1e-12
    )


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    if d1 == 0 and _on_segment(q1, q2, p1):
        return True
    if d2 == 0 and _on_segment(q1, q2, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, q1):
        return True
    if d4 == 0 and _on_segment(p1, p2, q2):
        return True
    return False
