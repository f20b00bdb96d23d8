"""Hard and differentiable soft rendering of polygons onto scalar grids.

Hard rendering sets a pixel to 1 exactly when its center lies inside the
polygon (winding number). Soft rendering replaces the sign factor of the
winding sum with the saturating fraction c*det / (1 + |c*det|), which makes
every pixel value differentiable with respect to every vertex coordinate.
Soft evaluation is restricted to a bounding-box window; values outside the
window are exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import OnBoundaryError
from .geometry import Polygon

# Shared scene grid (rows, cols).
GRID_SHAPE = (256, 256)

# Soft render windows: segment/polygon bbox grown by this many pixels, so
# refinement can move shapes slightly beyond the detected extent.
BBOX_DILATE_PX = 8

# Distance below which a query point counts as lying on the boundary.
ON_BOUNDARY_EPS = 1e-9

# Displacement applied to a pixel sample that coincides with a vertex.
SAMPLE_NUDGE = 1e-4

Window = tuple[int, int, int, int]  # (x0, y0, x1, y1), half-open pixel rect


@dataclass(frozen=True)
class SoftRenderParams:
    """Sharpness constant and optional evaluation window for soft rendering."""

    c: float = 1000.0
    bbox: Window | None = None

    def __post_init__(self):
        if not (self.c > 0):
            raise ValueError("sharpness constant c must be > 0")


def winding_hard(m, p: Polygon) -> int:
    """1 if point m is inside the (simple, CCW) polygon, else 0.

    Raises OnBoundaryError when m lies within 1e-9 px of an edge or vertex;
    the caller decides how to perturb.
    """
    mx, my = float(m[0]), float(m[1])
    px = np.array([mx])
    py = np.array([my])
    if _kernels.min_edge_distance(p.vertices, px, py)[0] < ON_BOUNDARY_EPS:
        raise OnBoundaryError(f"point ({mx}, {my}) lies on the polygon boundary")
    w = _kernels.hard_values(p.vertices, px, py)[0]
    return int(np.rint(w))


def winding_soft(m, p: Polygon, params: SoftRenderParams = SoftRenderParams()) -> float:
    """Saturating-sign winding value at point m; ~1 inside, ~0 outside."""
    px = np.array([float(m[0])])
    py = np.array([float(m[1])])
    return float(_kernels.soft_values(p.vertices, px, py, params.c)[0])


def _window_centers(window: Window) -> tuple[np.ndarray, np.ndarray]:
    x0, y0, x1, y1 = window
    xs = np.arange(x0, x1, dtype=np.float64) + 0.5
    ys = np.arange(y0, y1, dtype=np.float64) + 0.5
    X, Y = np.meshgrid(xs, ys)
    return X.ravel(), Y.ravel()


def _nudge_vertex_coincident(
    px: np.ndarray, py: np.ndarray, verts: np.ndarray, window: Window
) -> None:
    """Displace pixel samples that coincide with a vertex toward the window
    center by SAMPLE_NUDGE px (in place). Pixel centers sit on half-integer
    pairs, so an O(n) vertex scan finds every coincidence."""
    x0, y0, x1, y1 = window
    if x1 <= x0 or y1 <= y0:
        return
    cx = (x0 + x1) / 2.0
    cy = (y0 + y1) / 2.0
    w = x1 - x0
    for vx, vy in verts:
        fx, fy = vx - 0.5, vy - 0.5
        rx, ry = round(fx), round(fy)
        if abs(fx - rx) < ON_BOUNDARY_EPS and abs(fy - ry) < ON_BOUNDARY_EPS:
            if x0 <= rx < x1 and y0 <= ry < y1:
                k = (int(ry) - y0) * w + (int(rx) - x0)
                dx, dy = cx - px[k], cy - py[k]
                norm = np.hypot(dx, dy)
                if norm == 0:
                    dx, dy, norm = 1.0, 0.0, 1.0
                px[k] += SAMPLE_NUDGE * dx / norm
                py[k] += SAMPLE_NUDGE * dy / norm


def _hard_window_values(p: Polygon, window: Window) -> np.ndarray:
    x0, y0, x1, y1 = window
    if x1 <= x0 or y1 <= y0:
        return np.zeros((max(0, y1 - y0), max(0, x1 - x0)))
    px, py = _window_centers(window)
    _nudge_vertex_coincident(px, py, p.vertices, window)
    w = _kernels.hard_values(p.vertices, px, py)
    # Samples on an edge sum to a half-integer winding; displace and retry.
    bad = np.flatnonzero(np.abs(w - np.rint(w)) > 0.25)
    if len(bad) > 0:
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        bx, by = px[bad], py[bad]
        dx, dy = cx - bx, cy - by
        norm = np.hypot(dx, dy)
        norm[norm == 0] = 1.0
        w[bad] = _kernels.hard_values(
            p.vertices, bx + SAMPLE_NUDGE * dx / norm, by + SAMPLE_NUDGE * dy / norm
        )
    return np.rint(w).reshape(y1 - y0, x1 - x0)


def render_hard(p: Polygon, grid_shape: tuple[int, int] = GRID_SHAPE) -> np.ndarray:
    """Binary image of the polygon: 1.0 at pixel centers inside, else 0.0."""
    grid = np.zeros(grid_shape)
    window = p.pixel_window(grid_shape, dilate=1)
    x0, y0, x1, y1 = window
    if x1 > x0 and y1 > y0:
        grid[y0:y1, x0:x1] = np.clip(_hard_window_values(p, window), 0.0, 1.0)
    return grid


def _resolve_window(p: Polygon, params: SoftRenderParams, grid_shape) -> Window:
    if params.bbox is not None:
        h, w = grid_shape
        x0, y0, x1, y1 = params.bbox
        x0, y0 = max(0, int(x0)), max(0, int(y0))
        x1, y1 = min(w, int(x1)), min(h, int(y1))
        return (x0, y0, max(x0, x1), max(y0, y1))
    return p.pixel_window(grid_shape, dilate=BBOX_DILATE_PX)


def render_soft(
    p: Polygon,
    params: SoftRenderParams = SoftRenderParams(),
    grid_shape: tuple[int, int] = GRID_SHAPE,
) -> np.ndarray:
    """Soft occupancy image, evaluated inside the window only (0 elsewhere)."""
    grid = np.zeros(grid_shape)
    window = _resolve_window(p, params, grid_shape)
    x0, y0, x1, y1 = window
    if x1 <= x0 or y1 <= y0:
        return grid
    px, py = _window_centers(window)
    _nudge_vertex_coincident(px, py, p.vertices, window)
    vals = _kernels.soft_values(p.vertices, px, py, params.c)
    grid[y0:y1, x0:x1] = vals.reshape(y1 - y0, x1 - x0)
    return grid


def render_soft_with_grad(
    p: Polygon,
    params: SoftRenderParams = SoftRenderParams(),
    grid_shape: tuple[int, int] = GRID_SHAPE,
) -> tuple[np.ndarray, np.ndarray, Window]:
    """Soft render plus the per-pixel Jacobian.

    Returns (grid, grad, window): `grid` is scene-sized with values only in
    `window`; `grad` has shape (n_vertices, 2, wh, ww) holding d(pixel)/d(coord)
    for the window pixels.
    """
    grid = np.zeros(grid_shape)
    window = _resolve_window(p, params, grid_shape)
    x0, y0, x1, y1 = window
    n = len(p)
    if x1 <= x0 or y1 <= y0:
        return grid, np.zeros((n, 2, 0, 0)), window
    px, py = _window_centers(window)
    _nudge_vertex_coincident(px, py, p.vertices, window)
    vals, grad = _kernels.soft_values_grad(p.vertices, px, py, params.c)
    grid[y0:y1, x0:x1] = vals.reshape(y1 - y0, x1 - x0)
    return grid, grad.reshape(n, 2, y1 - y0, x1 - x0), window


def compose_indexed(
    polys: list[Polygon], grid_shape: tuple[int, int] = GRID_SHAPE
) -> np.ndarray:
    """Index-labeled composition: sum over i of (i+1) * hard_render(P_i)."""
    grid = np.zeros(grid_shape)
    for i, p in enumerate(polys, start=1):
        grid += i * render_hard(p, grid_shape)
    return grid


def compose_sum(
    polys: list[Polygon],
    grid_shape: tuple[int, int] = GRID_SHAPE,
    soft: bool = False,
    params: SoftRenderParams = SoftRenderParams(),
) -> np.ndarray:
    """Elementwise sum of individual renders (hard by default)."""
    grid = np.zeros(grid_shape)
    for p in polys:
        if soft:
            grid += render_soft(p, params, grid_shape)
        else:
            grid += render_hard(p, grid_shape)
    return grid


def total_variation(g: np.ndarray) -> float:
    """Sum of absolute forward differences, zero-padded past the last row/col."""
    dx = np.diff(g, axis=1, append=0.0)
    dy = np.diff(g, axis=0, append=0.0)
    return float(np.abs(dx).sum() + np.abs(dy).sum())


def total_variation_grad(g: np.ndarray) -> tuple[float, np.ndarray]:
    """Total variation and its (sub)gradient with respect to the grid."""
    dx = np.diff(g, axis=1, append=0.0)
    dy = np.diff(g, axis=0, append=0.0)
    tv = float(np.abs(dx).sum() + np.abs(dy).sum())
    sx = np.sign(dx)
    sy = np.sign(dy)
    grad = -sx - sy
    grad[:, 1:] += sx[:, :-1]
    grad[1:, :] += sy[:-1, :]
    return tv, grad
