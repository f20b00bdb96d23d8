"""Scenes: density maps from point clouds, ground truth, synthesis, file I/O.

A scene on disk is a directory:

    density.pgm    16-bit big-endian P5, values/65535 = density in [0, 1]
    density.json   sidecar {schema_version, scale, offset_x, offset_y}
    segments.json  RLE segment masks with detection scores (or segments.png,
                   a 16-bit label image where value k > 0 marks segment k)
    plan.json      optional ground-truth room polygons

See FORMATS.md for the byte-level details.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import formats, raster
from .errors import EmptySceneError, InputError, InternalInvariantError, ParseError
from .geometry import Polygon, SegmentMask
from .proposals import RoomSegment

GRID_SHAPE = raster.GRID_SHAPE
_PROJECTION_MARGIN_PX = 4  # free border so refinement can exceed initial extents


@dataclass(frozen=True)
class WorldTransform:
    """Uniform meters-to-pixels map: px = (world - offset) * scale."""

    scale: float = 1.0
    offset_x: float = 0.0
    offset_y: float = 0.0


@dataclass(frozen=True)
class PointCloud:
    """Raw (x, y, z) points in meters."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"point cloud must be (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class DensityMap:
    """Top-view density grid, values in [0, 1]."""

    grid: np.ndarray
    transform: WorldTransform = WorldTransform()

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 2:
            raise InputError(f"density grid must be 2-D, got shape {g.shape}")
        if g.size and (g.min() < 0.0 or g.max() > 1.0):
            raise InputError("density values must lie in [0, 1]")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)


@dataclass(frozen=True)
class GroundTruthPlan:
    """Ground-truth rooms in pixel coordinates."""

    rooms: tuple[Polygon, ...]

    def __post_init__(self):
        object.__setattr__(self, "rooms", tuple(self.rooms))

    def validate_overlaps(self, grid_shape: tuple[int, int] = GRID_SHAPE) -> None:
        """Assert pairwise interior overlap stays within the 1-px band."""
        eroded = [
            ndimage.binary_erosion(raster.render_hard(r, grid_shape).astype(bool))
            for r in self.rooms
        ]
        for i in range(len(eroded)):
            for j in range(i + 1, len(eroded)):
                if np.any(eroded[i] & eroded[j]):
                    raise InternalInvariantError(
                        f"ground-truth rooms {i} and {j} overlap beyond the 1-px band"
                    )


def density_from_points(pc: PointCloud) -> DensityMap:
    """Orthographic top-view histogram normalized so the peak count is 1.0.

    A single uniform scale maps the cloud into the 256x256 frame with a 4-px
    margin; the shorter axis is centered, preserving the aspect ratio.
    """
    pts = pc.points
    if len(pts) == 0:
        raise EmptySceneError("cannot build a density map from an empty point cloud")
    h, w = GRID_SHAPE
    x, y = pts[:, 0], pts[:, 1]
    extent_x = float(x.max() - x.min())
    extent_y = float(y.max() - y.min())
    usable = min(w, h) - 2 * _PROJECTION_MARGIN_PX
    extent = max(extent_x, extent_y)
    scale = usable / extent if extent > 0 else 1.0
    off_x = float(x.min()) - (_PROJECTION_MARGIN_PX + (usable - extent_x * scale) / 2.0) / scale
    off_y = float(y.min()) - (_PROJECTION_MARGIN_PX + (usable - extent_y * scale) / 2.0) / scale
    col = np.clip(((x - off_x) * scale).astype(int), 0, w - 1)
    row = np.clip(((y - off_y) * scale).astype(int), 0, h - 1)
    counts = np.zeros(GRID_SHAPE)
    np.add.at(counts, (row, col), 1.0)
    grid = counts / counts.max()
    return DensityMap(grid, WorldTransform(scale, off_x, off_y))


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Knobs for the desk-scale scene generator; deterministic in `seed`."""

    room_count: tuple[int, int] = (3, 6)
    snap: int = 4
    jitter_sigma: float = 0.0
    wall_density: float = 0.9
    clutter_density: float = 0.08
    false_positive_prob: float = 0.0
    split_prob: float = 0.0
    non_manhattan_prob: float = 0.0
    seed: int = 0
    min_room_side: int = 36

    def __post_init__(self):
        lo, hi = self.room_count
        if lo < 1 or hi < lo:
            raise InputError(f"invalid room_count range {self.room_count}")
        for name in ("false_positive_prob", "split_prob", "non_manhattan_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise InputError(f"{name}={p} outside [0, 1]")
        if self.snap < 1:
            raise InputError("snap must be >= 1 px")


def _bsp_cells(
    rng: np.random.Generator, region: tuple[int, int, int, int], count: int, snap: int, min_side: int
) -> list[tuple[int, int, int, int]]:
    cells = [region]
    guard = 0
    while len(cells) < count:
        guard += 1
        if guard > 200:
            raise InternalInvariantError("room layout failed to converge")
        cells.sort(key=lambda c: -(c[2] - c[0]) * (c[3] - c[1]))
        for idx, (x0, y0, x1, y1) in enumerate(cells):
            spans = [(x1 - x0, 0), (y1 - y0, 1)]
            spans.sort(reverse=True)
            done = False
            for _, axis in spans:
                lo = (x0 if axis == 0 else y0) + min_side
                hi = (x1 if axis == 0 else y1) - min_side
                first = -(-lo // snap) * snap
                candidates = np.arange(first, hi + 1, snap)
                if len(candidates) == 0:
                    continue
                cut = int(rng.choice(candidates))
                if axis == 0:
                    a, b = (x0, y0, cut, y1), (cut, y0, x1, y1)
                else:
                    a, b = (x0, y0, x1, cut), (x0, cut, x1, y1)
                cells[idx : idx + 1] = [a, b]
                done = True
                break
            if done:
                break
        else:
            break  # nothing splittable; fewer rooms than asked
    return cells


def _chamfer_corner(rect: list[tuple[float, float]], corner: int, cut: float) -> list[tuple[float, float]]:
    n = len(rect)
    v = np.array(rect[corner])
    u = np.array(rect[(corner - 1) % n])
    w = np.array(rect[(corner + 1) % n])
    p1 = v + cut * (u - v) / np.linalg.norm(u - v)
    p2 = v + cut * (w - v) / np.linalg.norm(w - v)
    out = [np.array(q) for q in rect]
    out[corner : corner + 1] = [p1, p2]
    return [tuple(q) for q in out]


def _jitter_mask(mask: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Mimic a detector mask: rounded corners plus smooth boundary wobble.

    Detector masks are characteristically too smooth, so the wobble is
    long-wavelength (correlation ~8 px) with boundary displacement std of
    ~`sigma` pixels, and the size bias is erosion-only (undersized masks);
    dilation would make neighboring masks overlap and trip the merge rule,
    which real instance masks rarely do.
    """
    field = ndimage.gaussian_filter(mask.astype(np.float64), sigma=2.0)
    noise = ndimage.gaussian_filter(rng.standard_normal(mask.shape), sigma=8.0)
    noise = np.clip(noise / max(noise.std(), 1e-9), -2.5, 2.5)
    # ~0.2/px boundary slope of the smoothed occupancy field.
    wobbled = field + 0.2 * sigma * noise >= 0.5
    if rng.random() < 0.5:
        wobbled = ndimage.binary_erosion(wobbled)
    wobbled = ndimage.binary_fill_holes(wobbled)
    labels, count = ndimage.label(wobbled)
    if count == 0:
        return mask
    if count > 1:
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, count + 1))
        wobbled = labels == (int(np.argmax(sizes)) + 1)
    return wobbled


def generate_synthetic_scene(
    spec: SyntheticSceneSpec,
) -> tuple[DensityMap, list[RoomSegment], GroundTruthPlan]:
    """Generate (density, segments, ground truth); deterministic in spec.seed."""
    rng = np.random.default_rng(spec.seed)
    h, w = GRID_SHAPE
    count = int(rng.integers(spec.room_count[0], spec.room_count[1] + 1))

    side = int(round(np.sqrt(count) * 52)) + int(rng.integers(-8, 16))
    rw = int(np.clip(side + int(rng.integers(-12, 12)), 96, w - 24))
    rh = int(np.clip(side + int(rng.integers(-12, 12)), 96, h - 24))
    rx0 = spec.snap * (((w - rw) // 2) // spec.snap)
    ry0 = spec.snap * (((h - rh) // 2) // spec.snap)
    cells = _bsp_cells(rng, (rx0, ry0, rx0 + rw, ry0 + rh), count, spec.snap, spec.min_room_side)

    rooms: list[Polygon] = []
    for x0, y0, x1, y1 in cells:
        rect = [(float(x0), float(y0)), (float(x1), float(y0)), (float(x1), float(y1)), (float(x0), float(y1))]
        if rng.random() < spec.non_manhattan_prob:
            corner = int(rng.integers(0, 4))
            cut = float(spec.snap * rng.integers(3, 5))
            rect = _chamfer_corner(rect, corner, cut)
        rooms.append(Polygon(np.array(rect)))
    gt = GroundTruthPlan(tuple(rooms))
    gt.validate_overlaps(GRID_SHAPE)

    renders = [raster.render_hard(r, GRID_SHAPE).astype(bool) for r in rooms]

    # Density: per-room 1-px wall bands (shared walls get one from each side),
    # a 2-px outer shell, sparse interior clutter, and background speckle.
    density = np.zeros(GRID_SHAPE)
    union = np.zeros(GRID_SHAPE, dtype=bool)
    for r in renders:
        union |= r
    walls = np.zeros(GRID_SHAPE, dtype=bool)
    for r in renders:
        walls |= r & ~ndimage.binary_erosion(r)
    walls |= union & ~ndimage.binary_erosion(union, iterations=2)
    interior = union & ~walls
    clutter_sel = interior & (rng.random(GRID_SHAPE) < 0.4)
    density[clutter_sel] = rng.uniform(0.25, 1.9, int(clutter_sel.sum())) * spec.clutter_density
    speckle = (~union) & (rng.random(GRID_SHAPE) < 0.004)
    density[speckle] = rng.uniform(0.0, 0.25, int(speckle.sum()))
    density[walls] = rng.uniform(0.8, 1.0, int(walls.sum())) * (spec.wall_density / 0.9)

    # Segment masks, optionally jittered, with optional split / false positive.
    seg_masks: list[np.ndarray] = []
    for r in renders:
        seg_masks.append(_jitter_mask(r, spec.jitter_sigma, rng) if spec.jitter_sigma > 0 else r)

    if len(seg_masks) > 0 and rng.random() < spec.split_prob:
        victim = int(rng.integers(0, len(seg_masks)))
        m = seg_masks[victim]
        rows = np.flatnonzero(m.any(axis=1))
        cols = np.flatnonzero(m.any(axis=0))
        wide = (cols[-1] - cols[0]) >= (rows[-1] - rows[0])
        lo, hi = (cols[0], cols[-1]) if wide else (rows[0], rows[-1])
        cut = int(lo + (hi - lo) * (0.45 + 0.1 * rng.random()))
        overlap = max(3, int(0.1 * (hi - lo)))
        coords = np.arange(GRID_SHAPE[1] if wide else GRID_SHAPE[0])
        band_a = coords <= cut + overlap
        band_b = coords >= cut - overlap
        if wide:
            half_a, half_b = m & band_a[None, :], m & band_b[None, :]
        else:
            half_a, half_b = m & band_a[:, None], m & band_b[:, None]
        if half_a.any() and half_b.any():
            seg_masks[victim : victim + 1] = [half_a, half_b]

    if rng.random() < spec.false_positive_prob:
        for _ in range(50):
            fw = int(rng.integers(24, 44))
            fh = int(rng.integers(24, 44))
            fx = int(rng.integers(4, w - fw - 4))
            fy = int(rng.integers(4, h - fh - 4))
            blob = np.zeros(GRID_SHAPE, dtype=bool)
            blob[fy : fy + fh, fx : fx + fw] = True
            if (blob & union).sum() < 0.3 * blob.sum():
                if spec.jitter_sigma > 0:
                    blob = _jitter_mask(blob, spec.jitter_sigma, rng)
                seg_masks.append(blob)
                sel = blob & (rng.random(GRID_SHAPE) < 0.5)
                density[sel] = np.maximum(density[sel], rng.uniform(0.05, 0.2, int(sel.sum())))
                break

    density = np.round(np.clip(density, 0.0, 1.0) * 65535.0) / 65535.0
    segments = [
        RoomSegment(mask=SegmentMask(m), detection_score=float(rng.uniform(0.8, 0.99)), id=i)
        for i, m in enumerate(seg_masks)
    ]
    if not segments:
        raise EmptySceneError("generator produced no segments")
    return DensityMap(density), segments, gt


# ---------------------------------------------------------------------------
# Scene and plan I/O
# ---------------------------------------------------------------------------

def save_plan(path: Path, plan: GroundTruthPlan | list[Polygon]) -> None:
    rooms = plan.rooms if isinstance(plan, GroundTruthPlan) else plan
    doc = {
        "schema_version": formats.SCHEMA_VERSION,
        "rooms": [[[float(x), float(y)] for x, y in room.vertices] for room in rooms],
    }
    formats.dump_json(path, doc)


def load_plan(path: Path) -> GroundTruthPlan:
    doc = formats.read_json_doc(Path(path), required_keys={"rooms"})
    rooms = []
    for i, verts in enumerate(doc["rooms"]):
        if not isinstance(verts, list) or len(verts) < 3:
            raise ParseError(
                f"{path}: room {i} has {len(verts) if isinstance(verts, list) else '?'} "
                "vertices, need at least 3"
            )
        try:
            rooms.append(Polygon(np.array(verts, dtype=np.float64)))
        except Exception as exc:
            raise ParseError(f"{path}: room {i}: {exc}") from exc
    return GroundTruthPlan(tuple(rooms))


def save_scene(
    out_dir: Path,
    density: DensityMap,
    segments: list[RoomSegment],
    gt: GroundTruthPlan | None = None,
    segment_format: str = "rle",
) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    formats.write_pgm16(out_dir / "density.pgm", density.grid)
    formats.dump_json(
        out_dir / "density.json",
        {
            "schema_version": formats.SCHEMA_VERSION,
            "scale": density.transform.scale,
            "offset_x": density.transform.offset_x,
            "offset_y": density.transform.offset_y,
        },
    )
    if segment_format == "rle":
        formats.dump_json(
            out_dir / "segments.json",
            {
                "schema_version": formats.SCHEMA_VERSION,
                "height": density.grid.shape[0],
                "width": density.grid.shape[1],
                "segments": [
                    {
                        "id": seg.id,
                        "score": seg.detection_score,
                        "rle": formats.mask_to_rle(seg.mask.grid),
                    }
                    for seg in segments
                ],
            },
        )
    elif segment_format == "png":
        labels = np.zeros(density.grid.shape, dtype=np.uint16)
        for seg in segments:
            labels[seg.mask.grid] = seg.id + 1
        formats.write_label_png(out_dir / "segments.png", labels)
    else:
        raise InputError(f"unknown segment format {segment_format!r}")
    if gt is not None:
        save_plan(out_dir / "plan.json", gt)


def load_scene(path: Path) -> tuple[DensityMap, list[RoomSegment], GroundTruthPlan | None]:
    scene_dir = Path(path)
    if not scene_dir.is_dir():
        raise InputError(f"scene directory not found: {scene_dir}")
    pgm = scene_dir / "density.pgm"
    if not pgm.exists():
        raise InputError(f"missing density file: {pgm}")
    grid = formats.read_pgm(pgm)
    sidecar = scene_dir / "density.json"
    transform = WorldTransform()
    if sidecar.exists():
        doc = formats.read_json_doc(sidecar, required_keys={"scale", "offset_x", "offset_y"})
        transform = WorldTransform(float(doc["scale"]), float(doc["offset_x"]), float(doc["offset_y"]))
    density = DensityMap(grid, transform)

    segments = load_segments(scene_dir, grid.shape)

    plan_path = scene_dir / "plan.json"
    gt = load_plan(plan_path) if plan_path.exists() else None
    return density, segments, gt


def load_segments(scene_dir: Path, grid_shape: tuple[int, int]) -> list[RoomSegment]:
    rle_path = Path(scene_dir) / "segments.json"
    png_path = Path(scene_dir) / "segments.png"
    if rle_path.exists():
        doc = formats.read_json_doc(rle_path, required_keys={"height", "width", "segments"})
        shape = (int(doc["height"]), int(doc["width"]))
        if shape != tuple(grid_shape):
            raise ParseError(f"{rle_path}: segment grid {shape} does not match density {grid_shape}")
        out = []
        for i, entry in enumerate(doc["segments"]):
            if not isinstance(entry, dict) or "rle" not in entry:
                raise ParseError(f"{rle_path}: segment {i}: expected an object with an 'rle' key")
            mask = formats.rle_to_mask(entry["rle"], shape, rle_path, i)
            out.append(
                RoomSegment(
                    mask=SegmentMask(mask),
                    detection_score=float(entry.get("score", 1.0)),
                    id=int(entry.get("id", i)),
                )
            )
        return out
    if png_path.exists():
        labels = formats.read_label_png(png_path)
        if labels.shape != tuple(grid_shape):
            raise ParseError(f"{png_path}: label grid {labels.shape} does not match density {grid_shape}")
        out = []
        for k in np.unique(labels):
            if k <= 0:
                continue
            out.append(RoomSegment(mask=SegmentMask(labels == k), detection_score=1.0, id=int(k)))
        return out
    raise InputError(f"no segments.json or segments.png in {scene_dir}")


def scene_config_dict(spec: SyntheticSceneSpec) -> dict:
    """Plain-dict view of a spec (manifest/reporting helper)."""
    return dataclasses.asdict(spec)
