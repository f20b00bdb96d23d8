"""Strict room / corner / angle precision-recall metrics.

The hierarchy is nested: a corner can only be recovered if its room is, an
angle only if its corner is. Rooms match greedily: ground-truth rooms in
descending area order each claim the unmatched recovered room with the
highest raster IoU, gated at 0.5 (a gate the matching text needs to keep
1-px slivers from "matching"; exposed for sensitivity checks). Room overlap
uses a 1-px erosion per room, so touching rooms are not penalized.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InternalInvariantError
from .geometry import Polygon, interior_angles
from .raster import GRID_SHAPE, render_hard
from .scene import GroundTruthPlan

MATCH_IOU_GATE = 0.5
CORNER_DIST_PX = 10.0
ANGLE_TOL_DEG = 5.0

_ERODE_1PX = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class MatchResult:
    """Greedy one-to-one room matching."""

    pairs: tuple[tuple[int, int, float], ...]  # (gt index, recovered index, IoU)
    unmatched_gt: tuple[int, ...]
    unmatched_rec: tuple[int, ...]


@dataclass(frozen=True)
class MetricsReport:
    room_precision: float
    room_recall: float
    corner_precision: float
    corner_recall: float
    angle_precision: float
    angle_recall: float
    ma_precision: float
    ma_recall: float

    def as_dict(self) -> dict:
        return {
            "room": {"precision": self.room_precision, "recall": self.room_recall},
            "corner": {"precision": self.corner_precision, "recall": self.corner_recall},
            "angle": {"precision": self.angle_precision, "recall": self.angle_recall},
            "ma": {"precision": self.ma_precision, "recall": self.ma_recall},
        }


def _canonical_key(poly: Polygon) -> tuple:
    return tuple(map(tuple, np.round(poly.vertices, 9)))


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum()) / float(union)


def match_rooms(
    gt: GroundTruthPlan,
    rec: list[Polygon],
    grid_shape: tuple[int, int] = GRID_SHAPE,
    iou_gate: float = MATCH_IOU_GATE,
) -> MatchResult:
    """Largest ground-truth room first, claim the best-IoU recovered room.

    Processing order and tie-breaks are canonical (area, then vertex order),
    so the result does not depend on input list order.
    """
    gt_masks = [render_hard(r, grid_shape).astype(bool) for r in gt.rooms]
    rec_masks = [render_hard(r, grid_shape).astype(bool) for r in rec]
    gt_order = sorted(
        range(len(gt.rooms)),
        key=lambda i: (-abs(float(gt_masks[i].sum())), _canonical_key(gt.rooms[i])),
    )
    available = set(range(len(rec)))
    pairs = []
    for gi in gt_order:
        best_ri, best_iou = -1, 0.0
        for ri in sorted(available, key=lambda r: _canonical_key(rec[r])):
            iou = _mask_iou(gt_masks[gi], rec_masks[ri])
            if iou > best_iou + 1e-12:
                best_ri, best_iou = ri, iou
        if best_ri >= 0 and best_iou >= iou_gate:
            pairs.append((gi, best_ri, best_iou))
            available.remove(best_ri)
    matched_gt = {gi for gi, _, _ in pairs}
    return MatchResult(
        pairs=tuple(sorted(pairs)),
        unmatched_gt=tuple(i for i in range(len(gt.rooms)) if i not in matched_gt),
        unmatched_rec=tuple(sorted(available)),
    )


def room_metric(
    match: MatchResult,
    gt: GroundTruthPlan,
    rec: list[Polygon],
    grid_shape: tuple[int, int] = GRID_SHAPE,
) -> tuple[float, float, set[int]]:
    """(precision, recall, room-TP indices). A recovered room is a true
    positive iff it is matched and, after eroding every room by 1 px, its
    interior intersects no other recovered room."""
    eroded = [
        ndimage.binary_erosion(render_hard(r, grid_shape).astype(bool), structure=_ERODE_1PX)
        for r in rec
    ]
    matched_rec = {ri for _, ri, _ in match.pairs}
    tp: set[int] = set()
    for ri in matched_rec:
        clean = True
        for rj in range(len(rec)):
            if rj != ri and np.any(eroded[ri] & eroded[rj]):
                clean = False
                break
        if clean:
            tp.add(ri)
    precision = len(tp) / len(rec) if rec else 0.0
    recall = len(tp) / len(gt.rooms) if gt.rooms else 0.0
    return precision, recall, tp


def _corner_assignments(
    match: MatchResult, gt: GroundTruthPlan, rec: list[Polygon], room_tp: set[int]
) -> list[tuple[int, int, int, int, float]]:
    """(gt room, gt corner, rec room, rec corner, distance) for every GT corner
    whose nearest recovered corner in the matched room lies within 10 px."""
    out = []
    for gi, ri, _ in match.pairs:
        if ri not in room_tp:
            continue
        rec_verts = rec[ri].vertices
        for ci, g_corner in enumerate(gt.rooms[gi].vertices):
            d = np.linalg.norm(rec_verts - g_corner, axis=1)
            nearest = int(np.argmin(d))
            if d[nearest] <= CORNER_DIST_PX:
                out.append((gi, ci, ri, nearest, float(d[nearest])))
    return out


def corner_metric(
    match: MatchResult,
    gt: GroundTruthPlan,
    rec: list[Polygon],
    room_tp: set[int],
) -> tuple[float, float, set[tuple[int, int]]]:
    """(precision, recall, corner-TP set of (rec room, rec corner)).

    Precision counts every recovered corner in the denominator, including
    corners of unmatched rooms (the strictest reading)."""
    assignments = _corner_assignments(match, gt, rec, room_tp)
    tp = {(ri, vi) for _, _, ri, vi, _ in assignments}
    total_rec = sum(len(r) for r in rec)
    total_gt = sum(len(r) for r in gt.rooms)
    recovered_gt = {(gi, ci) for gi, ci, _, _, _ in assignments}
    precision = len(tp) / total_rec if total_rec else 0.0
    recall = len(recovered_gt) / total_gt if total_gt else 0.0
    return precision, recall, tp


def angle_metric(
    match: MatchResult,
    gt: GroundTruthPlan,
    rec: list[Polygon],
    room_tp: set[int],
    corner_tp: set[tuple[int, int]],
) -> tuple[float, float, set[tuple[int, int]]]:
    """Angle true positive: its corner is a corner-TP and the interior angle
    differs from the corresponding ground-truth angle by strictly less than
    5 degrees."""
    assignments = _corner_assignments(match, gt, rec, room_tp)
    gt_angles = {i: np.degrees(interior_angles(r)) for i, r in enumerate(gt.rooms)}
    rec_angles = {i: np.degrees(interior_angles(r)) for i, r in enumerate(rec)}
    tp: set[tuple[int, int]] = set()
    recovered_gt: set[tuple[int, int]] = set()
    for gi, ci, ri, vi, _ in assignments:
        if (ri, vi) not in corner_tp:
            continue
        if abs(rec_angles[ri][vi] - gt_angles[gi][ci]) < ANGLE_TOL_DEG:
            tp.add((ri, vi))
            recovered_gt.add((gi, ci))
    total_rec = sum(len(r) for r in rec)
    total_gt = sum(len(r) for r in gt.rooms)
    precision = len(tp) / total_rec if total_rec else 0.0
    recall = len(recovered_gt) / total_gt if total_gt else 0.0
    return precision, recall, tp


def evaluate(
    gt: GroundTruthPlan,
    rec: list[Polygon],
    grid_shape: tuple[int, int] = GRID_SHAPE,
    iou_gate: float = MATCH_IOU_GATE,
) -> MetricsReport:
    """Full report; asserts the TP hierarchy before returning."""
    match = match_rooms(gt, rec, grid_shape, iou_gate)
    room_p, room_r, room_tp = room_metric(match, gt, rec, grid_shape)
    corner_p, corner_r, corner_tp = corner_metric(match, gt, rec, room_tp)
    angle_p, angle_r, angle_tp = angle_metric(match, gt, rec, room_tp, corner_tp)

    if not angle_tp <= corner_tp:
        raise InternalInvariantError("angle TPs are not a subset of corner TPs")
    if any(ri not in room_tp for ri, _ in corner_tp):
        raise InternalInvariantError("corner TP belongs to a non-TP room")

    return MetricsReport(
        room_precision=room_p,
        room_recall=room_r,
        corner_precision=corner_p,
        corner_recall=corner_r,
        angle_precision=angle_p,
        angle_recall=angle_r,
        ma_precision=(room_p + corner_p + angle_p) / 3.0,
        ma_recall=(room_r + corner_r + angle_r) / 3.0,
    )
