"""From segment masks to the search action space: merge, polygonize, dedupe.

Each room segment is polygonized at several simplification scales
epsilon = d * L (L = traced contour perimeter, d from the simplification set,
coarse to fine). Polygons that end up with the same vertex count are
near-duplicates; only the coarsest is kept. Segment pairs that overlap by
more than 5% of the smaller one additionally contribute their union as a new
segment, keeping both originals.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateContourError, EmptySceneError, InputError
from .geometry import Polygon, SegmentMask, douglas_peucker, trace_contour

# Simplification scales, coarse to fine.
DEFAULT_SIMPLIFICATION_SET = (0.04, 0.02, 0.01)

MERGE_OVERLAP_FRACTION = 0.05


@dataclass(frozen=True)
class RoomSegment:
    """One hypothesized room footprint."""

    mask: SegmentMask
    detection_score: float = 1.0
    id: int = 0


def merge_overlapping_segments(segments: list[RoomSegment]) -> list[RoomSegment]:
    """Append the union of every significantly overlapping pair.

    Overlap is measured against the smaller segment's area; the 5% rule is
    scale-free that way. Originals are always kept. Single pass over pairs:
    unions of unions are not formed.
    """
    out = list(segments)
    next_id = max((s.id for s in segments), default=-1) + 1
    for i in range(len(segments)):
        for j in range(i + 1, len(segments)):
            a, b = segments[i], segments[j]
            inter = np.logical_and(a.mask.grid, b.mask.grid).sum()
            smaller = min(a.mask.area, b.mask.area)
            if smaller > 0 and inter / smaller > MERGE_OVERLAP_FRACTION:
                union = np.logical_or(a.mask.grid, b.mask.grid)
                out.append(
                    RoomSegment(
                        mask=SegmentMask(union),
                        detection_score=max(a.detection_score, b.detection_score),
                        id=next_id,
                    )
                )
                next_id += 1
    return out


def polygonize_segment(
    segment: RoomSegment, dset: tuple[float, ...] = DEFAULT_SIMPLIFICATION_SET
) -> list[Polygon]:
    """One polygon per simplification scale, deduplicated by vertex count.

    Returns an empty list when every scale degenerates (segment unusable).
    """
    if len(dset) == 0:
        raise InputError("simplification set must not be empty")
    for d in dset:
        if not (0.0 < d < 0.25):
            raise InputError(f"simplification scale {d} outside (0, 0.25)")
    try:
        contour = trace_contour(segment.mask)
    except Exception:
        return []
    closed = np.concatenate([contour, contour[:1]], axis=0)
    perimeter = float(np.linalg.norm(np.diff(closed, axis=0), axis=1).sum())
    if perimeter <= 0:
        return []
    polys: list[Polygon] = []
    seen_counts: set[int] = set()
    for d in sorted(dset, reverse=True):  # coarse first; dedup keeps the coarser
        try:
            poly = douglas_peucker(contour, d * perimeter)
        except DegenerateContourError:
            continue
        if len(poly) in seen_counts:
            continue
        seen_counts.add(len(poly))
        polys.append(poly)
    return polys


@dataclass(frozen=True)
class ProposalSet:
    """Per-segment candidate polygons; the action space of the search."""

    segments: tuple[RoomSegment, ...]
    proposals: tuple[tuple[Polygon, ...], ...]
    simplification_set: tuple[float, ...] = DEFAULT_SIMPLIFICATION_SET

    def __post_init__(self):
        if len(self.segments) != len(self.proposals):
            raise InputError("segments and proposal lists must be parallel")

    @property
    def segment_count(self) -> int:
        return len(self.segments)

    def option_count(self, segment_index: int) -> int:
        """Number of moves for a segment: its proposals plus the skip move."""
        return len(self.proposals[segment_index]) + 1

    def options(self, segment_index: int) -> list[int | None]:
        """Move encoding: proposal indices in order, skip (None) last."""
        return list(range(len(self.proposals[segment_index]))) + [None]

    @property
    def leaf_count(self) -> int:
        total = 1
        for i in range(self.segment_count):
            total *= self.option_count(i)
        return total


def build_proposal_set(
    segments: list[RoomSegment], dset: tuple[float, ...] = DEFAULT_SIMPLIFICATION_SET
) -> ProposalSet:
    """Merge, order (area descending, id tie-break), polygonize, drop unusables."""
    merged = merge_overlapping_segments(segments)
    merged.sort(key=lambda s: (-s.mask.area, s.id))
    kept_segments: list[RoomSegment] = []
    kept_proposals: list[tuple[Polygon, ...]] = []
    for seg in merged:
        polys = polygonize_segment(seg, dset)
        if polys:
            kept_segments.append(seg)
            kept_proposals.append(tuple(polys))
    if not kept_segments:
        raise EmptySceneError("no usable segments after polygonization")
    return ProposalSet(tuple(kept_segments), tuple(kept_proposals), tuple(dset))
