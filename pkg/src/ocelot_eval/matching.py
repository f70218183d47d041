"""Confidence-ordered greedy matching of predicted to annotated cells.

Predictions are visited by descending confidence.  Each one claims the
nearest still-unclaimed ground-truth cell of the same class if that cell is
within the hit radius (distance equal to the radius counts as a hit),
otherwise it is a false positive.  Unclaimed ground truth ends up as false
negatives.  The matching is greedy on purpose; no optimal assignment.

Ties are broken deterministically:

* equal confidence: smaller ``(y, x)`` first, then input position;
* equidistant ground truth: smaller ``(y, x)`` wins, then input position.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

from .core import (
    CELL_CLASSES,
    CELL_MPP,
    CellClass,
    GroundTruthCell,
    InputError,
    MatchCounts,
    ParameterError,
    PredictedCell,
    um_to_px,
)

HIT_RADIUS_UM = 3.0


def hit_radius_px(radius_um: float = HIT_RADIUS_UM, mpp: float = CELL_MPP) -> float:
    """3 um at 0.2 MPP is 15 px."""
    return um_to_px(radius_um, mpp)


DEFAULT_RADIUS_PX = hit_radius_px()


@dataclass(frozen=True)
class MatchResult:
    counts: MatchCounts
    matches: tuple[tuple[int, int], ...]  # (pred_index, gt_index) into the inputs


def _check_inputs(preds, gts, radius_px):
    if not radius_px > 0:
        raise ParameterError(f"radius_px must be positive, got {radius_px}")
    classes = {p.cls for p in preds} | {g.cls for g in gts}
    if len(classes) > 1:
        raise InputError(f"match_class expects a single cell class, got {sorted(c.name for c in classes)}")


def prediction_order(preds: Sequence[PredictedCell]) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, preds[i].y, preds[i].x, i))


class _BucketIndex:
    """Uniform grid of point indices with lazy deletion."""

    def __init__(self, gts: Sequence[GroundTruthCell], cell: float):
        self.gts = gts
        self.cell = cell
        self.alive = [True] * len(gts)
        self.buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i, g in enumerate(gts):
            self.buckets[self._key(g.x, g.y)].append(i)

    def _key(self, x, y):
        return math.floor(x / self.cell), math.floor(y / self.cell)

    def nearest_within(self, x: float, y: float, radius: float):
        # one bucket of slack on each side guards against rounding in the division
        bx0, by0 = self._key(x - radius, y - radius)
        bx1, by1 = self._key(x + radius, y + radius)
        best = None
        for by in range(by0 - 1, by1 + 2):
            for bx in range(bx0 - 1, bx1 + 2):
                bucket = self.buckets.get((bx, by))
                if not bucket:
                    continue
                for i in bucket:
                    if not self.alive[i]:
                        continue
                    g = self.gts[i]
                    d = math.hypot(g.x - x, g.y - y)
                    if d > radius:
                        continue
                    key = (d, g.y, g.x, i)
                    if best is None or key < best:
                        best = key
        return None if best is None else best[3]

    def remove(self, i: int) -> None:
        self.alive[i] = False


def match_class(
    preds: Sequence[PredictedCell],
    gts: Sequence[GroundTruthCell],
    radius_px: float = DEFAULT_RADIUS_PX,
) -> MatchResult:
    """Greedy TP/FP/FN counting for one cell class."""
    _check_inputs(preds, gts, radius_px)
    index = _BucketIndex(gts, radius_px)
    tp = fp = 0
    matches = []
    for pi in prediction_order(preds):
        p = preds[pi]
        gi = index.nearest_within(p.x, p.y, radius_px)
        if gi is None:
            fp += 1
        else:
            tp += 1
            index.remove(gi)
            matches.append((pi, gi))
    return MatchResult(MatchCounts(tp, fp, len(gts) - tp), tuple(matches))


def reference_match_class(
    preds: Sequence[PredictedCell],
    gts: Sequence[GroundTruthCell],
    radius_px: float = DEFAULT_RADIUS_PX,
) -> MatchResult:
    """Literal O(n*m) version: linear scan for the nearest remaining cell."""
    _check_inputs(preds, gts, radius_px)
    remaining = list(range(len(gts)))
    tp = fp = 0
    matches = []
    for pi in prediction_order(preds):
        p = preds[pi]
        if not remaining:
            fp += 1
            continue
        g_best = min(
            remaining,
            key=lambda gi: (math.hypot(gts[gi].x - p.x, gts[gi].y - p.y), gts[gi].y, gts[gi].x, gi),
        )
        if math.hypot(gts[g_best].x - p.x, gts[g_best].y - p.y) > radius_px:
            fp += 1
        else:
            tp += 1
            remaining.remove(g_best)
            matches.append((pi, g_best))
    return MatchResult(MatchCounts(tp, fp, len(remaining)), tuple(matches))


def split_by_class(cells):
    out = {c: [] for c in CELL_CLASSES}
    for cell in cells:
        out[cell.cls].append(cell)
    return out


def match_all(
    preds: Sequence[PredictedCell],
    gts: Sequence[GroundTruthCell],
    radius_px: float = DEFAULT_RADIUS_PX,
) -> dict[CellClass, MatchCounts]:
    """Run :func:`match_class` independently on each class partition."""
    if not radius_px > 0:
        raise ParameterError(f"radius_px must be positive, got {radius_px}")
    p_by, g_by = split_by_class(preds), split_by_class(gts)
    return {c: match_class(p_by[c], g_by[c], radius_px).counts for c in CELL_CLASSES}
