"""Evaluation conditioned on the tissue region under each cell."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import (
    CELL_CLASSES,
    CellClass,
    InputError,
    MatchCounts,
    ParameterError,
    PatchPairMeta,
    TissueClass,
    TissueGrid,
)
from .geometry import tissue_classes_at
from .matching import DEFAULT_RADIUS_PX, match_all, match_class, split_by_class
from .metrics import EvalReport, ImageCounts, pool_counts

REGIONS = (TissueClass.BG, TissueClass.CA)


def assign_regions(cells: Sequence, grid: TissueGrid, meta: PatchPairMeta) -> list[tuple[object, TissueClass]]:
    """Tag each cell with the tissue class of the grid pixel beneath it.

    Cells over unknown tissue are tagged ``UNK``; callers drop them.
    """
    if not cells:
        return []
    labels = tissue_classes_at([c.x for c in cells], [c.y for c in cells], grid, meta)
    return [(c, TissueClass(int(v))) for c, v in zip(cells, labels)]


@dataclass(frozen=True)
class Cooccurrence:
    counts: dict[CellClass, dict[TissueClass, int]]
    excluded_unk: int

    def tissue_total(self, tissue: TissueClass) -> int:
        return sum(self.counts[c][tissue] for c in CELL_CLASSES)

    def rate(self, cell: CellClass, tissue: TissueClass) -> float | None:
        """P(cell class | tissue class); ``None`` when no cells lie on that tissue."""
        n = self.tissue_total(tissue)
        return self.counts[cell][tissue] / n if n else None

    def to_dict(self) -> dict:
        return {
            "counts": {c.name: {t.name: self.counts[c][t] for t in REGIONS} for c in CELL_CLASSES},
            "rates": {
                f"P({c.name}|{t.name})": self.rate(c, t)
                for t in REGIONS for c in CELL_CLASSES if self.rate(c, t) is not None
            },
            "excluded_unk": self.excluded_unk,
        }


def _aligned(ids, grids, metas):
    missing = sorted(i for i in ids if i not in grids or i not in metas)
    if missing:
        raise InputError(f"no tissue grid or pair metadata for images: {', '.join(missing)}")


def cooccurrence_table(
    gts: Mapping[str, Sequence],
    grids: Mapping[str, TissueGrid],
    metas: Mapping[str, PatchPairMeta],
) -> Cooccurrence:
    _aligned(gts, grids, metas)
    counts = {c: {t: 0 for t in REGIONS} for c in CELL_CLASSES}
    unk = 0
    for image_id in sorted(gts):
        for cell, tissue in assign_regions(gts[image_id], grids[image_id], metas[image_id]):
            if tissue == TissueClass.UNK:
                unk += 1
            else:
                counts[cell.cls][tissue] += 1
    return Cooccurrence(counts, unk)


def _in_region(cells, grid, meta, region):
    return [c for c, t in assign_regions(cells, grid, meta) if t == region]


def _attribute_counts(preds, gts, grid, meta, region, radius_px) -> ImageCounts:
    out = {}
    p_by, g_by = split_by_class(preds), split_by_class(gts)
    for c in CELL_CLASSES:
        p_cells, g_cells = p_by[c], g_by[c]
        result = match_class(p_cells, g_cells, radius_px)
        g_reg = [t for _, t in assign_regions(g_cells, grid, meta)]
        p_reg = [t for _, t in assign_regions(p_cells, grid, meta)]
        matched_p = {pi for pi, _ in result.matches}
        matched_g = {gi for _, gi in result.matches}
        tp = sum(1 for _, gi in result.matches if g_reg[gi] == region)
        fn = sum(1 for gi, t in enumerate(g_reg) if t == region and gi not in matched_g)
        fp = sum(1 for pi, t in enumerate(p_reg) if t == region and pi not in matched_p)
        out[c] = MatchCounts(tp, fp, fn)
    return out


def subgroup_counts(
    preds: Mapping[str, Sequence],
    gts: Mapping[str, Sequence],
    grids: Mapping[str, TissueGrid],
    metas: Mapping[str, PatchPairMeta],
    region: TissueClass,
    radius_px: float = DEFAULT_RADIUS_PX,
    mode: str = "filter",
) -> dict[str, ImageCounts]:
    """Per-image counts restricted to ``region``.

    ``mode="filter"`` drops predictions and annotations outside the region
    before matching, so a pair straddling a boundary scores FP + FN.
    ``mode="attribute"`` matches on the full image first, then books TP and
    FN by the annotation's region and FP by the prediction's region.
    """
    region = TissueClass(region)
    if region not in REGIONS:
        raise ParameterError(f"region must be BG or CA, got {region.name}")
    if mode not in ("filter", "attribute"):
        raise ParameterError(f"mode must be 'filter' or 'attribute', got {mode!r}")
    unknown = sorted(set(preds) - set(gts))
    if unknown:
        raise InputError(f"predictions reference unknown image ids: {', '.join(unknown)}")
    _aligned(gts, grids, metas)
    out = {}
    for image_id in sorted(gts):
        grid, meta = grids[image_id], metas[image_id]
        p, g = list(preds.get(image_id, ())), list(gts[image_id])
        if mode == "filter":
            out[image_id] = match_all(
                _in_region(p, grid, meta, region), _in_region(g, grid, meta, region), radius_px
            )
        else:
            out[image_id] = _attribute_counts(p, g, grid, meta, region, radius_px)
    return out


def subgroup_evaluate(
    preds: Mapping[str, Sequence],
    gts: Mapping[str, Sequence],
    grids: Mapping[str, TissueGrid],
    metas: Mapping[str, PatchPairMeta],
    region: TissueClass,
    radius_px: float = DEFAULT_RADIUS_PX,
    mode: str = "filter",
) -> EvalReport:
    per_image = subgroup_counts(preds, gts, grids, metas, region, radius_px, mode)
    return EvalReport.from_counts(pool_counts(list(per_image.values())), len(per_image))
