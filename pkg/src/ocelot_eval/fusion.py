"""Post-hoc refinement of cell classes from tissue predictions.

Tissue is looked up at the grid pixel under each cell (floor mapping, see
:mod:`ocelot_eval.geometry`).  Cancer area maps to tumor cells and
background tissue to background cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .core import (
    CellClass,
    InputError,
    ParameterError,
    PatchPairMeta,
    PredictedCell,
    TissueClass,
    TissueGrid,
    TissueProbGrid,
    _check_extent,
    CELL_SIZE,
)
from .geometry import cell_to_tissue_indices, tissue_classes_at

_SUM_SLACK = 1e-9


@dataclass(frozen=True)
class ScoredCell:
    x: float
    y: float
    p_tc: float
    p_bc: float

    def __post_init__(self):
        for name in ("x", "y", "p_tc", "p_bc"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (0 <= self.p_tc <= 1 and 0 <= self.p_bc <= 1):
            raise InputError(f"class probabilities must lie in [0, 1], got ({self.p_tc}, {self.p_bc})")
        s = self.p_tc + self.p_bc
        if not 0 < s <= 1 + _SUM_SLACK:
            raise InputError(f"p_tc + p_bc must lie in (0, 1], got {s}")
        _check_extent(self.x, self.y, CELL_SIZE)

    @property
    def cls(self) -> CellClass:
        # exact ties go to BC, the majority class
        return CellClass.TC if self.p_tc > self.p_bc else CellClass.BC

    def to_prediction(self) -> PredictedCell:
        return PredictedCell(self.x, self.y, self.cls, min(1.0, max(self.p_tc, self.p_bc)))


def _tissue_labels(cells, tissue: Union[TissueGrid, TissueProbGrid], meta, threshold: float):
    if isinstance(tissue, TissueProbGrid):
        tissue = tissue.thresholded(threshold)
    return tissue_classes_at([c.x for c in cells], [c.y for c in cells], tissue, meta)


def _p_ca(cells, tissue: TissueProbGrid, meta) -> np.ndarray:
    n = meta.tissue_grid_size
    if tissue.p_ca.shape != (n, n):
        raise InputError(f"tissue grid is {tissue.width}x{tissue.height}, pair {meta.pair_id!r} expects {n}x{n}")
    cols, rows = cell_to_tissue_indices([c.x for c in cells], [c.y for c in cells], meta)
    return tissue.p_ca[rows, cols]


def extreme_fusion(
    cells: Sequence[ScoredCell],
    tissue: Union[TissueGrid, TissueProbGrid],
    meta: PatchPairMeta,
    threshold: float = 0.5,
) -> list[PredictedCell]:
    """Force every cell to the class implied by the tissue beneath it.

    Cells on cancer area become TC, on background BC.  Unknown tissue leaves
    the cell's own argmax.  A forced cell's confidence is its probability for
    the forced class, floored at 0.5.  Probability grids are thresholded at
    ``threshold`` first (no unknown region).
    """
    if not cells:
        return []
    labels = _tissue_labels(cells, tissue, meta, threshold)
    out = []
    for c, t in zip(cells, labels):
        if t == TissueClass.CA:
            out.append(PredictedCell(c.x, c.y, CellClass.TC, min(1.0, max(c.p_tc, 0.5))))
        elif t == TissueClass.BG:
            out.append(PredictedCell(c.x, c.y, CellClass.BC, min(1.0, max(c.p_bc, 0.5))))
        else:
            out.append(c.to_prediction())
    return out


def margin_weight(cell: ScoredCell) -> float:
    return abs(cell.p_tc - cell.p_bc)


def adaptive_fusion(
    cells: Sequence[ScoredCell],
    tissue: TissueProbGrid,
    meta: PatchPairMeta,
    weight: Callable[[ScoredCell], float] = margin_weight,
) -> list[ScoredCell]:
    """Blend cell and tissue evidence, trusting confident cells more.

    With ``w = weight(cell)`` (class-probability margin by default),
    ``out_c = w * p_c + (1 - w) * t_c`` where ``t_tc = p_ca`` and
    ``t_bc = 1 - p_ca``, renormalised to sum to one.
    """
    if not cells:
        return []
    p_ca = _p_ca(cells, tissue, meta)
    out = []
    for c, t_tc in zip(cells, p_ca.tolist()):
        w = weight(c)
        if not 0 <= w <= 1:
            raise ParameterError(f"fusion weight must lie in [0, 1], got {w}")
        tc = w * c.p_tc + (1 - w) * t_tc
        bc = w * c.p_bc + (1 - w) * (1 - t_tc)
        s = tc + bc
        out.append(ScoredCell(c.x, c.y, tc / s, bc / s))
    return out


def background_revision(
    cells: Sequence[Union[ScoredCell, PredictedCell]],
    tissue: TissueProbGrid,
    meta: PatchPairMeta,
    tau: float = 0.5,
) -> list[PredictedCell]:
    """Flip TC calls to BC where the background probability reaches ``tau``.

    BC calls are never changed.  Confidences are carried over.
    """
    if not 0 <= tau <= 1:
        raise ParameterError(f"tau must lie in [0, 1], got {tau}")
    if not cells:
        return []
    p_ca = _p_ca(cells, tissue, meta)
    out = []
    for c, p in zip(cells, p_ca.tolist()):
        pred = c.to_prediction() if isinstance(c, ScoredCell) else c
        if pred.cls == CellClass.TC and 1 - p >= tau:
            pred = PredictedCell(pred.x, pred.y, CellClass.BC, pred.confidence)
        out.append(pred)
    return out
