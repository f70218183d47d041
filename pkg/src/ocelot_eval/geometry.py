"""Mapping between the cell frame and the tissue grid."""

from __future__ import annotations

import math

import numpy as np

from .core import (
    CoordinateOutOfBounds,
    InputError,
    PatchPairMeta,
    TissueClass,
    TissueGrid,
    TissueProbGrid,
    _check_extent,
)


def cell_to_tissue_index(x: float, y: float, meta: PatchPairMeta) -> tuple[int, int]:
    """Return the ``(col, row)`` of the tissue-grid pixel under a cell point."""
    _check_extent(x, y, meta.cell_size)
    s = meta.scale
    return math.floor((x + meta.cell_offset_x) / s), math.floor((y + meta.cell_offset_y) / s)


def cell_to_tissue_indices(xs, ys, meta: PatchPairMeta) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`cell_to_tissue_index` for coordinate arrays."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    for axis, v in (("x", xs), ("y", ys)):
        bad = ~((v >= 0) & (v < meta.cell_size))
        if bad.any():
            raise CoordinateOutOfBounds(axis, float(v[bad][0]), meta.cell_size)
    s = meta.scale
    cols = np.floor((xs + meta.cell_offset_x) / s).astype(np.int64)
    rows = np.floor((ys + meta.cell_offset_y) / s).astype(np.int64)
    return cols, rows


def _check_grid(shape: tuple[int, int], meta: PatchPairMeta) -> None:
    n = meta.tissue_grid_size
    if shape != (n, n):
        raise InputError(f"tissue grid is {shape[1]}x{shape[0]}, pair {meta.pair_id!r} expects {n}x{n}")


def tissue_class_at(x: float, y: float, grid: TissueGrid, meta: PatchPairMeta) -> TissueClass:
    _check_grid(grid.labels.shape, meta)
    col, row = cell_to_tissue_index(x, y, meta)
    return TissueClass(int(grid.labels[row, col]))


def tissue_classes_at(xs, ys, grid: TissueGrid, meta: PatchPairMeta) -> np.ndarray:
    """Raw label values (uint8) under each point."""
    _check_grid(grid.labels.shape, meta)
    cols, rows = cell_to_tissue_indices(xs, ys, meta)
    return grid.labels[rows, cols]


def prob_at(x: float, y: float, grid: TissueProbGrid, meta: PatchPairMeta) -> float:
    _check_grid(grid.p_ca.shape, meta)
    col, row = cell_to_tissue_index(x, y, meta)
    return float(grid.p_ca[row, col])


def _sample_axis(n_out: int, offset: int, scale: int, n_src: int, mode: str):
    u = (np.arange(n_out, dtype=np.float64) + offset) / scale
    if mode == "nearest":
        return np.floor(u).astype(np.int64), None, None
    i0 = np.floor(u).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, u - i0


def aligned_tissue_crop(
    src: TissueProbGrid, meta: PatchPairMeta, mode: str = "bilinear"
) -> TissueProbGrid:
    """Resample the tissue probabilities onto the cell-patch pixel grid.

    Output pixel ``(x, y)`` samples the source at
    ``((x + offset_x) / 4, (y + offset_y) / 4)`` in source index units, so
    source values sit on integer coordinates.  Bilinear samples past the
    last source column/row clamp to the edge.
    """
    if mode not in ("nearest", "bilinear"):
        raise InputError(f"mode must be 'nearest' or 'bilinear', got {mode!r}")
    _check_grid(src.p_ca.shape, meta)
    n, s, p = meta.cell_size, meta.scale, src.p_ca
    cx0, cx1, wx = _sample_axis(n, meta.cell_offset_x, s, p.shape[1], mode)
    ry0, ry1, wy = _sample_axis(n, meta.cell_offset_y, s, p.shape[0], mode)
    if mode == "nearest":
        out = p[np.ix_(ry0, cx0)]
    else:
        top = p[np.ix_(ry0, cx0)] * (1 - wx) + p[np.ix_(ry0, cx1)] * wx
        bot = p[np.ix_(ry1, cx0)] * (1 - wx) + p[np.ix_(ry1, cx1)] * wx
        out = top * (1 - wy)[:, None] + bot * wy[:, None]
        np.clip(out, 0.0, 1.0, out=out)
    return TissueProbGrid(out, mpp=meta.cell_mpp)


def aligned_label_crop(src: TissueGrid, meta: PatchPairMeta) -> TissueGrid:
    """Nearest-neighbour label crop aligned to the cell frame."""
    _check_grid(src.labels.shape, meta)
    n, s = meta.cell_size, meta.scale
    cols, _, _ = _sample_axis(n, meta.cell_offset_x, s, src.width, "nearest")
    rows, _, _ = _sample_axis(n, meta.cell_offset_y, s, src.height, "nearest")
    return TissueGrid(src.labels[np.ix_(rows, cols)], mpp=meta.cell_mpp)
