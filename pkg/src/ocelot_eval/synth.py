"""Seeded synthetic datasets with known answers.

Every generator takes an integer ``seed`` and draws from
``numpy.random.default_rng(seed)``; equal seeds give equal outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    CELL_CLASSES,
    CELL_SIZE,
    SPLITS,
    TISSUE_GRID_SIZE,
    TISSUE_NATIVE_SIZE,
    CellClass,
    DatasetManifest,
    GroundTruthCell,
    InputError,
    MatchCounts,
    ParameterError,
    PatchPairMeta,
    PredictedCell,
    TissueClass,
    TissueGrid,
    TissueProbGrid,
)
from .fusion import ScoredCell
from .geometry import tissue_classes_at
from .matching import DEFAULT_RADIUS_PX

# cell/tissue co-occurrence on the public test annotations
P_TC_GIVEN_CA = 0.885
P_BC_GIVEN_BG = 0.917

# organ -> ((slides train, val, test), (pairs train, val, test))
PUBLISHED_COUNTS = {
    "kidney": ((48, 15, 18), (125, 41, 41)),
    "head-neck": ((13, 5, 6), (27, 9, 10)),
    "prostate": ((26, 12, 10), (50, 17, 16)),
    "stomach": ((15, 6, 5), (36, 12, 12)),
    "endometrium": ((38, 13, 13), (86, 29, 25)),
    "bladder": ((35, 14, 14), (82, 29, 26)),
}


class SynthesisError(InputError):
    """Requested configuration cannot be generated (e.g. density too high)."""


def _check_prob(name, v):
    if not 0 <= v <= 1:
        raise ParameterError(f"{name} must lie in [0, 1], got {v}")


def gen_tissue(
    seed: int,
    size: int = TISSUE_GRID_SIZE,
    n_blobs: int = 6,
    radius_range: tuple[float, float] = (60.0, 250.0),
    unk_border: int = 0,
) -> TissueGrid:
    """Cancer area as a union of random discs on background.

    ``unk_border`` marks a band of that many pixels along the edges as
    unknown.
    """
    if n_blobs < 0:
        raise ParameterError(f"n_blobs must be >= 0, got {n_blobs}")
    rng = np.random.default_rng(seed)
    labels = np.full((size, size), int(TissueClass.BG), dtype=np.uint8)
    for _ in range(n_blobs):
        cx, cy = rng.uniform(0, size, 2)
        r = rng.uniform(*radius_range)
        # only the disc's bounding box can change
        x0, x1 = max(0, math.floor(cx - r)), min(size, math.ceil(cx + r) + 1)
        y0, y1 = max(0, math.floor(cy - r)), min(size, math.ceil(cy + r) + 1)
        yy, xx = np.ogrid[y0:y1, x0:x1]
        labels[y0:y1, x0:x1][(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = int(TissueClass.CA)
    if unk_border > 0:
        b = unk_border
        for sl in ((slice(0, b), slice(None)), (slice(size - b, size), slice(None)),
                   (slice(None), slice(0, b)), (slice(None), slice(size - b, size))):
            labels[sl] = int(TissueClass.UNK)
    return TissueGrid(labels)


def soften_tissue(grid: TissueGrid, seed: int, confidence: float = 0.85, noise: float = 0.05) -> TissueProbGrid:
    """Probability raster that thresholds back to the given labels (UNK -> 0.5)."""
    rng = np.random.default_rng(seed)
    p = np.where(grid.labels == int(TissueClass.CA), confidence, 1 - confidence)
    p = np.where(grid.labels == int(TissueClass.UNK), 0.5, p)
    jitter = np.clip(rng.normal(0, noise, p.shape), -(confidence - 0.5) + 1e-3, (confidence - 0.5) - 1e-3)
    p = np.where(grid.labels == int(TissueClass.UNK), p, p + jitter)
    return TissueProbGrid(np.clip(p, 0, 1), mpp=grid.mpp)


def random_meta(rng: np.random.Generator, pair_id: str, wsi_id: str, organ: str = "synthetic",
                split: str = "test") -> PatchPairMeta:
    hi = TISSUE_NATIVE_SIZE - CELL_SIZE
    ox, oy = (int(v) for v in rng.integers(0, hi + 1, 2))
    return PatchPairMeta(pair_id, wsi_id, organ, split, ox, oy)


def _place_points(rng, n, size, min_sep, max_retries):
    if min_sep <= 0:
        return rng.integers(0, size, (n, 2))
    cell = min_sep
    buckets: dict[tuple[int, int], list[tuple[int, int]]] = {}
    pts = []
    sep2 = min_sep * min_sep
    for _ in range(n):
        for _attempt in range(max_retries):
            x, y = (int(v) for v in rng.integers(0, size, 2))
            bx, by = int(x // cell), int(y // cell)
            clash = False
            for nb in ((bx + i, by + j) for i in (-1, 0, 1) for j in (-1, 0, 1)):
                for px, py in buckets.get(nb, ()):
                    if (px - x) ** 2 + (py - y) ** 2 < sep2:
                        clash = True
                        break
                if clash:
                    break
            if not clash:
                buckets.setdefault((bx, by), []).append((x, y))
                pts.append((x, y))
                break
        else:
            raise SynthesisError(
                f"could not place cell {len(pts) + 1} of {n} with min_sep_px={min_sep} "
                f"after {max_retries} attempts; lower the density"
            )
    return np.array(pts, dtype=np.int64).reshape(-1, 2)


def gen_cells(
    grid: TissueGrid,
    meta: PatchPairMeta,
    density: float = 300.0,
    p_tc_given_ca: float = P_TC_GIVEN_CA,
    p_bc_given_bg: float = P_BC_GIVEN_BG,
    min_sep_px: float = 0.0,
    seed: int = 0,
    max_retries: int = 2000,
) -> list[GroundTruthCell]:
    """Point annotations whose class depends on the tissue beneath them.

    ``density`` is in cells per megapixel of the cell patch.  Positions are
    integer pixels placed by sequential rejection so that no two cells are
    closer than ``min_sep_px``.  Cells landing on unknown tissue are
    dropped.
    """
    _check_prob("p_tc_given_ca", p_tc_given_ca)
    _check_prob("p_bc_given_bg", p_bc_given_bg)
    if density < 0:
        raise ParameterError(f"density must be >= 0, got {density}")
    rng = np.random.default_rng(seed)
    size = meta.cell_size
    n = int(round(density * size * size / 1e6))
    pts = _place_points(rng, n, size, min_sep_px, max_retries)
    if len(pts) == 0:
        return []
    tissue = tissue_classes_at(pts[:, 0], pts[:, 1], grid, meta)
    u = rng.random(len(pts))
    out = []
    for (x, y), t, ui in zip(pts.tolist(), tissue.tolist(), u.tolist()):
        if t == TissueClass.CA:
            cls = CellClass.TC if ui < p_tc_given_ca else CellClass.BC
        elif t == TissueClass.BG:
            cls = CellClass.BC if ui < p_bc_given_bg else CellClass.TC
        else:
            continue
        out.append(GroundTruthCell(x, y, cls))
    return out


@dataclass(frozen=True)
class Perturbation:
    predictions: list[PredictedCell]
    expected: dict[CellClass, MatchCounts]
    exact: bool  # True when the separation/jitter guarantees hold


def min_separation(cells) -> float:
    if len(cells) < 2:
        return math.inf
    pts = np.array([(c.x, c.y) for c in cells], dtype=np.float64)
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(d[:, 1].min())


def perturb_to_predictions(
    gts: list[GroundTruthCell],
    drop_rate: float = 0.0,
    jitter_sigma_px: float = 0.0,
    spurious_rate: float = 0.0,
    class_flip_rate: float = 0.0,
    seed: int = 0,
    radius_px: float = DEFAULT_RADIUS_PX,
    size: int = CELL_SIZE,
    max_retries: int = 1000,
) -> Perturbation:
    """Turn annotations into predictions with known TP/FP/FN.

    Each annotation is dropped with ``drop_rate`` (a false negative);
    otherwise it is moved by Gaussian jitter, redrawn until the shift is
    shorter than ``radius_px`` and clipped to the patch, and its class is
    flipped with ``class_flip_rate`` (one FP in the new class, one FN in the
    old).  ``Binomial(len(gts), spurious_rate)`` extra predictions are placed
    uniformly, farther than ``radius_px`` from every annotation of their
    class (false positives).

    The expected counts are exact whenever annotations are more than
    ``2 * radius_px`` apart; ``exact`` reports whether that holds.
    """
    for name, v in (("drop_rate", drop_rate), ("spurious_rate", spurious_rate),
                    ("class_flip_rate", class_flip_rate)):
        _check_prob(name, v)
    if jitter_sigma_px < 0:
        raise ParameterError(f"jitter_sigma_px must be >= 0, got {jitter_sigma_px}")
    rng = np.random.default_rng(seed)
    tp = {c: 0 for c in CELL_CLASSES}
    fp = {c: 0 for c in CELL_CLASSES}
    n_gt = {c: 0 for c in CELL_CLASSES}
    preds = []
    hi = np.nextafter(float(size), 0.0)
    for g in gts:
        n_gt[g.cls] += 1
        if rng.random() < drop_rate:
            continue
        dx = dy = 0.0
        if jitter_sigma_px > 0:
            for _ in range(100):
                dx, dy = rng.normal(0.0, jitter_sigma_px, 2)
                if math.hypot(dx, dy) < radius_px:
                    break
            else:
                dx = dy = 0.0
        x = min(max(g.x + dx, 0.0), hi)
        y = min(max(g.y + dy, 0.0), hi)
        cls = g.cls
        if rng.random() < class_flip_rate:
            cls = CellClass.TC if cls == CellClass.BC else CellClass.BC
            fp[cls] += 1
        else:
            tp[cls] += 1
        preds.append(PredictedCell(x, y, cls, rng.uniform(0.5, 1.0)))

    n_spurious = int(rng.binomial(len(gts), spurious_rate)) if gts else 0
    trees = {}
    for c in CELL_CLASSES:
        pts = [(g.x, g.y) for g in gts if g.cls == c]
        trees[c] = cKDTree(np.array(pts, dtype=np.float64)) if pts else None
    for _ in range(n_spurious):
        cls = CELL_CLASSES[int(rng.integers(0, 2))]
        for _attempt in range(max_retries):
            x, y = rng.uniform(0.0, size, 2)
            if trees[cls] is None or trees[cls].query((x, y))[0] > radius_px:
                break
        else:
            raise SynthesisError("no room for a spurious prediction away from the annotations")
        fp[cls] += 1
        preds.append(PredictedCell(x, y, cls, rng.uniform(0.0, 1.0)))

    expected = {c: MatchCounts(tp[c], fp[c], n_gt[c] - tp[c]) for c in CELL_CLASSES}
    return Perturbation(preds, expected, min_separation(gts) > 2 * radius_px)


def noisy_scores(gts: list[GroundTruthCell], flip_rate: float, seed: int) -> list[ScoredCell]:
    """Scored detections at the annotated positions with class noise.

    The true class gets probability in [0.55, 1]; with ``flip_rate`` the
    probabilities are swapped.
    """
    _check_prob("flip_rate", flip_rate)
    rng = np.random.default_rng(seed)
    out = []
    for g in gts:
        p_true = rng.uniform(0.55, 1.0)
        if rng.random() < flip_rate:
            p_true = 1.0 - p_true
        p_tc = p_true if g.cls == CellClass.TC else 1.0 - p_true
        out.append(ScoredCell(g.x, g.y, p_tc, 1.0 - p_tc))
    return out


def published_manifest(seed: int = 0) -> DatasetManifest:
    """Synthetic manifest with the published per-organ slide and pair counts.

    Pairs of one slide all go to that slide's split; each slide carries one
    to three pairs.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for organ, (slides, counts) in PUBLISHED_COUNTS.items():
        for split, n_slides, n_pairs in zip(SPLITS, slides, counts):
            if not n_slides <= n_pairs <= 3 * n_slides:
                raise InputError(f"{organ}/{split}: cannot spread {n_pairs} pairs over {n_slides} slides")
            base, extra = divmod(n_pairs, n_slides)
            for s in range(n_slides):
                wsi = f"{organ}-{split}-wsi{s:03d}"
                for k in range(base + (1 if s < extra else 0)):
                    pairs.append(random_meta(rng, f"{wsi}-p{k}", wsi, organ, split))
    return DatasetManifest(tuple(pairs))


@dataclass
class SynthCorpus:
    manifest: DatasetManifest
    gts: dict[str, list[GroundTruthCell]] = field(default_factory=dict)
    grids: dict[str, TissueGrid] = field(default_factory=dict)
    probs: dict[str, TissueProbGrid] = field(default_factory=dict)


def gen_corpus(
    seed: int,
    n_pairs: int = 10,
    density: float = 300.0,
    min_sep_px: float = 0.0,
    n_blobs: int = 6,
    unk_border: int = 0,
    p_tc_given_ca: float = P_TC_GIVEN_CA,
    p_bc_given_bg: float = P_BC_GIVEN_BG,
    split: str = "test",
) -> SynthCorpus:
    """A complete dataset: manifest, annotations, tissue labels and probabilities."""
    rng = np.random.default_rng(seed)
    sub = rng.integers(0, 2**31, size=(n_pairs, 4))
    metas, gts, grids, probs = [], {}, {}, {}
    for i in range(n_pairs):
        pid = f"pair_{i:04d}"
        meta = random_meta(np.random.default_rng(int(sub[i, 0])), pid, f"wsi_{i:04d}", "synthetic", split)
        grid = gen_tissue(int(sub[i, 1]), n_blobs=n_blobs, unk_border=unk_border)
        metas.append(meta)
        grids[pid] = grid
        probs[pid] = soften_tissue(grid, int(sub[i, 2]))
        gts[pid] = gen_cells(grid, meta, density, p_tc_given_ca, p_bc_given_bg, min_sep_px, int(sub[i, 3]))
    return SynthCorpus(DatasetManifest(tuple(metas)), gts, grids, probs)
