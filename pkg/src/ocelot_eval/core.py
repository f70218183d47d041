"""Domain types shared across the toolkit.

Cells live in the cell-patch frame (1024 x 1024 px at 0.2 MPP).  Tissue
rasters live on the tissue grid (1024 x 1024 px at 0.8 MPP) which covers a
4096 x 4096 px region of the same slide at 0.2 MPP.  The cell patch sits
inside that region at ``(cell_offset_x, cell_offset_y)``.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from enum import IntEnum
from typing import Iterable, Mapping

import numpy as np

CELL_MPP = 0.2
TISSUE_MPP = 0.8
CELL_SIZE = 1024
TISSUE_NATIVE_SIZE = 4096
TISSUE_GRID_SIZE = 1024
SPLITS = ("train", "val", "test")
SPLIT_RATIO = {"train": 0.6, "val": 0.2, "test": 0.2}


class InputError(ValueError):
    """Malformed or inconsistent user input (CLI exit code 1)."""


class ParameterError(InputError):
    """An argument outside its allowed range."""


class CoordinateOutOfBounds(InputError):
    def __init__(self, axis: str, value: float, limit: float):
        self.axis = axis
        self.value = value
        self.limit = limit
        super().__init__(f"{axis}={value!r} outside [0, {limit})")


class CellClass(IntEnum):
    """On-disk ids: 1 = background cell, 2 = tumor cell."""

    BC = 1
    TC = 2


class TissueClass(IntEnum):
    """On-disk raster values: 1 = background, 2 = cancer area, 255 = unknown."""

    BG = 1
    CA = 2
    UNK = 255


# fixed order used for count arrays: index 0 = BC, index 1 = TC
CELL_CLASSES = (CellClass.BC, CellClass.TC)


def um_to_px(um: float, mpp: float = CELL_MPP) -> float:
    """Convert a physical length to pixels without binary rounding drift.

    ``3.0 / 0.2`` happens to be exact in binary floating point but
    ``1.4 / 0.2`` is not, so the division goes through the decimal
    representations of both arguments.
    """
    if mpp <= 0:
        raise ParameterError(f"mpp must be positive, got {mpp}")
    return float(Decimal(repr(float(um))) / Decimal(repr(float(mpp))))


def _check_extent(x: float, y: float, size: int) -> None:
    if not (0 <= x < size):
        raise CoordinateOutOfBounds("x", x, size)
    if not (0 <= y < size):
        raise CoordinateOutOfBounds("y", y, size)


@dataclass(frozen=True)
class GroundTruthCell:
    x: int
    y: int
    cls: CellClass

    def __post_init__(self):
        if not all(float(v).is_integer() for v in (self.x, self.y)):
            raise InputError(f"annotation coordinates must be integers, got ({self.x}, {self.y})")
        object.__setattr__(self, "x", int(self.x))
        object.__setattr__(self, "y", int(self.y))
        object.__setattr__(self, "cls", CellClass(self.cls))
        _check_extent(self.x, self.y, CELL_SIZE)


@dataclass(frozen=True)
class PredictedCell:
    x: float
    y: float
    cls: CellClass
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "cls", CellClass(self.cls))
        object.__setattr__(self, "confidence", float(self.confidence))
        if not (0.0 <= self.confidence <= 1.0):
            raise InputError(f"confidence must lie in [0, 1], got {self.confidence}")
        _check_extent(self.x, self.y, CELL_SIZE)


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TissueGrid:
    """Per-pixel tissue labels, stored row-major as ``labels[row, col]``."""

    labels: np.ndarray
    mpp: float = TISSUE_MPP

    def __post_init__(self):
        labels = _frozen_array(self.labels, np.uint8)
        if labels.ndim != 2:
            raise InputError(f"tissue labels must be 2-D, got shape {labels.shape}")
        bad = ~np.isin(labels, [int(t) for t in TissueClass])
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise InputError(f"invalid tissue label {labels[r, c]} at row {r}, col {c}")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def uniform(cls, label: TissueClass, size: int = TISSUE_GRID_SIZE) -> "TissueGrid":
        return cls(np.full((size, size), int(label), dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def fraction(self, label: TissueClass) -> float:
        return float(np.count_nonzero(self.labels == int(label))) / self.labels.size

    def __eq__(self, other):
        if not isinstance(other, TissueGrid):
            return NotImplemented
        return self.mpp == other.mpp and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class TissueProbGrid:
    """Cancer-area probability per pixel, ``p_ca[row, col]`` in [0, 1]."""

    p_ca: np.ndarray
    mpp: float = TISSUE_MPP

    def __post_init__(self):
        p = _frozen_array(self.p_ca, np.float64)
        if p.ndim != 2:
            raise InputError(f"probability raster must be 2-D, got shape {p.shape}")
        if not np.all((p >= 0.0) & (p <= 1.0)):
            raise InputError("probability raster values must lie in [0, 1]")
        object.__setattr__(self, "p_ca", p)

    @property
    def height(self) -> int:
        return self.p_ca.shape[0]

    @property
    def width(self) -> int:
        return self.p_ca.shape[1]

    def thresholded(self, threshold: float = 0.5) -> TissueGrid:
        labels = np.where(self.p_ca >= threshold, int(TissueClass.CA), int(TissueClass.BG))
        return TissueGrid(labels, mpp=self.mpp)

    def __eq__(self, other):
        if not isinstance(other, TissueProbGrid):
            return NotImplemented
        return self.mpp == other.mpp and np.array_equal(self.p_ca, other.p_ca)


@dataclass(frozen=True)
class PatchPairMeta:
    """Placement of one cell patch inside its enclosing tissue patch."""

    pair_id: str
    wsi_id: str
    organ: str
    split: str
    cell_offset_x: int
    cell_offset_y: int
    cell_mpp: float = CELL_MPP
    tissue_mpp: float = TISSUE_MPP
    cell_size: int = CELL_SIZE
    tissue_native_size: int = TISSUE_NATIVE_SIZE
    tissue_grid_size: int = TISSUE_GRID_SIZE

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise InputError(f"pair {self.pair_id!r}: " + "; ".join(problems))
        object.__setattr__(self, "cell_offset_x", int(self.cell_offset_x))
        object.__setattr__(self, "cell_offset_y", int(self.cell_offset_y))

    @property
    def scale(self) -> int:
        return TISSUE_NATIVE_SIZE // TISSUE_GRID_SIZE

    def problems(self) -> list[str]:
        out = []
        if self.split not in SPLITS:
            out.append(f"split must be one of {SPLITS}, got {self.split!r}")
        if um_to_px(self.tissue_mpp, self.cell_mpp) != 4.0:
            out.append(f"tissue_mpp / cell_mpp must be 4, got {self.tissue_mpp} / {self.cell_mpp}")
        if (self.cell_size, self.tissue_native_size, self.tissue_grid_size) != (
            CELL_SIZE, TISSUE_NATIVE_SIZE, TISSUE_GRID_SIZE):
            out.append("patch sizes must be 1024 / 4096 / 1024")
        for axis, off in (("x", self.cell_offset_x), ("y", self.cell_offset_y)):
            if not float(off).is_integer():
                out.append(f"cell_offset_{axis} must be an integer, got {off}")
            elif off < 0 or off + self.cell_size > self.tissue_native_size:
                out.append(
                    f"cell_offset_{axis}={off} places the cell patch outside the tissue patch"
                )
        return out

    def to_record(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "wsi_id": self.wsi_id,
            "organ": self.organ,
            "split": self.split,
            "cell_offset_x": int(self.cell_offset_x),
            "cell_offset_y": int(self.cell_offset_y),
            "cell_mpp": self.cell_mpp,
            "tissue_mpp": self.tissue_mpp,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "PatchPairMeta":
        required = ("pair_id", "wsi_id", "organ", "split", "cell_offset_x", "cell_offset_y")
        missing = [k for k in required if k not in rec]
        if missing:
            raise InputError(f"pair metadata missing fields: {', '.join(missing)}")
        for k in ("cell_offset_x", "cell_offset_y", "cell_mpp", "tissue_mpp"):
            if k in rec and (isinstance(rec[k], bool) or not isinstance(rec[k], (int, float))):
                raise InputError(f"pair metadata field {k!r} must be a number, got {rec[k]!r}")
        return cls(
            pair_id=str(rec["pair_id"]),
            wsi_id=str(rec["wsi_id"]),
            organ=str(rec["organ"]),
            split=str(rec["split"]),
            cell_offset_x=rec["cell_offset_x"],
            cell_offset_y=rec["cell_offset_y"],
            cell_mpp=float(rec.get("cell_mpp", CELL_MPP)),
            tissue_mpp=float(rec.get("tissue_mpp", TISSUE_MPP)),
        )


@dataclass(frozen=True)
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise InputError(f"{name} must be a non-negative integer, got {v}")
            object.__setattr__(self, name, int(v))

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def n_pred(self) -> int:
        return self.tp + self.fp

    @property
    def n_gt(self) -> int:
        return self.tp + self.fn


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class Violation:
    kind: str  # "leakage" | "ratio" | "geometry" | "duplicate_pair_id"
    subject: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    pairs_per_split: dict[str, int] = field(default_factory=dict)
    pairs_per_organ: dict[str, dict[str, int]] = field(default_factory=dict)
    slides_per_organ: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def of_kind(self, kind: str) -> list[Violation]:
        return [v for v in self.violations if v.kind == kind]


@dataclass(frozen=True)
class DatasetManifest:
    """Pair metadata for a dataset.

    Construction does not enforce cross-pair invariants (unique ids, one
    split per slide); :func:`validate_manifest` reports them.  Records that
    fail per-pair geometry checks are kept in ``rejected`` so they can be
    reported too.
    """

    pairs: tuple[PatchPairMeta, ...] = ()
    rejected: tuple[tuple[str, str], ...] = ()  # (pair_id, reason)

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "DatasetManifest":
        pairs, rejected = [], []
        for i, rec in enumerate(records):
            try:
                pairs.append(PatchPairMeta.from_record(rec))
            except InputError as exc:
                rejected.append((str(rec.get("pair_id", f"#{i}")), str(exc)))
        return cls(tuple(pairs), tuple(rejected))

    def __len__(self):
        return len(self.pairs)

    def by_id(self) -> dict[str, PatchPairMeta]:
        return {p.pair_id: p for p in self.pairs}

    def counts(self) -> dict[str, dict[str, int]]:
        """Pairs per organ per split."""
        out: dict[str, dict[str, int]] = defaultdict(lambda: {s: 0 for s in SPLITS})
        for p in self.pairs:
            out[p.organ][p.split] += 1
        return dict(out)

    def slide_counts(self) -> dict[str, dict[str, int]]:
        seen = {(p.organ, p.split, p.wsi_id) for p in self.pairs}
        out: dict[str, dict[str, int]] = defaultdict(lambda: {s: 0 for s in SPLITS})
        for organ, split, _ in seen:
            out[organ][split] += 1
        return dict(out)

    def split_totals(self) -> dict[str, int]:
        c = Counter(p.split for p in self.pairs)
        return {s: c.get(s, 0) for s in SPLITS}


def validate_manifest(
    manifest: DatasetManifest,
    tolerance_pairs: float = 1.0,
    tolerance_fraction: float = 0.025,
) -> ValidationReport:
    """Check slide-level split hygiene and per-organ 6:2:2 balance.

    A split count is flagged when it differs from ``ratio * organ_total`` by
    more than ``max(tolerance_pairs, tolerance_fraction * organ_total)``.
    The proportional term absorbs the lumpiness of splitting whole slides
    that carry one to three pairs each.
    """
    report = ValidationReport(
        pairs_per_split=manifest.split_totals() if manifest.pairs else {},
        pairs_per_organ=manifest.counts(),
        slides_per_organ=manifest.slide_counts(),
    )

    for pair_id, reason in manifest.rejected:
        report.violations.append(Violation("geometry", pair_id, reason))

    id_counts = Counter(p.pair_id for p in manifest.pairs)
    for pair_id, n in sorted(id_counts.items()):
        if n > 1:
            report.violations.append(
                Violation("duplicate_pair_id", pair_id, f"pair_id {pair_id!r} appears {n} times")
            )

    wsi_splits: dict[str, set[str]] = defaultdict(set)
    for p in manifest.pairs:
        wsi_splits[p.wsi_id].add(p.split)
    for wsi, splits in sorted(wsi_splits.items()):
        if len(splits) > 1:
            names = ", ".join(s for s in SPLITS if s in splits)
            report.violations.append(
                Violation("leakage", wsi, f"slide {wsi!r} appears in splits: {names}")
            )

    for organ, per_split in sorted(report.pairs_per_organ.items()):
        total = sum(per_split.values())
        allowed = max(tolerance_pairs, tolerance_fraction * total)
        for split in SPLITS:
            expected = SPLIT_RATIO[split] * total
            actual = per_split[split]
            if abs(actual - expected) > allowed + 1e-9:
                report.violations.append(
                    Violation(
                        "ratio",
                        f"{organ}/{split}",
                        f"{organ} {split}: {actual} pairs, expected {expected:.1f} +/- {allowed:.2f}",
                    )
                )
    return report

