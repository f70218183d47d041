"""File formats.

Split directory layout::

    <split>/
      manifest.json            JSON array of pair metadata records
      cells/<pair_id>.csv      x,y,class rows, no header (class 1 = BC, 2 = TC)
      tissue/<pair_id>.pgm     8-bit labels 1 = BG, 2 = CA, 255 = UNK (.png also read)
      tissue_prob/<pair_id>.*  optional cancer probability: 16-bit .pgm/.png
                               scaled by 65535, or a .csv float raster

Predictions are a single JSON file per split::

    {"points": [{"image_id": "...", "x": 1.0, "y": 2.0, "class": 2, "confidence": 0.9}]}
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .core import (
    CellClass,
    DatasetManifest,
    GroundTruthCell,
    InputError,
    PatchPairMeta,
    PredictedCell,
    TissueGrid,
    TissueProbGrid,
    validate_manifest,
)
from .fusion import ScoredCell

PROB_SCALE = 65535
RASTER_EXTS = (".pgm", ".png", ".csv")


# -- JSON ---------------------------------------------------------------------

def _round_floats(obj, digits: int):
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, Mapping):
        return {str(k): _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, digits) for v in obj]
    if isinstance(obj, np.generic):
        return _round_floats(obj.item(), digits)
    return obj


def canonical_json(obj, digits: int | None = None) -> str:
    """Sorted keys, two-space indent, trailing newline.

    With ``digits`` every float is rounded to that many significant digits
    (reports use 6).
    """
    if digits is not None:
        obj = _round_floats(obj, digits)
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _load_json(path: Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def write_json(path, obj, digits: int | None = None) -> None:
    Path(path).write_text(canonical_json(obj, digits), encoding="utf-8")


# -- cells ----------------------------------------------------------------------

def _parse_int(text: str, what: str, where: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise InputError(f"{where}: {what} {text.strip()!r} is not an integer") from None


def read_cells_csv(path) -> list[GroundTruthCell]:
    path = Path(path)
    cells = []
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not f.strip() for f in row):
                continue
            where = f"{path}:{lineno}"
            if len(row) != 3:
                raise InputError(f"{where}: expected 3 fields x,y,class, got {len(row)}")
            x = _parse_int(row[0], "x", where)
            y = _parse_int(row[1], "y", where)
            c = _parse_int(row[2], "class", where)
            if c not in (1, 2):
                raise InputError(f"{where}: class must be 1 (BC) or 2 (TC), got {c}")
            try:
                cells.append(GroundTruthCell(x, y, CellClass(c)))
            except InputError as exc:
                raise InputError(f"{where}: {exc}") from None
    return cells


def write_cells_csv(path, cells: Sequence[GroundTruthCell]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in cells:
            fh.write(f"{c.x},{c.y},{int(c.cls)}\n")


# -- predictions ------------------------------------------------------------------

def _number(rec, key, where):
    v = rec.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InputError(f"{where}: field {key!r} must be a number, got {v!r}")
    return v


def _points(path, key="points") -> list:
    data = _load_json(path)
    if not isinstance(data, dict) or not isinstance(data.get(key), list):
        raise InputError(f'{path}: expected an object with a "{key}" array')
    return data[key]


def read_predictions_json(path) -> dict[str, list[PredictedCell]]:
    path = Path(path)
    out: dict[str, list[PredictedCell]] = {}
    for i, rec in enumerate(_points(path)):
        where = f"{path}: points[{i}]"
        if not isinstance(rec, dict):
            raise InputError(f"{where}: expected an object")
        image_id = rec.get("image_id")
        if not isinstance(image_id, str):
            raise InputError(f"{where}: image_id must be a string")
        cls = rec.get("class")
        if cls not in (1, 2) or isinstance(cls, bool):
            raise InputError(f"{where}: class must be 1 (BC) or 2 (TC), got {cls!r}")
        try:
            p = PredictedCell(
                _number(rec, "x", where), _number(rec, "y", where), CellClass(cls),
                _number(rec, "confidence", where),
            )
        except InputError as exc:
            raise InputError(f"{where}: {exc}") from None
        out.setdefault(image_id, []).append(p)
    return out


def predictions_to_json(preds: Mapping[str, Sequence[PredictedCell]]) -> dict:
    points = []
    for image_id in sorted(preds):
        for p in preds[image_id]:
            points.append({"image_id": image_id, "x": p.x, "y": p.y, "class": int(p.cls),
                           "confidence": p.confidence})
    return {"points": points}


def write_predictions_json(path, preds: Mapping[str, Sequence[PredictedCell]]) -> None:
    write_json(path, predictions_to_json(preds))


def read_scored_json(path) -> dict[str, list[ScoredCell]]:
    """``{"cells": [{"image_id", "x", "y", "p_tc", "p_bc"}]}``, input to fusion."""
    path = Path(path)
    out: dict[str, list[ScoredCell]] = {}
    for i, rec in enumerate(_points(path, "cells")):
        where = f"{path}: cells[{i}]"
        if not isinstance(rec, dict) or not isinstance(rec.get("image_id"), str):
            raise InputError(f"{where}: expected an object with a string image_id")
        try:
            c = ScoredCell(*(_number(rec, k, where) for k in ("x", "y", "p_tc", "p_bc")))
        except InputError as exc:
            raise InputError(f"{where}: {exc}") from None
        out.setdefault(rec["image_id"], []).append(c)
    return out


def write_scored_json(path, cells: Mapping[str, Sequence[ScoredCell]]) -> None:
    recs = [
        {"image_id": k, "x": c.x, "y": c.y, "p_tc": c.p_tc, "p_bc": c.p_bc}
        for k in sorted(cells) for c in cells[k]
    ]
    write_json(path, {"cells": recs})


# -- rasters -----------------------------------------------------------------------

def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise InputError(f"{path}: not a binary PGM (P5) file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise InputError(f"{path}: malformed PGM header") from None
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(data) - pos < need:
        raise InputError(f"{path}: expected {need} bytes of pixel data at offset {pos}, got {len(data) - pos}")
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)


def _write_pgm(path: Path, arr: np.ndarray) -> None:
    h, w = arr.shape
    if arr.dtype == np.uint16:
        header, body = f"P5\n{w} {h}\n65535\n", arr.astype(">u2").tobytes()
    else:
        header, body = f"P5\n{w} {h}\n255\n", arr.astype(np.uint8).tobytes()
    path.write_bytes(header.encode("ascii") + body)


def _read_image(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".pgm":
        return _read_pgm(path)
    try:
        with Image.open(path) as im:
            return np.array(im)
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except OSError as exc:
        raise InputError(f"{path}: unreadable image ({exc})") from None


def read_label_raster(path) -> TissueGrid:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    arr = _read_image(path)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise InputError(f"{path}: tissue labels must be 8-bit single-channel, got {arr.dtype} {arr.shape}")
    try:
        return TissueGrid(arr)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_label_raster(path, grid: TissueGrid) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        Image.fromarray(np.ascontiguousarray(grid.labels)).save(path)
    else:
        _write_pgm(path, grid.labels)


def read_prob_raster(path) -> TissueProbGrid:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    if path.suffix.lower() == ".csv":
        try:
            arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None
    else:
        raw = _read_image(path)
        if raw.ndim != 2 or raw.dtype.kind not in "ui" or raw.dtype.itemsize < 2:
            raise InputError(f"{path}: probability raster must be 16-bit grayscale, got {raw.dtype}")
        arr = raw.astype(np.float64) / PROB_SCALE
    try:
        return TissueProbGrid(arr)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_prob_raster(path, grid: TissueProbGrid) -> None:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".csv":
        np.savetxt(path, grid.p_ca, delimiter=",", fmt="%.17g")
        return
    q = np.rint(grid.p_ca * PROB_SCALE).astype(np.uint16)
    if ext == ".png":
        Image.fromarray(q).save(path)
    else:
        _write_pgm(path, q)


# -- metadata -------------------------------------------------------------------------

def read_pair_meta(path) -> PatchPairMeta:
    path = Path(path)
    rec = _load_json(path)
    if not isinstance(rec, dict):
        raise InputError(f"{path}: expected a JSON object")
    try:
        return PatchPairMeta.from_record(rec)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_pair_meta(path, meta: PatchPairMeta) -> None:
    write_json(path, meta.to_record())


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    data = _load_json(path)
    if not isinstance(data, list) or not all(isinstance(r, dict) for r in data):
        raise InputError(f"{path}: manifest must be a JSON array of objects")
    return DatasetManifest.from_records(data)


def manifest_to_json(manifest: DatasetManifest) -> str:
    return canonical_json([p.to_record() for p in manifest.pairs])


def write_manifest(path, manifest: DatasetManifest) -> None:
    Path(path).write_text(manifest_to_json(manifest), encoding="utf-8")


# -- split directories -------------------------------------------------------------------

@dataclass
class SplitData:
    manifest: DatasetManifest
    gts: dict[str, list[GroundTruthCell]]
    grids: dict[str, TissueGrid]
    probs: dict[str, TissueProbGrid] = field(default_factory=dict)

    @property
    def metas(self) -> dict[str, PatchPairMeta]:
        return self.manifest.by_id()


def _find_raster(folder: Path, pair_id: str) -> Path | None:
    for ext in RASTER_EXTS:
        p = folder / f"{pair_id}{ext}"
        if p.exists():
            return p
    return None


def load_split(root, with_probs: bool = False) -> SplitData:
    """Load and validate a split directory (see module docstring)."""
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"{root}: not a directory")
    manifest = read_manifest(root / "manifest.json")
    if manifest.rejected:
        pid, reason = manifest.rejected[0]
        raise InputError(f"{root / 'manifest.json'}: pair {pid!r}: {reason}")
    report = validate_manifest(manifest)
    hard = [v for v in report.violations if v.kind in ("duplicate_pair_id", "leakage")]
    if hard:
        raise InputError(f"{root / 'manifest.json'}: {hard[0].message}")
    gts, grids, probs = {}, {}, {}
    for meta in manifest.pairs:
        pid = meta.pair_id
        cell_path = root / "cells" / f"{pid}.csv"
        if not cell_path.exists():
            raise InputError(f"pair {pid!r}: missing cell annotations {cell_path}")
        gts[pid] = read_cells_csv(cell_path)
        raster = _find_raster(root / "tissue", pid)
        if raster is None or raster.suffix == ".csv":
            raise InputError(f"pair {pid!r}: missing tissue raster under {root / 'tissue'}")
        grids[pid] = read_label_raster(raster)
        if grids[pid].labels.shape != (meta.tissue_grid_size,) * 2:
            raise InputError(f"pair {pid!r}: tissue raster {raster} has shape {grids[pid].labels.shape}")
        if with_probs:
            prob_path = _find_raster(root / "tissue_prob", pid)
            if prob_path is None:
                raise InputError(f"pair {pid!r}: missing probability raster under {root / 'tissue_prob'}")
            probs[pid] = read_prob_raster(prob_path)
    return SplitData(manifest, gts, grids, probs)


def write_split(root, manifest: DatasetManifest, gts, grids, probs=None, raster_ext: str = ".pgm") -> None:
    root = Path(root)
    (root / "cells").mkdir(parents=True, exist_ok=True)
    (root / "tissue").mkdir(exist_ok=True)
    write_manifest(root / "manifest.json", manifest)
    for meta in manifest.pairs:
        pid = meta.pair_id
        write_cells_csv(root / "cells" / f"{pid}.csv", gts.get(pid, []))
        write_label_raster(root / "tissue" / f"{pid}{raster_ext}", grids[pid])
    if probs:
        (root / "tissue_prob").mkdir(exist_ok=True)
        for pid, p in probs.items():
            write_prob_raster(root / "tissue_prob" / f"{pid}{raster_ext}", p)
