"""Per-class precision / recall / F1 and split-level pooling."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import (
    CELL_CLASSES,
    CellClass,
    ClassMetrics,
    GroundTruthCell,
    InputError,
    MatchCounts,
    PredictedCell,
)
from .matching import DEFAULT_RADIUS_PX, match_all

ImageCounts = dict[CellClass, MatchCounts]


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def class_metrics(counts: MatchCounts) -> ClassMetrics:
    """Precision, recall and F1; any 0/0 resolves to 0."""
    p = _ratio(counts.tp, counts.tp + counts.fp)
    r = _ratio(counts.tp, counts.tp + counts.fn)
    f1 = _ratio(2 * p * r, p + r)
    return ClassMetrics(p, r, f1)


@dataclass(frozen=True)
class EvalReport:
    counts: dict[CellClass, MatchCounts]
    metrics: dict[CellClass, ClassMetrics]
    mf1: float
    n_images: int = 0

    @classmethod
    def from_counts(cls, counts: Mapping[CellClass, MatchCounts], n_images: int = 0) -> "EvalReport":
        counts = {c: counts.get(c, MatchCounts()) for c in CELL_CLASSES}
        metrics = {c: class_metrics(counts[c]) for c in CELL_CLASSES}
        mf1 = sum(m.f1 for m in metrics.values()) / len(CELL_CLASSES)
        return cls(counts, metrics, mf1, n_images)

    def to_dict(self) -> dict:
        classes = {}
        for c in CELL_CLASSES:
            k, m = self.counts[c], self.metrics[c]
            classes[c.name] = {
                "tp": k.tp, "fp": k.fp, "fn": k.fn,
                "precision": m.precision, "recall": m.recall, "f1": m.f1,
            }
        return {"classes": classes, "mF1": self.mf1, "n_images": self.n_images}


def pool_counts(per_image: Sequence[Mapping[CellClass, MatchCounts]]) -> ImageCounts:
    total = {c: MatchCounts() for c in CELL_CLASSES}
    for counts in per_image:
        for c in CELL_CLASSES:
            total[c] = total[c] + counts.get(c, MatchCounts())
    return total


def _match_job(args):
    preds, gts, radius_px = args
    return match_all(preds, gts, radius_px)


def count_split(
    per_image_preds: Mapping[str, Sequence[PredictedCell]],
    per_image_gts: Mapping[str, Sequence[GroundTruthCell]],
    radius_px: float = DEFAULT_RADIUS_PX,
    jobs: int = 1,
) -> dict[str, ImageCounts]:
    """Per-image, per-class counts.

    Images without predictions are scored as empty submissions.  Prediction
    image ids that have no ground truth entry are an input error.
    """
    unknown = sorted(set(per_image_preds) - set(per_image_gts))
    if unknown:
        raise InputError(f"predictions reference unknown image ids: {', '.join(map(str, unknown))}")
    ids = sorted(per_image_gts)
    work = [(list(per_image_preds.get(i, ())), list(per_image_gts[i]), radius_px) for i in ids]
    if jobs > 1 and len(ids) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_match_job, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        results = [_match_job(w) for w in work]
    return dict(zip(ids, results))


def evaluate_split(
    per_image_preds: Mapping[str, Sequence[PredictedCell]],
    per_image_gts: Mapping[str, Sequence[GroundTruthCell]],
    radius_px: float = DEFAULT_RADIUS_PX,
    jobs: int = 1,
) -> EvalReport:
    """Pool TP/FP/FN over all images, then compute per-class metrics and mF1."""
    per_image = count_split(per_image_preds, per_image_gts, radius_px, jobs)
    return EvalReport.from_counts(pool_counts(list(per_image.values())), len(per_image))


def evaluate_by_group(
    per_image_preds: Mapping[str, Sequence[PredictedCell]],
    per_image_gts: Mapping[str, Sequence[GroundTruthCell]],
    groups: Mapping[str, str],
    radius_px: float = DEFAULT_RADIUS_PX,
    jobs: int = 1,
) -> dict[str, EvalReport]:
    """Pooled report per group (e.g. organ), keyed by group name."""
    per_image = count_split(per_image_preds, per_image_gts, radius_px, jobs)
    missing = sorted(set(per_image) - set(groups))
    if missing:
        raise InputError(f"no group assigned for images: {', '.join(missing)}")
    buckets: dict[str, list[ImageCounts]] = {}
    for image_id, counts in per_image.items():
        buckets.setdefault(groups[image_id], []).append(counts)
    return {g: EvalReport.from_counts(pool_counts(v), len(v)) for g, v in sorted(buckets.items())}
