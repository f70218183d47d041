"""Bootstrap confidence intervals and ranking uncertainty.

The resampling unit is the image: each bootstrap replicate draws ``n``
images with replacement, pools their TP/FP/FN counts and recomputes the
statistic.

Random streams
--------------
Draws come from numpy's counter-based ``Philox`` generator keyed by
``seed``.  Replicate ``i`` of an ``n``-image problem consumes the
uniform doubles at stream positions ``[i*m, i*m + n)`` where ``m`` is ``n``
rounded up to a multiple of 4 (Philox emits blocks of four 64-bit words,
which keeps every replicate block-aligned and lets a worker jump straight
to it with ``advance``).  Image index = ``floor(u * n)``.  Results therefore
depend only on ``(seed, n_iter, inputs)`` and never on how replicates are
split across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .core import CELL_CLASSES, CellClass, InputError, MatchCounts, ParameterError

STATISTICS = ("mF1", "F1_BC", "F1_TC", "precision_BC", "precision_TC", "recall_BC", "recall_TC")
CHUNK = 2048

PerImageCounts = Union[Sequence[Mapping[CellClass, MatchCounts]], Mapping[str, Mapping[CellClass, MatchCounts]]]


def counts_array(per_image: PerImageCounts) -> np.ndarray:
    """Stack per-image counts into an int64 array of shape (n_images, 2, 3).

    Axis 1 follows ``CELL_CLASSES`` (BC, TC); axis 2 is (tp, fp, fn).
    Mapping inputs are ordered by image id.
    """
    if isinstance(per_image, Mapping):
        per_image = [per_image[k] for k in sorted(per_image)]
    out = np.zeros((len(per_image), len(CELL_CLASSES), 3), dtype=np.int64)
    for i, counts in enumerate(per_image):
        for j, c in enumerate(CELL_CLASSES):
            k = counts.get(c, MatchCounts())
            out[i, j] = (k.tp, k.fp, k.fn)
    return out


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def statistic_values(pooled: np.ndarray, statistic: str) -> np.ndarray:
    """Evaluate ``statistic`` on pooled counts of shape (..., 2, 3)."""
    if statistic not in STATISTICS:
        raise ParameterError(f"unknown statistic {statistic!r}; choose from {', '.join(STATISTICS)}")
    tp, fp, fn = pooled[..., 0], pooled[..., 1], pooled[..., 2]
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    if statistic == "mF1":
        return (f1[..., 0] + f1[..., 1]) / 2
    name, cls = statistic.split("_")
    j = CELL_CLASSES.index(CellClass[cls])
    return {"F1": f1, "precision": precision, "recall": recall}[name][..., j]


def resample_weights(seed: int, start: int, stop: int, n: int) -> np.ndarray:
    """Multiplicity of each image in replicates ``start..stop-1``, shape (stop-start, n)."""
    stride = -(-n // 4) * 4
    bitgen = np.random.Philox(key=seed)
    bitgen.advance(start * stride // 4)
    u = np.random.Generator(bitgen).random((stop - start, stride))[:, :n]
    idx = np.minimum((u * n).astype(np.int64), n - 1)
    rows = np.arange(stop - start)[:, None] * n
    return np.bincount((idx + rows).ravel(), minlength=(stop - start) * n).reshape(stop - start, n)


def _replicate_stats(arr: np.ndarray, statistic: str, n_iter: int, seed: int, jobs: int) -> np.ndarray:
    """Statistic per replicate; ``arr`` is (n_images, ..., 2, 3)."""
    n = arr.shape[0]
    flat = arr.reshape(n, -1)

    def run(bounds):
        a, b = bounds
        pooled = resample_weights(seed, a, b, n) @ flat
        return statistic_values(pooled.reshape((b - a,) + arr.shape[1:]), statistic)

    chunks = [(a, min(a + CHUNK, n_iter)) for a in range(0, n_iter, CHUNK)]
    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def _check_params(n_images: int, n_iter: int, seed: int):
    if n_images < 1:
        raise ParameterError("bootstrap needs at least one image")
    if int(n_iter) != n_iter or n_iter <= 0:
        raise ParameterError(f"n_iter must be a positive integer, got {n_iter}")
    if int(seed) != seed or seed < 0:
        raise ParameterError(f"seed must be a non-negative integer, got {seed}")


@dataclass(frozen=True)
class BootstrapCI:
    statistic: str
    point: float
    lo: float
    hi: float
    level: float
    n_iter: int

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic, "point": self.point, "lo": self.lo, "hi": self.hi,
            "level": self.level, "n_iter": self.n_iter,
        }


def bootstrap_distribution(
    per_image_counts: PerImageCounts, statistic: str = "mF1", n_iter: int = 10_000,
    seed: int = 0, jobs: int = 1,
) -> np.ndarray:
    arr = counts_array(per_image_counts)
    _check_params(arr.shape[0], n_iter, seed)
    return _replicate_stats(arr, statistic, int(n_iter), int(seed), jobs)


def bootstrap_ci(
    per_image_counts: PerImageCounts,
    statistic: str = "mF1",
    n_iter: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
    jobs: int = 1,
    method: str = "percentile",
) -> BootstrapCI:
    """Image-level bootstrap interval for one statistic.

    ``method="percentile"`` returns the empirical ``(1-level)/2`` and
    ``1-(1-level)/2`` quantiles (linear interpolation).  ``"basic"``
    reflects them around the point estimate.
    """
    if not 0 < level < 1:
        raise ParameterError(f"level must lie in (0, 1), got {level}")
    if method not in ("percentile", "basic"):
        raise ParameterError(f"method must be 'percentile' or 'basic', got {method!r}")
    arr = counts_array(per_image_counts)
    _check_params(arr.shape[0], n_iter, seed)
    point = float(statistic_values(arr.sum(axis=0), statistic))
    values = _replicate_stats(arr, statistic, int(n_iter), int(seed), jobs)
    alpha = (1 - level) / 2
    lo, hi = (float(q) for q in np.quantile(values, [alpha, 1 - alpha]))
    if method == "basic":
        lo, hi = 2 * point - hi, 2 * point - lo
    return BootstrapCI(statistic, point, lo, hi, level, int(n_iter))


def _team_array(teams: Mapping[str, Mapping[str, Mapping[CellClass, MatchCounts]]]):
    if not teams:
        raise InputError("no teams given")
    team_ids = list(teams)
    images = sorted(teams[team_ids[0]])
    for t in team_ids[1:]:
        if sorted(teams[t]) != images:
            diff = sorted(set(teams[t]) ^ set(images))
            raise InputError(
                f"team {t!r} covers a different image set than {team_ids[0]!r}: {', '.join(diff[:10])}"
            )
    # (n_images, n_teams, 2, 3): replicates share one image multiset across teams
    arr = np.stack([counts_array({i: teams[t][i] for i in images}) for t in team_ids], axis=1)
    return team_ids, arr


@dataclass(frozen=True)
class RankMatrix:
    team_ids: tuple[str, ...]
    probs: np.ndarray  # probs[rank, team], rank 0 = best

    def to_dict(self) -> dict:
        return {
            "teams": list(self.team_ids),
            "ranks": [
                {"rank": k + 1, **{t: float(self.probs[k, j]) for j, t in enumerate(self.team_ids)}}
                for k in range(len(self.team_ids))
            ],
        }


@dataclass(frozen=True)
class PairwiseMatrix:
    team_ids: tuple[str, ...]
    probs: np.ndarray  # probs[i, j] = P(team i beats team j)

    def to_dict(self) -> dict:
        return {
            "teams": list(self.team_ids),
            "rows": [
                {"team": ti, **{tj: float(self.probs[i, j]) for j, tj in enumerate(self.team_ids)}}
                for i, ti in enumerate(self.team_ids)
            ],
        }


def team_replicates(teams, statistic="mF1", n_iter=10_000, seed=0, jobs=1):
    team_ids, arr = _team_array(teams)
    _check_params(arr.shape[0], n_iter, seed)
    return team_ids, _replicate_stats(arr, statistic, int(n_iter), int(seed), jobs)


def rank_probability_matrix(
    teams: Mapping[str, Mapping[str, Mapping[CellClass, MatchCounts]]],
    statistic: str = "mF1",
    n_iter: int = 10_000,
    seed: int = 0,
    jobs: int = 1,
) -> RankMatrix:
    """Probability of each team landing at each rank under shared resampling.

    Higher statistic ranks better.  Teams tied in a replicate share the
    tied rank slots uniformly.
    """
    team_ids, scores = team_replicates(teams, statistic, n_iter, seed, jobs)
    n_teams = len(team_ids)
    greater = (scores[:, None, :] > scores[:, :, None]).sum(axis=2)  # [iter, t]
    equal = (scores[:, None, :] == scores[:, :, None]).sum(axis=2)
    probs = np.zeros((n_teams, n_teams))
    for k in range(n_teams):
        in_slot = (greater <= k) & (k < greater + equal)
        probs[k] = (in_slot / equal).sum(axis=0) / scores.shape[0]
    return RankMatrix(tuple(team_ids), probs)


def pairwise_outperformance(
    teams: Mapping[str, Mapping[str, Mapping[CellClass, MatchCounts]]],
    statistic: str = "mF1",
    n_iter: int = 10_000,
    seed: int = 0,
    jobs: int = 1,
) -> PairwiseMatrix:
    """``Q[i, j]`` = share of replicates where team i scores above team j.

    Ties count half to each side.  The larger entry of each symmetric pair
    is computed directly and the other as its complement, which makes
    ``Q[i, j] + Q[j, i] == 1`` hold exactly in floating point.
    """
    team_ids, scores = team_replicates(teams, statistic, n_iter, seed, jobs)
    n_teams, total = len(team_ids), 2 * scores.shape[0]
    q = np.full((n_teams, n_teams), 0.5)
    for i in range(n_teams):
        for j in range(i + 1, n_teams):
            wins = int(np.count_nonzero(scores[:, i] > scores[:, j]))
            ties = int(np.count_nonzero(scores[:, i] == scores[:, j]))
            num = 2 * wins + ties
            if 2 * num >= total:
                q[i, j] = num / total
                q[j, i] = 1.0 - q[i, j]
            else:
                q[j, i] = (total - num) / total
                q[i, j] = 1.0 - q[j, i]
    return PairwiseMatrix(tuple(team_ids), q)
