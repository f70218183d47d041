"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v``; the lines appear in the
"acceptance criteria" section of the terminal summary (and on stdout with
``-s``).
"""

import math
import time
from contextlib import contextmanager

import numpy as np

from conftest import ACCEPTANCE_LINES, random_instance
from ocelot_eval.core import CellClass, DatasetManifest, GroundTruthCell, MatchCounts, PatchPairMeta, PredictedCell, TissueClass, TissueGrid, um_to_px, validate_manifest
from ocelot_eval.fusion import ScoredCell, extreme_fusion
from ocelot_eval.geometry import tissue_classes_at
from ocelot_eval.labelgen import peaks_from_heatmap, points_to_gaussians
from ocelot_eval.matching import hit_radius_px, match_class, reference_match_class
from ocelot_eval.metrics import class_metrics, evaluate_split
from ocelot_eval.stats import bootstrap_ci, counts_array, pairwise_outperformance, rank_probability_matrix
from ocelot_eval.subgroup import cooccurrence_table
from ocelot_eval.synth import (
    P_BC_GIVEN_BG,
    P_TC_GIVEN_CA,
    gen_cells,
    gen_tissue,
    perturb_to_predictions,
    published_manifest,
)

BC, TC = CellClass.BC, CellClass.TC


@contextmanager
def criterion(num, title, budget_s=None):
    t0 = time.perf_counter()
    status = "FAIL"
    try:
        yield
        elapsed = time.perf_counter() - t0
        if budget_s is not None:
            assert elapsed < budget_s, f"criterion {num} took {elapsed:.2f} s, budget {budget_s} s"
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - t0
        budget = f", budget {budget_s:g} s" if budget_s is not None else ""
        line = f"[{num:2d}] {status}  {title} ({elapsed:.2f} s{budget})"
        ACCEPTANCE_LINES.append(line)
        print(line)


def test_01_matching_oracle_equivalence():
    with criterion(1, "matching: accelerated == literal O(n^2) oracle on 1000 instances", 5.0):
        rng = np.random.default_rng(20240101)
        for _ in range(1000):
            preds, gts = random_instance(rng, 50, 50)
            fast = match_class(preds, gts, 15.0)
            ref = reference_match_class(preds, gts, 15.0)
            assert fast.counts == ref.counts
            assert set(fast.matches) == set(ref.matches)


def test_02_hit_criterion_constants():
    with criterion(2, "hit criterion: 3 um @ 0.2 MPP == 15.0 px; boundary inclusive"):
        assert hit_radius_px(3.0, 0.2) == 15.0
        assert um_to_px(3.0, 0.2) == 15.0
        gt = [GroundTruthCell(500, 500, TC)]
        at = match_class([PredictedCell(515.0, 500.0, TC)], gt, hit_radius_px()).counts
        assert (at.tp, at.fp, at.fn) == (1, 0, 0)
        past = match_class([PredictedCell(515.000001, 500.0, TC)], gt, hit_radius_px()).counts
        assert (past.tp, past.fp, past.fn) == (0, 1, 1)


def test_03_synthetic_exact_count_regime():
    with criterion(3, "synth: evaluate reproduces expected TP/FP/FN exactly on 100 seeds", 10.0):
        grid = gen_tissue(77, n_blobs=6)
        for seed in range(100):
            meta = PatchPairMeta(f"p{seed}", f"w{seed}", "o", "test", 4 * (seed % 700), 4 * ((3 * seed) % 700))
            gts = gen_cells(grid, meta, density=150, min_sep_px=31, seed=seed)
            pert = perturb_to_predictions(gts, drop_rate=0.2, jitter_sigma_px=3.0, spurious_rate=0.1,
                                          class_flip_rate=0.1, seed=seed)
            assert pert.exact
            assert evaluate_split({"img": pert.predictions}, {"img": gts}).counts == pert.expected


def test_04_metric_formulas():
    with criterion(4, "metrics: (1,1,1)->0.5, (3,1,2)->2/3 within 1e-12; perfect mF1 == 1"):
        assert abs(class_metrics(MatchCounts(1, 1, 1)).f1 - 0.5) <= 1e-12
        assert abs(class_metrics(MatchCounts(3, 1, 2)).f1 - 2 / 3) <= 1e-12
        rng = np.random.default_rng(4)
        gts = {f"i{k}": [GroundTruthCell(int(x), int(y), CellClass(int(c)))
                         for (x, y), c in zip(rng.integers(0, 1024, (40, 2)), rng.integers(1, 3, 40))]
               for k in range(5)}
        preds = {k: [PredictedCell(g.x, g.y, g.cls, 1.0) for g in v] for k, v in gts.items()}
        assert evaluate_split(preds, gts).mf1 == 1.0


def _naive_bootstrap(arr, n_iter, level, seed):
    rng = np.random.default_rng(seed)
    n = arr.shape[0]
    vals = np.empty(n_iter)
    for r in range(n_iter):
        pooled = arr[rng.integers(0, n, n)].sum(axis=0)
        f1 = [2 * tp / (2 * tp + fp + fn) if tp else 0.0 for tp, fp, fn in pooled]
        vals[r] = sum(f1) / 2
    a = (1 - level) / 2
    return np.percentile(vals, [100 * a, 100 * (1 - a)])


def test_05_bootstrap():
    with criterion(5, "bootstrap: bit-identical under seed; 1 image zero width; naive resampler within 0.01", 60.0):
        rng = np.random.default_rng(5)
        counts = {}
        for k in range(50):
            img = {}
            for c in (BC, TC):
                n = int(rng.integers(10, 80))
                tp = int(rng.binomial(n, 0.7))
                img[c] = MatchCounts(tp, int(rng.poisson(0.3 * n)), n - tp)
            counts[f"img{k:02d}"] = img
        a = bootstrap_ci(counts, "mF1", 10_000, 0.95, seed=123)
        b = bootstrap_ci(counts, "mF1", 10_000, 0.95, seed=123, jobs=4)
        assert (a.point, a.lo, a.hi) == (b.point, b.lo, b.hi)
        one = bootstrap_ci({"x": counts["img00"]}, "mF1", 1000, seed=1)
        assert one.lo == one.hi == one.point
        ci = bootstrap_ci(counts, "mF1", 100_000, 0.95, seed=7)
        lo, hi = _naive_bootstrap(counts_array(counts), 100_000, 0.95, seed=99)
        assert abs(ci.lo - lo) <= 0.01 and abs(ci.hi - hi) <= 0.01


def test_06_ranking_matrices():
    with criterion(6, "ranking: rank columns sum to 1 +- 1e-9; Q_ij + Q_ji == 1; duplicate copies 0.5"):
        rng = np.random.default_rng(6)
        teams = {}
        for t, recall in enumerate((0.55, 0.6, 0.62, 0.7)):
            teams[f"team{t}"] = {
                f"img{k:02d}": {c: MatchCounts(int(rng.binomial(40, recall)), int(rng.poisson(8)), 0)
                                for c in (BC, TC)}
                for k in range(30)
            }
            for v in teams[f"team{t}"].values():
                for c in (BC, TC):
                    v[c] = MatchCounts(v[c].tp, v[c].fp, 40 - v[c].tp)
        teams["team1_copy"] = teams["team1"]
        rm = rank_probability_matrix(teams, "mF1", 5000, seed=6)
        assert np.all(np.abs(rm.probs.sum(axis=0) - 1.0) <= 1e-9)
        q = pairwise_outperformance(teams, "mF1", 5000, seed=6)
        n = len(teams)
        assert all(q.probs[i, j] + q.probs[j, i] == 1.0 for i in range(n) for j in range(n))
        i, j = q.team_ids.index("team1"), q.team_ids.index("team1_copy")
        assert q.probs[i, j] == q.probs[j, i] == 0.5
        assert np.array_equal(rm.probs[:, i], rm.probs[:, j])


def test_07_cooccurrence_targeting():
    with criterion(7, "synth: P(BC|BG)=0.917 and P(TC|CA)=0.885 reproduced within 1% at 100k cells"):
        lab = np.full((1024, 1024), int(TissueClass.BG), np.uint8)
        lab[:, 512:] = int(TissueClass.CA)
        grid = TissueGrid(lab)
        gts, grids, metas = {}, {}, {}
        for k in range(5):
            meta = PatchPairMeta(f"p{k}", f"w{k}", "o", "test", 1536, 1536)
            gts[meta.pair_id] = gen_cells(grid, meta, density=20_000, seed=700 + k)
            grids[meta.pair_id], metas[meta.pair_id] = grid, meta
        assert sum(map(len, gts.values())) >= 100_000
        tab = cooccurrence_table(gts, grids, metas)
        assert abs(tab.rate(BC, TissueClass.BG) - P_BC_GIVEN_BG) <= 0.01
        assert abs(tab.rate(TC, TissueClass.CA) - P_TC_GIVEN_CA) <= 0.01


def test_08_label_round_trip():
    with criterion(8, "labels: gaussian (sigma 5.7 px) -> peaks recovers 100% of cells >42 px apart"):
        assert um_to_px(1.14, 0.2) == 5.7
        total = 0
        for seed in range(5):
            rng = np.random.default_rng(800 + seed)
            cells = []
            while len(cells) < 80:
                x, y = (int(v) for v in rng.integers(0, 1024, 2))
                if all(math.hypot(x - c.x, y - c.y) > 42 for c in cells):
                    cells.append(GroundTruthCell(x, y, CellClass(int(rng.integers(1, 3)))))
            peaks = peaks_from_heatmap(points_to_gaussians(cells, sigma_um=1.14), min_distance_px=7, threshold=0.5)
            assert len(peaks) == len(cells)
            for c in cells:
                near = [p for p in peaks if abs(p.x - c.x) <= 1 and abs(p.y - c.y) <= 1]
                assert len(near) == 1 and near[0].cls == c.cls
            total += len(cells)
        assert total == 400


def test_09_extreme_fusion_invariant():
    with criterion(9, "fusion: no BC over predicted CA, no TC over predicted BG (100 instances)"):
        for seed in range(100):
            rng = np.random.default_rng(900 + seed)
            grid = gen_tissue(seed, n_blobs=int(rng.integers(0, 10)), unk_border=int(rng.integers(0, 20)))
            meta = PatchPairMeta("p", "w", "o", "test", 4 * int(rng.integers(0, 769)), 4 * int(rng.integers(0, 769)))
            cells = [ScoredCell(x, y, p, 1 - p)
                     for (x, y), p in zip(rng.uniform(0, 1024, (300, 2)), rng.uniform(0, 1, 300))]
            out = extreme_fusion(cells, grid, meta)
            assert len(out) == len(cells)
            tissue = tissue_classes_at([o.x for o in out], [o.y for o in out], grid, meta)
            for o, t in zip(out, tissue):
                assert not (t == TissueClass.CA and o.cls is BC)
                assert not (t == TissueClass.BG and o.cls is TC)


def test_10_manifest_validation():
    with criterion(10, "manifest: published counts pass with zero violations; one cross-split WSI -> one leakage"):
        m = published_manifest(seed=10)
        rep = validate_manifest(m)
        assert rep.violations == []
        assert len(m) == 673
        assert rep.pairs_per_split == {"train": 406, "val": 137, "test": 130}
        assert rep.pairs_per_organ["kidney"] == {"train": 125, "val": 41, "test": 41}
        assert rep.pairs_per_organ["bladder"] == {"train": 82, "val": 29, "test": 26}
        pairs = list(m.pairs)
        train_wsi = next(p.wsi_id for p in pairs if p.organ == "kidney" and p.split == "train")
        k = next(i for i, p in enumerate(pairs) if p.organ == "kidney" and p.split == "test")
        r = pairs[k].to_record()
        r["wsi_id"] = train_wsi
        pairs[k] = PatchPairMeta.from_record(r)
        bad = validate_manifest(DatasetManifest(tuple(pairs)))
        assert [(v.kind, v.subject) for v in bad.violations] == [("leakage", train_wsi)]
