from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_mixed
from ocelot_eval.core import CellClass, GroundTruthCell, InputError, MatchCounts, PredictedCell
from ocelot_eval.matching import reference_match_class
from ocelot_eval.metrics import class_metrics, count_split, evaluate_by_group, evaluate_split, pool_counts

BC, TC = CellClass.BC, CellClass.TC


@pytest.mark.parametrize(
    "tp,fp,fn,p,r,f1",
    [(1, 1, 1, 0.5, 0.5, 0.5), (0, 0, 0, 0.0, 0.0, 0.0), (3, 1, 2, 0.75, 0.6, 2 / 3), (0, 4, 0, 0, 0, 0)],
)
def test_hand_cases(tp, fp, fn, p, r, f1):
    m = class_metrics(MatchCounts(tp, fp, fn))
    assert abs(m.precision - p) <= 1e-12
    assert abs(m.recall - r) <= 1e-12
    assert abs(m.f1 - f1) <= 1e-12


@settings(max_examples=300)
@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(0, 10_000))
def test_f1_matches_exact_fraction(tp, fp, fn):
    m = class_metrics(MatchCounts(tp, fp, fn))
    exact = Fraction(2 * tp, 2 * tp + fp + fn) if tp else Fraction(0)
    assert abs(m.f1 - float(exact)) <= 1e-12
    assert 0.0 <= m.f1 <= 1.0


def _image():
    """One image with one TP, one FP and one FN for both classes."""
    gts, preds = [], []
    for cls, base in ((BC, 100), (TC, 500)):
        gts += [GroundTruthCell(base, base, cls), GroundTruthCell(base + 200, base, cls)]
        preds += [PredictedCell(base + 1, base, cls, 0.9), PredictedCell(base, base + 200, cls, 0.4)]
    return preds, gts


def test_pooling_of_identical_images():
    p, g = _image()
    rep = evaluate_split({"a": p, "b": p}, {"a": g, "b": g})
    for cls in (BC, TC):
        c = rep.counts[cls]
        assert (c.tp, c.fp, c.fn) == (2, 2, 2)
        assert rep.metrics[cls].f1 == 0.5
    assert rep.mf1 == 0.5
    assert rep.n_images == 2


def test_missing_image_equals_empty(rng):
    p, g = _image()
    extra = [GroundTruthCell(int(x), int(y), TC) for x, y in rng.integers(0, 1024, (5, 2))]
    with_empty = evaluate_split({"a": p, "b": []}, {"a": g, "b": extra})
    missing = evaluate_split({"a": p}, {"a": g, "b": extra})
    base = evaluate_split({"a": p}, {"a": g})
    assert with_empty == missing
    assert missing.counts[TC].fn == base.counts[TC].fn + 5


def test_unknown_prediction_image():
    with pytest.raises(InputError, match="zzz"):
        evaluate_split({"zzz": []}, {"a": []})


def test_all_empty_predictions(rng):
    gts = {f"i{k}": random_mixed(rng, n_gt=15, n_pred=0)[1] for k in range(4)}
    rep = evaluate_split({}, gts)
    for cls in (BC, TC):
        m = rep.metrics[cls]
        assert (m.precision, m.recall, m.f1) == (0, 0, 0)


def test_perfect_submission():
    gts = {"a": [GroundTruthCell(10, 10, BC), GroundTruthCell(300, 40, TC)], "b": [GroundTruthCell(5, 900, TC)]}
    preds = {k: [PredictedCell(g.x, g.y, g.cls, 1.0) for g in v] for k, v in gts.items()}
    assert evaluate_split(preds, gts).mf1 == 1.0


def test_ten_image_oracle(rng):
    preds, gts = {}, {}
    for k in range(10):
        p, g = random_mixed(rng, n_gt=int(rng.integers(0, 60)), n_pred=int(rng.integers(0, 60)), extent=300)
        gts[f"img{k}"] = g
        if k != 3:  # one image left without predictions
            preds[f"img{k}"] = p
    # oracle: brute-force matcher per image/class, pooled, direct formulas
    f1s = []
    for cls in (BC, TC):
        tp = fp = fn = 0
        for k, g in gts.items():
            pc = [q for q in preds.get(k, []) if q.cls == cls]
            gc = [q for q in g if q.cls == cls]
            c = reference_match_class(pc, gc, 15.0).counts
            tp, fp, fn = tp + c.tp, fp + c.fp, fn + c.fn
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    rep = evaluate_split(preds, gts)
    assert abs(rep.mf1 - sum(f1s) / 2) <= 1e-12
    assert rep == evaluate_split(preds, gts, jobs=3)


def test_image_order_does_not_matter(rng):
    preds, gts = {}, {}
    for k in range(6):
        p, g = random_mixed(rng)
        preds[f"i{k}"], gts[f"i{k}"] = p, g
    rev_p = dict(reversed(list(preds.items())))
    rev_g = dict(reversed(list(gts.items())))
    assert evaluate_split(preds, gts) == evaluate_split(rev_p, rev_g)
    per = count_split(preds, gts)
    assert pool_counts(list(per.values())) == pool_counts(list(reversed(list(per.values()))))


def test_by_group(rng):
    preds, gts, groups = {}, {}, {}
    for k in range(6):
        p, g = random_mixed(rng)
        preds[f"i{k}"], gts[f"i{k}"] = p, g
        groups[f"i{k}"] = "kidney" if k % 2 else "bladder"
    out = evaluate_by_group(preds, gts, groups)
    assert list(out) == ["bladder", "kidney"]
    pooled = evaluate_split(preds, gts)
    for cls in (BC, TC):
        assert out["bladder"].counts[cls] + out["kidney"].counts[cls] == pooled.counts[cls]
    with pytest.raises(InputError):
        evaluate_by_group(preds, gts, {"i0": "x"})


def test_report_dict_shape():
    d = evaluate_split({}, {"a": [GroundTruthCell(1, 1, TC)]}).to_dict()
    assert set(d) == {"classes", "mF1", "n_images"}
    assert d["classes"]["TC"] == {"tp": 0, "fp": 0, "fn": 1, "precision": 0.0, "recall": 0.0, "f1": 0.0}
    assert np.isclose(d["mF1"], 0.0)
