import numpy as np
import pytest

from ocelot_eval.core import CellClass, GroundTruthCell, PatchPairMeta, PredictedCell


def random_instance(rng, n_gt_max=50, n_pred_max=50, cls=CellClass.TC, extent=200.0):
    """Random single-class matching problem in a small window so hits are common."""
    n_gt = int(rng.integers(0, n_gt_max + 1))
    n_pred = int(rng.integers(0, n_pred_max + 1))
    gts = [GroundTruthCell(int(x), int(y), cls) for x, y in rng.integers(0, int(extent), (n_gt, 2))]
    preds = [
        PredictedCell(x, y, cls, c)
        for (x, y), c in zip(rng.uniform(0, extent, (n_pred, 2)), rng.uniform(0, 1, n_pred))
    ]
    return preds, gts


def random_mixed(rng, n_gt=20, n_pred=20, extent=150):
    gts = [GroundTruthCell(int(x), int(y), CellClass(int(c)))
           for (x, y), c in zip(rng.integers(0, extent, (n_gt, 2)), rng.integers(1, 3, n_gt))]
    preds = [PredictedCell(x, y, CellClass(int(c)), conf)
             for (x, y), c, conf in zip(rng.uniform(0, extent, (n_pred, 2)), rng.integers(1, 3, n_pred),
                                        rng.uniform(0, 1, n_pred))]
    return preds, gts


@pytest.fixture
def meta0():
    return PatchPairMeta("p0", "w0", "kidney", "test", 0, 0)


@pytest.fixture
def meta_center():
    return PatchPairMeta("p1", "w1", "kidney", "test", 1536, 1536)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
