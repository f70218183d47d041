import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocelot_eval.core import CoordinateOutOfBounds, InputError, PatchPairMeta, TissueClass, TissueGrid, TissueProbGrid
from ocelot_eval.geometry import (
    aligned_label_crop,
    aligned_tissue_crop,
    cell_to_tissue_index,
    cell_to_tissue_indices,
    prob_at,
    tissue_class_at,
    tissue_classes_at,
)


def test_index_examples(meta0, meta_center):
    assert cell_to_tissue_index(0, 0, meta_center) == (384, 384)
    assert cell_to_tissue_index(512, 512, meta_center) == (512, 512)
    assert cell_to_tissue_index(1023.9, 0, meta0) == (255, 0)


def test_out_of_extent(meta0):
    with pytest.raises(CoordinateOutOfBounds) as e:
        cell_to_tissue_index(2100, 100, meta0)
    assert e.value.axis == "x"
    with pytest.raises(CoordinateOutOfBounds) as e:
        cell_to_tissue_indices([1.0, 2.0], [3.0, 1024.0], meta0)
    assert e.value.axis == "y"


def test_uniform_and_half_grid(meta0, rng):
    g = TissueGrid.uniform(TissueClass.CA)
    for x, y in rng.uniform(0, 1024, (20, 2)):
        assert tissue_class_at(x, y, g, meta0) is TissueClass.CA
    labels = np.full((1024, 1024), 1, np.uint8)
    labels[:, :512] = 2
    half = TissueGrid(labels)
    assert tissue_class_at(100, 100, half, meta0) is TissueClass.CA
    with pytest.raises(CoordinateOutOfBounds):
        tissue_class_at(2100, 100, half, meta0)


def test_checkerboard_matches_direct_lookup(rng):
    r, c = np.indices((1024, 1024))
    labels = np.where((r // 3 + c // 5) % 2 == 0, 1, 2).astype(np.uint8)
    labels[r % 17 == 0] = 255
    grid = TissueGrid(labels)
    meta = PatchPairMeta("p", "w", "o", "test", 1028, 2040)
    xs, ys = rng.uniform(0, 1024, 1000), rng.uniform(0, 1024, 1000)
    vec = tissue_classes_at(xs, ys, grid, meta)
    for x, y, v in zip(xs, ys, vec):
        col = int((x + 1028) // 4)
        row = int((y + 2040) // 4)
        assert tissue_class_at(x, y, grid, meta) == labels[row, col] == v


def test_grid_shape_checked(meta0):
    with pytest.raises(InputError):
        tissue_class_at(1, 1, TissueGrid.uniform(TissueClass.BG, 512), meta0)


@pytest.mark.parametrize("mode", ["nearest", "bilinear"])
def test_constant_crop(mode, meta_center):
    src = TissueProbGrid(np.full((1024, 1024), 0.7))
    out = aligned_tissue_crop(src, meta_center, mode)
    assert out.p_ca.shape == (1024, 1024)
    assert out.mpp == 0.2
    assert np.allclose(out.p_ca, 0.7, atol=1e-15)


def test_nearest_crop_matches_index_arithmetic(rng):
    src = TissueProbGrid(rng.uniform(0, 1, (1024, 1024)))
    meta = PatchPairMeta("p", "w", "o", "test", 1000, 36)
    out = aligned_tissue_crop(src, meta, "nearest").p_ca
    ys, xs = np.indices((1024, 1024))
    assert np.array_equal(out, src.p_ca[(ys + 36) // 4, (xs + 1000) // 4])
    for x, y in rng.integers(0, 1024, (50, 2)):
        assert out[y, x] == prob_at(float(x), float(y), src, meta)


def test_bilinear_at_nodes(rng):
    src = TissueProbGrid(rng.uniform(0, 1, (1024, 1024)))
    meta = PatchPairMeta("p", "w", "o", "test", 2048, 1024)
    out = aligned_tissue_crop(src, meta, "bilinear").p_ca
    # output pixels whose (pos + offset) is a multiple of 4 sit on source nodes
    nodes = out[::4, ::4]
    expect = src.p_ca[256:512, 512:768]
    assert np.max(np.abs(nodes - expect)) <= 1e-12
    # halfway between two nodes along x
    assert out[0, 2] == pytest.approx(0.5 * (src.p_ca[256, 512] + src.p_ca[256, 513]), abs=1e-12)


def test_bilinear_clamps_at_edge(rng):
    src = TissueProbGrid(rng.uniform(0, 1, (1024, 1024)))
    meta = PatchPairMeta("p", "w", "o", "test", 3072, 3072)
    out = aligned_tissue_crop(src, meta, "bilinear").p_ca
    assert np.all(np.isfinite(out)) and out.min() >= 0 and out.max() <= 1
    assert out[-1, -1] == src.p_ca[-1, -1]


def test_bad_mode(meta0):
    with pytest.raises(InputError):
        aligned_tissue_crop(TissueProbGrid(np.zeros((1024, 1024))), meta0, "cubic")


def _block_mode(a):
    b = a.reshape(256, 4, 256, 4).transpose(0, 2, 1, 3).reshape(256, 256, 16)
    # all 16 entries in each block are equal for a nearest crop, so any element is the mode
    assert np.all(b == b[..., :1])
    return b[..., 0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 768), st.integers(0, 768), st.integers(0, 2**32 - 1))
def test_nearest_crop_downsamples_to_source(ox, oy, seed):
    ox, oy = ox * 4, oy * 4
    rng = np.random.default_rng(seed)
    labels = rng.choice(np.array([1, 2, 255], np.uint8), (1024, 1024))
    meta = PatchPairMeta("p", "w", "o", "test", ox, oy)
    crop = aligned_label_crop(TissueGrid(labels), meta).labels
    assert np.array_equal(_block_mode(crop), labels[oy // 4: oy // 4 + 256, ox // 4: ox // 4 + 256])
    prob = TissueProbGrid(rng.uniform(0, 1, (1024, 1024)))
    pcrop = aligned_tissue_crop(prob, meta, "nearest").p_ca
    assert np.array_equal(_block_mode(pcrop), prob.p_ca[oy // 4: oy // 4 + 256, ox // 4: ox // 4 + 256])


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 1023.999), st.floats(0, 1023.999), st.floats(0, 1023.999), st.floats(0, 1023.999),
    st.integers(0, 3072), st.integers(0, 3072),
)
def test_index_monotone_and_in_bounds(x1, y1, x2, y2, ox, oy):
    meta = PatchPairMeta("p", "w", "o", "test", ox, oy)
    a = cell_to_tissue_index(min(x1, x2), min(y1, y2), meta)
    b = cell_to_tissue_index(max(x1, x2), max(y1, y2), meta)
    assert a[0] <= b[0] and a[1] <= b[1]
    for col, row in (a, b):
        assert 0 <= col < 1024 and 0 <= row < 1024
