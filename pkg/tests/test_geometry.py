import csv
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sicklescreen.errors import NoMeasurableCellsError
from sicklescreen.geometry import (
    Region,
    build_histogram,
    connected_components,
    descriptors,
    extract_regions,
    fill_holes,
    hull_metrics,
    interior_binary,
    measure_regions,
    region_perimeter,
    remove_border_components,
    write_descriptor_csv,
)
from sicklescreen.imaging import LabelMask
from sicklescreen.synthgen import CellKind, CellShape, rasterize

binary_masks = st.tuples(st.integers(1, 14), st.integers(1, 14)).flatmap(lambda hw: arrays(bool, hw))


def region_of(rows):
    g = np.array(rows, dtype=bool)
    ys, xs = np.nonzero(g)
    return Region(xs, ys)


def bfs_components(mask):
    """Reference 8-connected labelling by breadth-first search in row-major seed order."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                seen[y, x] = True
                q, pix = deque([(x, y)]), []
                while q:
                    cx, cy = q.popleft()
                    pix.append((cx, cy))
                    for dx in (-1, 0, 1):
                        for dy in (-1, 0, 1):
                            nx, ny = cx + dx, cy + dy
                            if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                q.append((nx, ny))
                comps.append(sorted(pix, key=lambda p: (p[1], p[0])))
    return comps


def border_reachable_fill(mask):
    """Reference hole filling: background not 4-reachable from the border becomes foreground."""
    h, w = mask.shape
    outside = np.zeros_like(mask, dtype=bool)
    q = deque((x, y) for y in range(h) for x in range(w)
              if (x in (0, w - 1) or y in (0, h - 1)) and not mask[y, x])
    for x, y in q:
        outside[y, x] = True
    while q:
        x, y = q.popleft()
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= nx < w and 0 <= ny < h and not mask[ny, nx] and not outside[ny, nx]:
                outside[ny, nx] = True
                q.append((nx, ny))
    return ~outside


# --- masks -------------------------------------------------------------------------


def test_interior_binary_examples():
    assert not interior_binary(LabelMask(np.zeros((3, 4), np.uint8))).any()
    assert interior_binary(LabelMask(np.full((3, 4), 2, np.uint8))).all()
    grid = np.full((3, 7), 2, np.uint8)
    grid[:, 3] = 1
    comps = connected_components(interior_binary(LabelMask(grid)))
    assert [c.area for c in comps] == [9, 9]


def test_component_examples():
    assert connected_components(np.zeros((4, 4), bool)) == []
    one = np.zeros((3, 3), bool)
    one[1, 1] = True
    assert [c.area for c in connected_components(one)] == [1]
    diag = np.eye(2, dtype=bool)
    assert [c.area for c in connected_components(diag)] == [2]


@given(binary_masks)
def test_components_match_bfs_oracle(mask):
    got = [sorted(zip(c.xs.tolist(), c.ys.tolist()), key=lambda p: (p[1], p[0]))
           for c in connected_components(mask)]
    assert got == bfs_components(mask)


@given(binary_masks)
def test_components_partition_foreground(mask):
    comps = connected_components(mask)
    cover = np.zeros(mask.shape, int)
    for c in comps:
        cover[c.ys, c.xs] += 1
    assert sum(c.area for c in comps) == int(mask.sum())
    assert cover.max(initial=0) <= 1
    np.testing.assert_array_equal(cover.astype(bool), mask)


def test_fill_holes_examples():
    square = np.zeros((6, 6), bool)
    square[1:5, 1:5] = True
    np.testing.assert_array_equal(fill_holes(square), square)
    ring = square.copy()
    ring[2:4, 2:4] = False
    np.testing.assert_array_equal(fill_holes(ring), square)
    c_shape = np.zeros((7, 7), bool)
    c_shape[1:6, 1:6] = True
    c_shape[2:5, 2:5] = False
    c_shape[3, 5:] = False  # corridor to the border
    c_shape[3, 6] = False
    np.testing.assert_array_equal(fill_holes(c_shape), c_shape)


@given(binary_masks)
def test_fill_holes_oracle_idempotent_extensive(mask):
    filled = fill_holes(mask)
    np.testing.assert_array_equal(filled, border_reachable_fill(mask))
    np.testing.assert_array_equal(fill_holes(filled), filled)
    assert np.all(filled[mask])


def test_remove_border_components():
    m = np.zeros((8, 8), bool)
    m[0, 2:4] = True  # touches top edge
    m[3:5, 3:5] = True
    m[6, 6] = True
    regions = connected_components(m)
    kept = remove_border_components(regions, 8, 8)
    assert len(regions) == 3 and len(kept) == 2
    left = np.zeros((5, 5), bool)
    left[2, 0:2] = True
    assert remove_border_components(connected_components(left), 5, 5) == []


# --- perimeter and hull --------------------------------------------------------------


@pytest.mark.parametrize("rows, expected", [([[1]], 4.0), ([[1, 1, 1]] * 3, 8.0), ([[1, 1]], 6.0)])
def test_perimeter_examples(rows, expected):
    assert region_perimeter(region_of(rows)) == pytest.approx(expected)


def test_perimeter_diagonal_steps():
    # plus sign: 8 diagonal steps and 4 axial steps around the outer contour
    plus = [[0, 1, 0], [1, 1, 1], [0, 1, 0]]
    assert region_perimeter(region_of(plus)) == pytest.approx(4 * math.sqrt(2))


@pytest.mark.parametrize(
    "rows, area, feret",
    [([[1]], 1.0, math.sqrt(2)), ([[1] * 10] * 10, 100.0, 10 * math.sqrt(2)), ([[1, 0], [1, 1]], 3.5, math.sqrt(8))],
)
def test_hull_examples(rows, area, feret):
    h, f = hull_metrics(region_of(rows))
    assert h == pytest.approx(area) and f == pytest.approx(feret)


@given(binary_masks)
def test_hull_invariants(mask):
    for r in connected_components(mask):
        h, f = hull_metrics(r)
        assert h >= r.area - 0.5
        assert f >= 1
        d = descriptors(r)
        assert 0 < d.solidity <= 1.0 + 1e-9
        assert 0 < d.roundness <= 1.1
        assert d.form_factor > 0


# --- descriptors ------------------------------------------------------------------------


def disc_region(r, cx=0.0, cy=0.0):
    """Pixels whose centres lie within r of (cx, cy), on a canvas with margin."""
    size = int(2 * r + 10)
    yy, xx = np.mgrid[0:size, 0:size]
    c = size / 2
    inside = (xx - c - cx) ** 2 + (yy - c - cy) ** 2 <= r * r
    (region,) = connected_components(inside)
    return region


def test_disc_radius_50():
    d = descriptors(disc_region(50))
    assert 0.85 <= d.form_factor <= 1.1
    assert 0.9 <= d.roundness <= 1.05
    assert d.solidity >= 0.97


@pytest.mark.parametrize("r", range(10, 51))
def test_disc_family_roundness_band(r):
    for cx, cy in [(0.0, 0.0), (0.5, 0.5), (0.3, 0.1), (0.77, 0.41)]:
        assert 0.9 <= descriptors(disc_region(r, cx, cy)).roundness <= 1.05


@pytest.mark.parametrize("r", [8, 10, 14, 20, 30])
def test_generator_disc_interior_is_round(r):
    size = int(2 * r + 9)
    mask = rasterize([CellShape(CellKind.DISC, (size / 2 + 0.3, size / 2), r)], size, size)
    (region,) = extract_regions(mask, min_area=1)
    assert 0.9 <= descriptors(region).roundness <= 1.05


def test_diameter_examples():
    assert region_of([[1]]).diameter == 0.5
    assert region_of([[1] * 10]).diameter == 9.5
    assert descriptors(region_of([[1]])).roundness == 1.1


def test_square_solidity_exactly_one():
    assert descriptors(region_of([[1] * 20] * 20)).solidity == 1.0


@pytest.mark.parametrize("offset", [0.6, 0.8, 1.0])
def test_crescent_fixture_is_filtered(offset):
    mask = rasterize([CellShape(CellKind.SICKLE, (40.0, 40.0), 20.0, 0.4, crescent_offset=offset)], 80, 80)
    (region,) = extract_regions(mask)
    d = descriptors(region)
    assert d.solidity < 0.8
    assert not measure_regions([region])[0].kept


@given(binary_masks, st.integers(0, 9), st.integers(0, 9))
def test_descriptors_translation_invariant(mask, dx, dy):
    for r in connected_components(mask):
        moved = Region(r.xs + dx, r.ys + dy)
        assert descriptors(moved) == descriptors(r)


def test_extract_regions_drops_specks_and_border():
    cls = np.zeros((30, 30), np.uint8)
    cls[5:12, 5:12] = 2  # 49 px, kept
    cls[20:23, 20:23] = 2  # 9 px speck
    cls[0:8, 20:28] = 2  # touches the border
    assert [r.area for r in extract_regions(LabelMask(cls))] == [49]


# --- histogram ------------------------------------------------------------------------


def test_histogram_examples():
    np.testing.assert_array_equal(build_histogram([0.5], 2, (0, 1)), [0.0, 1.0])
    np.testing.assert_array_equal(build_histogram([0.1, 0.1, 0.9, 0.9], 2, (0, 1)), [0.5, 0.5])
    np.testing.assert_array_equal(build_histogram([1.0, 7.0, -3.0], 2, (0, 1)), [1 / 3, 2 / 3])


def test_histogram_empty_input():
    with pytest.raises(NoMeasurableCellsError, match="no measurable cells"):
        build_histogram([], 20, (0, 1.1))


@given(st.lists(st.floats(-1, 2, allow_nan=False), min_size=1, max_size=50), st.integers(1, 30))
def test_histogram_sums_to_one(values, bins):
    assert abs(build_histogram(values, bins, (0, 1.1)).sum() - 1) <= 1e-9


def test_descriptor_csv(tmp_path):
    cls = np.zeros((20, 20), np.uint8)
    cls[3:9, 3:9] = 2
    records = measure_regions(extract_regions(LabelMask(cls)))
    write_descriptor_csv(records, tmp_path / "d.csv")
    with open(tmp_path / "d.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["region_id", "area", "perimeter", "form_factor", "roundness", "solidity", "kept"]
    assert rows[0]["area"] == "36" and rows[0]["kept"] == "1"
    assert float(rows[0]["roundness"]) == records[0].descriptors.roundness
