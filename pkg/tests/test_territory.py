import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from enfthin.core import NerveTree, PatternError, Point, Window
from enfthin.territory import (
    DegenerateHull,
    Polygon,
    convex_hull,
    ecdf_curve,
    sample_territories,
    territory_size,
    union_area,
)

from oracles import brute_force_hull, rectangles_union_area


def tree(base, ends):
    return NerveTree(0, Point(*base), tuple(Point(*e) for e in ends))


def rect(x0, y0, x1, y1):
    return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def test_hull_square_with_centre():
    h = convex_hull([(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)])
    assert len(h.vertices) == 4 and h.area == pytest.approx(1.0)


def test_hull_triangle():
    assert convex_hull([(0, 0), (4, 0), (0, 3)]).area == pytest.approx(6.0)


def test_hull_drops_collinear_points():
    h = convex_hull([(0, 0), (1, 0), (2, 0), (2, 2), (0, 2), (1, 2)])
    assert len(h.vertices) == 4


def test_hull_degenerate_and_empty():
    assert isinstance(convex_hull([(0, 0), (1, 1), (2, 2)]), DegenerateHull)
    assert isinstance(convex_hull([(3, 3)]), DegenerateHull)
    with pytest.raises(PatternError):
        convex_hull(np.empty((0, 2)))


def test_hull_matches_brute_force_random():
    gen = np.random.default_rng(21)
    for _ in range(200):
        pts = gen.random((10, 2))
        h = convex_hull(pts)
        verts, area = brute_force_hull(pts)
        assert {tuple(v) for v in h.vertices} == verts
        assert h.area == pytest.approx(area, rel=1e-12)


def test_hull_matches_brute_force_on_lattice():
    gen = np.random.default_rng(5)
    for _ in range(100):
        pts = gen.integers(0, 4, (10, 2)).astype(float)
        h = convex_hull(pts)
        verts, area = brute_force_hull(pts)
        if isinstance(h, DegenerateHull):
            assert area == 0
        else:
            assert {tuple(v) for v in h.vertices} == verts
            assert h.area == pytest.approx(area)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 20), angle=st.floats(0, 2 * np.pi),
       shift=st.tuples(st.floats(-50, 50), st.floats(-50, 50)))
def test_hull_area_invariances(seed, n, angle, shift):
    gen = np.random.default_rng(seed)
    pts = gen.random((n, 2)) * 10
    a = convex_hull(pts).area
    c, s = np.cos(angle), np.sin(angle)
    moved = pts @ np.array([[c, s], [-s, c]]) + np.array(shift)
    assert convex_hull(moved).area == pytest.approx(a, rel=1e-9, abs=1e-9)
    assert convex_hull(pts[gen.permutation(n)]).area == a
    h = convex_hull(pts)
    if isinstance(h, Polygon):
        assert convex_hull(h.vertices).area == pytest.approx(h.area, rel=1e-12)


def test_territory_examples():
    assert territory_size(tree((0, 0), [(4, 0), (0, 3)])) == pytest.approx(6.0)
    assert territory_size(tree((0, 0), [(3, 4)])) == pytest.approx(5.0)
    assert territory_size(tree((0, 0), [(1, 0), (2, 0)])) == pytest.approx(2.0)
    with pytest.raises(PatternError):
        territory_size(tree((0, 0), []))


def test_sample_territories_skip_trees_without_ends(small_sample):
    idx, sizes = sample_territories(small_sample)
    assert idx == [0, 1, 3]
    assert sizes[1] == pytest.approx(np.hypot(10, 2))


def test_union_area_examples():
    w = Window(0, 0, 10, 10)
    assert union_area([rect(0, 0, 1, 1), rect(2, 2, 3, 3)], w, 0.05) == pytest.approx(2.0, rel=0.01)
    assert union_area([rect(0, 0, 1, 1), rect(0, 0, 1, 1)], w, 0.05) == pytest.approx(1.0, rel=0.01)
    assert union_area([rect(0, 0, 2, 1), rect(1, 0, 3, 1)], w, 0.05) == pytest.approx(3.0, rel=0.01)
    assert union_area([], w) == 0.0


def test_union_area_random_rectangles_vs_inclusion_exclusion():
    gen = np.random.default_rng(8)
    w = Window(0, 0, 20, 20)
    for _ in range(10):
        rects = []
        for _ in range(4):
            x0, y0 = gen.uniform(0, 15, 2)
            rects.append((x0, y0, x0 + gen.uniform(1, 5), y0 + gen.uniform(1, 5)))
        got = union_area([rect(*r) for r in rects], w, 0.02)
        assert got == pytest.approx(rectangles_union_area(rects), rel=0.01)


def test_union_area_clips_to_window():
    assert union_area([rect(-1, -1, 1, 1)], Window(0, 0, 5, 5), 0.01) == pytest.approx(1.0, rel=0.01)


def test_ecdf_examples():
    np.testing.assert_allclose(ecdf_curve([1, 2, 3], [0, 1, 2, 3, 4]).values, [0, 1 / 3, 2 / 3, 1, 1])
    np.testing.assert_array_equal(ecdf_curve([2, 2, 2], [0, 1, 2, 3]).values, [0, 0, 1, 1])
    with pytest.raises(ValueError):
        ecdf_curve([], [0, 1])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40))
def test_ecdf_matches_counting(values):
    grid = np.linspace(-100, 100, 41)
    got = ecdf_curve(values, grid).values
    expect = [sum(v <= g for v in values) / len(values) for g in grid]
    np.testing.assert_allclose(got, expect)
    assert np.all(np.diff(got) >= 0)
