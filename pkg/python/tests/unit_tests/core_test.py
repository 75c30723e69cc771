"""Unit test for the core module: windows, marked point sets and the NN graph."""

import numpy as np
import pytest

from segpoint.core import (InputError, MarkedPointSet, NnGraph, RectWindow, brute_force_nn,
                           build_nn_graph, nn_search, pairwise_nn_query)

pytestmark = [pytest.mark.usable, pytest.mark.fast]


# Fixtures
@pytest.fixture(scope='module')
def random_coords():
    rng = np.random.default_rng(12)
    return rng.random((400, 2))


# Tests
def test_window_properties():
    w = RectWindow(0, 2, -1, 3)
    assert w.width == 2
    assert w.height == 4
    assert w.area == 8
    assert w.shorter_side == 2
    assert w.to_list() == [0.0, 2.0, -1.0, 3.0]
    assert w == RectWindow.parse('0,2,-1,3')
    assert str(w) == '[0,2]x[-1,3]'


@pytest.mark.parametrize('bounds', [
    [0, 0, 0, 1],
    [1, 0, 0, 1],
    [0, 1, 2, 1],
    [0, np.inf, 0, 1],
    [np.nan, 1, 0, 1],
])
def test_window_invalid(bounds):
    with pytest.raises(InputError):
        RectWindow(*bounds)


@pytest.mark.parametrize('text', ['0,1,0', '0,1,a,1', ''])
def test_window_parse_invalid(text):
    with pytest.raises(InputError):
        RectWindow.parse(text)


def test_window_contains():
    w = RectWindow()
    mask = w.contains(np.array([[0, 0], [1, 1], [0.5, 1.01], [-0.1, 0.5]]))
    assert mask.tolist() == [True, True, False, False]


def test_bounding_box():
    w = RectWindow.bounding_box([[1, 2], [3, -1], [2, 5]])
    assert w.to_list() == [1.0, 3.0, -1.0, 5.0]


def test_point_set_defaults():
    pts = MarkedPointSet([[0, 0], [1, 1], [2, 0]], [0, 0, 0])
    assert pts.q == 2
    assert pts.class_sizes.tolist() == [3, 0]
    assert pts.class_names == ['0', '1']
    assert pts.window == RectWindow(0, 2, 0, 1)
    assert len(pts) == 3


def test_point_set_relabeled():
    pts = MarkedPointSet([[0, 0], [1, 1], [2, 0]], [0, 1, 2], class_names=['a', 'b', 'c'])
    other = pts.relabeled(np.array([2, 2, 0]))
    assert other.class_sizes.tolist() == [1, 0, 2]
    assert other.class_names == ['a', 'b', 'c']
    assert other.window == pts.window
    assert np.array_equal(other.class_coords(2), [[0, 0], [1, 1]])


def test_point_set_names_fix_q():
    pts = MarkedPointSet([[0, 0], [1, 1]], [0, 1], class_names=['a', 'b', 'c'])
    assert pts.q == 3
    assert pts.class_sizes.tolist() == [1, 1, 0]


@pytest.mark.parametrize('coords, labels, kwargs', [
    [[[0, 0]], [0], {}],
    [[[0, 0, 0], [1, 1, 1]], [0, 1], {}],
    [[[0, 0], [1, 1]], [0, 1, 1], {}],
    [[[0, 0], [np.nan, 1]], [0, 1], {}],
    [[[0, 0], [1, 1]], [0.5, 1], {}],
    [[[0, 0], [1, 1]], [-1, 1], {}],
    [[[0, 0], [1, 1]], [0, 3], {'q': 3}],
    [[[0, 0], [1, 1]], [0, 1], {'q': 2, 'class_names': ['a', 'b', 'c']}],
])
def test_point_set_invalid(coords, labels, kwargs):
    with pytest.raises(InputError):
        MarkedPointSet(coords, labels, window=RectWindow(-1, 2, -1, 2), **kwargs)


def test_collinear_graph():
    g = build_nn_graph(np.array([[0, 0], [1, 0], [3, 0]]))
    assert g.nn_index.tolist() == [1, 0, 1]
    assert g.nn_dist.tolist() == [1.0, 1.0, 2.0]
    assert g.indeg.tolist() == [1, 2, 0]
    assert g.Q == 2
    assert g.R == 2


def test_two_points():
    g = build_nn_graph([[0, 0], [0, 1]])
    assert g.nn_index.tolist() == [1, 0]
    assert g.Q == 0
    assert g.R == 2


def test_square_ties_lowest_index():
    g = build_nn_graph([[0, 0], [1, 0], [0, 1], [1, 1]])
    assert g.nn_index.tolist() == [1, 0, 0, 1]
    assert g.R == 2


def test_lattice_matches_brute_force():
    x, y = np.meshgrid(np.arange(10.0), np.arange(10.0))
    coords = np.column_stack([x.ravel(), y.ravel()])
    nn, dist = nn_search(coords)
    nn_ref, dist_ref = brute_force_nn(coords)
    assert np.array_equal(nn, nn_ref)
    assert np.array_equal(dist, dist_ref)


def test_coincident_points_matches_brute_force():
    coords = np.array([[0.0, 0.0]] * 12 + [[1.0, 1.0], [2.0, 0.5]])
    nn, _ = nn_search(coords)
    nn_ref, _ = brute_force_nn(coords)
    assert np.array_equal(nn, nn_ref)


def test_random_matches_brute_force(random_coords):
    nn, dist = nn_search(random_coords)
    nn_ref, dist_ref = brute_force_nn(random_coords)
    assert np.array_equal(nn, nn_ref)
    assert np.allclose(dist, dist_ref, rtol=0, atol=1e-15)


def test_graph_counts(random_coords):
    g = build_nn_graph(random_coords)
    n = random_coords.shape[0]
    assert g.indeg.sum() == n
    assert g.Q == g.q_from_histogram() == g.q_truncated()
    assert g.R % 2 == 0
    assert 0 <= g.R <= n
    mutual = np.flatnonzero(g.nn_index[g.nn_index] == np.arange(n))
    assert g.R == mutual.size
    mean, sd = g.mean_nn_distance()
    assert mean == pytest.approx(g.nn_dist.mean())
    assert sd > 0


def test_graph_similarity_invariant(random_coords):
    g = build_nn_graph(random_coords)
    angle = 0.7
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    moved = 3.5 * random_coords @ rot.T + np.array([10.0, -4.0])
    h = build_nn_graph(moved)
    assert np.array_equal(g.nn_index, h.nn_index)
    assert (g.Q, g.R) == (h.Q, h.R)


def test_graph_uses_point_set(random_coords):
    pts = MarkedPointSet(random_coords, np.arange(400) % 3, window=RectWindow())
    assert np.array_equal(build_nn_graph(pts).nn_index, build_nn_graph(random_coords).nn_index)


def test_nn_graph_from_index():
    g = NnGraph([1, 2, 1, 2], [1.0, 1.0, 1.0, 2.0])
    assert g.indeg.tolist() == [0, 2, 2, 0]
    assert g.Q_k.tolist() == [2, 0, 2]
    assert g.Q == 4
    assert g.R == 2


def test_pairwise_nn_query(random_coords):
    nn_ref, dist_ref = brute_force_nn(random_coords)
    for i in [0, 17, 399]:
        j, d = pairwise_nn_query(random_coords, i)
        assert j == nn_ref[i]
        assert d == pytest.approx(dist_ref[i])


@pytest.mark.parametrize('i', [-1, 400, 2.5])
def test_pairwise_nn_query_invalid(random_coords, i):
    with pytest.raises(InputError):
        pairwise_nn_query(random_coords, i)
