"""Unit test for the nnct module.

Checks the NNCT counts, the RL moments against their closed forms, the
generalized inverse and the chi-square tests built from them.
"""

from math import prod

import numpy as np
import pytest
from scipy import stats

from segpoint.core import (DegenerateClassError, InputError, MarkedPointSet, NumericalWarning,
                           RectWindow, build_nn_graph)
from segpoint.nnct import (Nnct, TestBattery, TestReport, base_class_specific, build_nnct,
                           cell_moments, chisq_sf, dixon_overall, expand_selectors, expected_counts,
                           moments_from_graph, nn_class_specific, parse_selector, pseudo_inverse,
                           segregation_tests, selector_dfs, selector_names, statistics_from_points,
                           two_class_overall_closed_form)

pytestmark = [pytest.mark.usable, pytest.mark.fast]

tolerance = 1e-8


def falling(x, k):
    return prod(x - t for t in range(k))


def random_point_set(n, class_sizes, seed):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(class_sizes)), class_sizes)
    rng.shuffle(labels)
    return MarkedPointSet(rng.random((n, 2)), labels, window=RectWindow())


# Fixtures
@pytest.fixture(scope='module')
def two_class():
    pts = random_point_set(60, [25, 35], seed=3)
    g = build_nn_graph(pts)
    return pts, build_nnct(pts, g), moments_from_graph(pts, g)


@pytest.fixture(scope='module')
def three_class():
    pts = random_point_set(90, [20, 30, 40], seed=4)
    g = build_nn_graph(pts)
    return pts, build_nnct(pts, g), moments_from_graph(pts, g)


# Tests
def test_nnct_two_points():
    pts = MarkedPointSet([[0, 0], [0, 1]], [0, 1], window=RectWindow(-1, 1, -1, 2))
    table = build_nnct(pts, build_nn_graph(pts))
    assert table.counts.tolist() == [[0, 1], [1, 0]]


def test_nnct_collinear():
    pts = MarkedPointSet([[0, 0], [1, 0], [3, 0]], [0, 0, 1], window=RectWindow(-1, 4, -1, 1))
    table = build_nnct(pts, build_nn_graph(pts))
    assert table.counts.tolist() == [[2, 0], [1, 0]]
    assert table.row_sums.tolist() == [2, 1]
    assert table.col_sums.tolist() == [3, 0]
    assert table.total == 3


def test_nnct_sums(three_class):
    pts, table, _ = three_class
    assert table.row_sums.tolist() == pts.class_sizes.tolist()
    assert table.total == pts.n


def test_nnct_percentages():
    table = Nnct([[3, 1], [0, 0]], class_names=['a', 'b'])
    assert np.allclose(table.row_percentages(), [[75, 25], [0, 0]])
    assert np.allclose(table.col_percentages(), [[100, 100], [0, 0]])


def test_nnct_float_counts():
    table = Nnct([[1.5, 0.5], [1.0, 2.0]])
    assert table.counts.dtype == float
    assert Nnct([[1.0, 2.0], [3.0, 4.0]]).counts.dtype == np.int64


@pytest.mark.parametrize('counts', [
    [[1, 2, 3]],
    [[1]],
    [[1, -1], [0, 2]],
    [[1, np.nan], [0, 2]],
])
def test_nnct_invalid(counts):
    with pytest.raises(InputError):
        Nnct(counts)


def test_build_nnct_size_mismatch(two_class):
    pts, _, _ = two_class
    other = build_nn_graph(np.random.default_rng(0).random((10, 2)))
    with pytest.raises(InputError):
        build_nnct(pts, other)


def test_expected_counts():
    e = expected_counts([10, 10])
    assert np.allclose(e, [[90 / 19, 100 / 19], [100 / 19, 90 / 19]])


def test_expected_counts_rows():
    sizes = [215, 205, 156, 98, 59]
    e = expected_counts(sizes)
    assert np.allclose(e.sum(axis=1), sizes)
    assert e[0, 0] == pytest.approx(215 * 214 / 732)


def test_expected_counts_invalid():
    with pytest.raises(InputError):
        expected_counts([1, 2], n=4)
    with pytest.raises(InputError):
        expected_counts([1, 0])


@pytest.mark.parametrize('sizes, Q, R', [
    [[4, 3, 2], 6, 4],
    [[10, 10], 12, 12],
    [[30, 50, 20], 62, 60],
])
def test_cell_variances_closed_form(sizes, Q, R):
    n = sum(sizes)
    m = cell_moments(sizes, Q=Q, R=R)
    distinct = n * n - 3 * n - Q + R
    for i, ni in enumerate(sizes):
        e = ni * (ni - 1) / (n - 1)
        p2, p3, p4 = (falling(ni, k) / falling(n, k) for k in (2, 3, 4))
        var = (n + R) * p2 + (2 * n - 2 * R + Q) * p3 + distinct * p4 - e ** 2
        assert m.cov(i, i, i, i) == pytest.approx(var, rel=tolerance)
        for j, nj in enumerate(sizes):
            if i == j:
                continue
            e = ni * nj / (n - 1)
            p_ij = ni * nj / falling(n, 2)
            p_iij = ni * (ni - 1) * nj / falling(n, 3)
            p_iijj = ni * (ni - 1) * nj * (nj - 1) / falling(n, 4)
            var = n * p_ij + Q * p_iij + distinct * p_iijj - e ** 2
            assert m.cov(i, j, i, j) == pytest.approx(var, rel=tolerance)


def test_cell_moments_structure(three_class):
    _, _, m = three_class
    q = m.q
    assert np.allclose(m.sigma, m.sigma.T)
    # row sums are fixed, so every row total has zero covariance with every cell
    row_totals = m.sigma.reshape(q, q, q * q).sum(axis=1)
    assert np.allclose(row_totals, 0, atol=1e-9)
    assert np.linalg.eigvalsh(m.sigma).min() > -1e-9
    assert m.rank == q * (q - 1)


def test_cell_moments_empty_class():
    with pytest.warns(NumericalWarning):
        m = cell_moments([6, 0], Q=2, R=4)
    assert np.allclose(m.sigma, 0)
    assert m.rank == 0


@pytest.mark.parametrize('sizes, Q, R', [
    [[5], 0, 0],
    [[5, -1], 0, 0],
    [[5, 5], -2, 0],
    [[5, 5], 4, 3],
    [[5, 5], 4, 12],
])
def test_cell_moments_invalid(sizes, Q, R):
    with pytest.raises(InputError):
        cell_moments(sizes, Q=Q, R=R)


def test_pseudo_inverse_diagonal():
    assert np.allclose(pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))


def test_pseudo_inverse_penrose(three_class):
    _, _, m = three_class
    a = m.sigma
    g = pseudo_inverse(a)
    assert np.allclose(a @ g @ a, a, atol=1e-8)
    assert np.allclose(g @ a @ g, g, atol=1e-8)
    assert np.allclose(a @ g, (a @ g).T, atol=1e-8)
    assert np.allclose(g @ a, (g @ a).T, atol=1e-8)


def test_pseudo_inverse_invalid():
    with pytest.raises(InputError):
        pseudo_inverse([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(InputError):
        pseudo_inverse([1.0, 2.0])


@pytest.mark.parametrize('x, df', [
    [0.5, 1], [3.2, 2], [9.91, 6], [117.48, 4], [275.64, 20], [0.01, 3],
])
def test_chisq_sf_matches_scipy(x, df):
    assert chisq_sf(x, df) == pytest.approx(stats.chi2.sf(x, df), rel=1e-10)


def test_chisq_sf_values():
    assert chisq_sf(0.0, 3) == 1.0
    assert chisq_sf(2.25, 2) == pytest.approx(np.exp(-1.125))
    assert chisq_sf(3.841459, 1) == pytest.approx(0.05, abs=1e-6)
    assert chisq_sf(np.array([0.0, 2.25]), 2).shape == (2,)


@pytest.mark.parametrize('x, df', [[1.0, 0], [-1.0, 2]])
def test_chisq_sf_invalid(x, df):
    with pytest.raises(InputError):
        chisq_sf(x, df)


def test_expected_table_gives_zero():
    m = cell_moments([10, 10], Q=12, R=12)
    table = Nnct(m.expected)
    for report in segregation_tests(table, m):
        assert report.statistic == pytest.approx(0.0, abs=1e-9)
        assert report.p_asy == pytest.approx(1.0)


def test_two_class_identities(two_class):
    _, table, m = two_class
    overall = dixon_overall(table, m)
    assert overall.df == 2
    assert two_class_overall_closed_form(table, m) == pytest.approx(overall.statistic, rel=1e-8)
    for j in range(2):
        assert nn_class_specific(table, m, j).statistic == pytest.approx(overall.statistic, rel=1e-6)
    for i in range(2):
        z = (table.counts[i, i] - m.expected[i, i]) / np.sqrt(m.cov(i, i, i, i))
        assert base_class_specific(table, m, i).statistic == pytest.approx(z ** 2, rel=1e-8)


def test_closed_form_needs_two_classes(three_class):
    _, table, m = three_class
    with pytest.raises(InputError):
        two_class_overall_closed_form(table, m)


def test_segregation_tests(three_class):
    _, table, m = three_class
    reports = segregation_tests(table, m)
    assert [r.selector for r in reports] == selector_names(3)
    assert [r.df for r in reports] == [6, 2, 2, 2, 3, 3, 3]
    for r in reports:
        assert r.statistic >= 0
        assert 0 <= r.p_asy <= 1


def test_mismatched_moments(two_class, three_class):
    _, table, _ = three_class
    _, _, m = two_class
    with pytest.raises(InputError):
        dixon_overall(table, m)


@pytest.mark.filterwarnings('ignore::segpoint.core.NumericalWarning')
def test_degenerate_base_class():
    rng = np.random.default_rng(8)
    labels = np.array([0] + [1] * 14 + [2] * 15)
    pts = MarkedPointSet(rng.random((30, 2)), labels, window=RectWindow())
    g = build_nn_graph(pts)
    table, m = build_nnct(pts, g), moments_from_graph(pts, g)
    with pytest.raises(DegenerateClassError):
        base_class_specific(table, m, 0)
    selectors = [r.selector for r in segregation_tests(table, m)]
    assert 'base:0' not in selectors
    assert 'nn:0' in selectors
    values = TestBattery(m).statistics(table.counts)
    assert np.isnan(values[1])
    assert np.all(np.isfinite(np.delete(values, 1)))


def test_battery_matches_tests(three_class):
    pts, table, m = three_class
    expected = [r.statistic for r in segregation_tests(table, m)]
    battery = TestBattery(m)
    assert np.allclose(battery.statistics(table.counts), expected, rtol=1e-8)
    assert np.allclose(statistics_from_points(pts), expected, rtol=1e-8)
    assert battery.dfs.tolist() == selector_dfs(3).tolist()


def test_battery_batch(three_class):
    _, table, m = three_class
    battery = TestBattery(m)
    batch = np.stack([table.counts, m.expected, table.counts])
    values = battery.statistics(batch)
    assert values.shape == (3, 7)
    assert np.allclose(values[1], 0, atol=1e-9)
    assert np.allclose(values[0], values[2])


def test_statistics_similarity_invariant(three_class):
    pts, _, _ = three_class
    moved = MarkedPointSet(2.0 * pts.coords[:, ::-1] + 5.0, pts.labels, window=RectWindow(5, 7, 5, 7))
    assert np.allclose(statistics_from_points(moved), statistics_from_points(pts), rtol=1e-10)


def test_report():
    report = TestReport('base', 1, -1e-12, 2, class_name='Ctrl')
    assert report.statistic == 0.0
    assert report.p_asy == 1.0
    assert report.name == 'base(1)'
    assert report.selector == 'base:1'
    assert report.to_dict()['class'] == 'Ctrl'
    assert TestReport('overall', None, 2.25, 2).selector == 'overall'


@pytest.mark.parametrize('text, position', [
    ['overall', 0],
    ['base:0', 1],
    ['base:2', 3],
    ['nn:0', 4],
    ['nn:2', 6],
    ['base:Ctrl', 2],
    [' nn:Case ', 4],
])
def test_parse_selector(text, position):
    assert parse_selector(text, 3, class_names=['Case', 'Ctrl', 'Other']) == position


@pytest.mark.parametrize('text', ['base', 'base:3', 'nn:-1', 'mean:0', 'base:x'])
def test_parse_selector_invalid(text):
    with pytest.raises(InputError):
        parse_selector(text, 3)


def test_expand_selectors():
    assert expand_selectors(['nn:*', 'overall'], 2) == [0, 3, 4]
    assert expand_selectors(['all'], 2) == list(range(5))
    assert expand_selectors(['base:1', 'base:*'], 2) == [1, 2]
    with pytest.raises(InputError):
        expand_selectors([], 2)
