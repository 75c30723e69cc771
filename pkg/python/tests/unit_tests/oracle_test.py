"""Unit test for the oracle module (exhaustive labelings)."""

from math import factorial

import numpy as np
import pytest

from segpoint.core import InputError, build_nn_graph
from segpoint.nnct import expected_counts
from segpoint.oracle import (class_splits, compare_with_closed_form, enumerate_moments,
                             fit_moment_coefficients, labelings, random_configurations)

pytestmark = [pytest.mark.usable, pytest.mark.fast,
              pytest.mark.filterwarnings('ignore::segpoint.core.NumericalWarning')]


# Tests
@pytest.mark.parametrize('sizes', [[2, 2], [1, 3], [3, 2, 1], [2, 2, 2, 2]])
def test_labelings(sizes):
    rows = labelings(sizes)
    n = sum(sizes)
    count = factorial(n)
    for s in sizes:
        count //= factorial(s)
    assert rows.shape == (count, n)
    assert len({tuple(r) for r in rows}) == count
    for r in rows:
        assert np.bincount(r, minlength=len(sizes)).tolist() == list(sizes)


def test_labelings_too_many_points():
    with pytest.raises(InputError):
        labelings([5, 4])


def test_class_splits():
    assert list(class_splits(4, 2)) == [(1, 3), (2, 2), (3, 1)]
    assert len(list(class_splits(6, 3))) == 10


def test_enumerated_mean():
    coords = random_configurations(1, n_values=(7,), seed=5)[0]
    g = build_nn_graph(coords)
    expected, second, sigma = enumerate_moments(g.nn_index, [3, 4])
    assert np.allclose(expected, expected_counts([3, 4]))
    assert np.allclose(sigma, sigma.T)
    assert np.allclose(second - sigma, np.outer(expected, expected))


def test_enumerate_size_mismatch():
    with pytest.raises(InputError):
        enumerate_moments([1, 0, 1], [2, 2])


@pytest.mark.parametrize('sizes', [[2, 3], [1, 4], [2, 2, 1]])
def test_closed_form_matches_enumeration(sizes):
    for coords in random_configurations(4, n_values=(sum(sizes),), seed=11):
        assert compare_with_closed_form(coords, sizes) < 1e-9


def test_collinear_configuration():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [3.5, 0.0], [7.0, 0.0]])
    assert compare_with_closed_form(coords, [2, 3]) < 1e-9


def test_fit_diagonal_variance():
    fit = fit_moment_coefficients(('ii', 'ii'))
    assert fit.rounded() == {
        (0, 0): {'n': 1, 'R': 1},
        (0, 0, 0): {'n': 2, 'Q': 1, 'R': -2},
        (0, 0, 0, 0): {'n': -3, 'n2': 1, 'Q': -1, 'R': 1},
    }
    assert fit.residual < 1e-8
    assert len(fit.coefficient(3)) == 1
