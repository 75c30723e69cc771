"""Integration test of the NNCT moments against exhaustive labelings.

Every split of random configurations of 4 to 8 points into 2 and 3 classes is
enumerated, and the covariance coefficients are recovered from scratch.
Uses these functions:
- segpoint.oracle.compare_with_closed_form
- segpoint.oracle.fit_moment_coefficients
"""

import pytest

from segpoint.oracle import class_splits, compare_with_closed_form, fit_moment_coefficients, random_configurations

pytestmark = [pytest.mark.usable, pytest.mark.fast,
              pytest.mark.filterwarnings('ignore::segpoint.core.NumericalWarning')]

tolerance = 1e-9
DISTINCT = {'n2': 1, 'n': -3, 'Q': -1, 'R': 1}


# Tests
@pytest.mark.parametrize('q', [2, 3])
def test_all_splits_match(q):
    configs = random_configurations(20, seed=2024)
    worst = 0.0
    for coords in configs:
        for split in class_splits(coords.shape[0], q):
            worst = max(worst, compare_with_closed_form(coords, split))
    assert worst < tolerance


@pytest.mark.parametrize('pattern, expected', [
    [('ii', 'ii'), {(0, 0): {'n': 1, 'R': 1},
                    (0, 0, 0): {'n': 2, 'Q': 1, 'R': -2},
                    (0, 0, 0, 0): DISTINCT}],
    [('ij', 'ij'), {(0, 1): {'n': 1},
                    (0, 0, 1): {'Q': 1},
                    (0, 1, 0, 1): DISTINCT}],
    [('ii', 'jj'), {(0, 0, 1, 1): DISTINCT}],
    [('ij', 'ji'), {(0, 1): {'R': 1},
                    (0, 1, 0): {'n': 1, 'R': -1},
                    (1, 0, 1): {'n': 1, 'R': -1},
                    (0, 1, 1, 0): DISTINCT}],
    [('ij', 'kj'), {(0, 2, 1): {'Q': 1},
                    (0, 1, 2, 1): DISTINCT}],
])
def test_recovered_coefficients(pattern, expected):
    fit = fit_moment_coefficients(pattern)
    assert fit.rounded() == expected
    assert fit.residual < 1e-8
