"""Exhaustive-labeling oracle for the NNCT cell moments.

For a fixed configuration of at most a handful of points every assignment of
labels with the given class sizes is equally likely under random labelling, so
the exact first and second moments of the cell counts follow by enumeration.
The oracle checks cell_moments and recovers the covariance coefficients as
affine functions of (n, Q, R) by least squares.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .core import InputError, NumericalError, build_nn_graph
from .nnct import _label_prob, cell_moments

logger = logging.getLogger(__name__)

MAX_ORACLE_POINTS = 8
FEATURES = ('1', 'n', 'n2', 'Q', 'R')
FIT_TOL = 1e-8


def labelings(class_sizes):
    """Return every distinct label vector with the given class sizes.

    Parameters
    ----------
    class_sizes : sequence of int

    Returns
    -------
    numpy.ndarray : (m, n) int array, m the multinomial coefficient.
    """

    sizes = [int(s) for s in class_sizes]
    n = sum(sizes)
    if n > MAX_ORACLE_POINTS:
        raise InputError(f'Enumeration is limited to {MAX_ORACLE_POINTS} points. Got n={n}')

    rows = []

    def fill(labels, free, cls):
        if cls == len(sizes):
            rows.append(labels.copy())
            return
        for chosen in itertools.combinations(free, sizes[cls]):
            labels[list(chosen)] = cls
            rest = [p for p in free if p not in chosen]
            fill(labels, rest, cls + 1)

    fill(np.zeros(n, dtype=np.int64), list(range(n)), 0)
    return np.array(rows)


def enumerate_moments(nn_index, class_sizes):
    """Exact mean table and covariance of the cell vector over all labelings.

    Parameters
    ----------
    nn_index : array_like
        NN index of each point of a fixed configuration.
    class_sizes : sequence of int

    Returns
    -------
    expected : numpy.ndarray
        (q, q) mean of N.
    second : numpy.ndarray
        (q^2, q^2) matrix of E[N_ij N_kl].
    sigma : numpy.ndarray
        (q^2, q^2) covariance.
    """

    nn_index = np.asarray(nn_index)
    q = len(class_sizes)
    labels = labelings(class_sizes)
    if labels.shape[1] != nn_index.shape[0]:
        raise InputError(f'Class sizes sum to {labels.shape[1]} but the configuration has {nn_index.shape[0]} points')
    m = labels.shape[0]
    cells = labels * q + labels[:, nn_index] + (q * q) * np.arange(m)[:, None]
    counts = np.bincount(cells.reshape(-1), minlength=m * q * q).reshape(m, q * q).astype(float)
    mean = counts.mean(axis=0)
    second = counts.T @ counts / m
    return mean.reshape(q, q), second, second - np.outer(mean, mean)


def compare_with_closed_form(coords, class_sizes):
    """Return the largest absolute deviation of cell_moments from enumeration.

    Both the mean table and the covariance are compared.
    """

    g = build_nn_graph(coords)
    expected, _, sigma = enumerate_moments(g.nn_index, class_sizes)
    moments = cell_moments(class_sizes, g.n, g.Q, g.R)
    return max(np.abs(expected - moments.expected).max(), np.abs(sigma - moments.sigma).max())


def random_configurations(count, n_values=(4, 5, 6, 7, 8), seed=0):
    """Return count random point configurations cycling through n_values."""

    rng = np.random.default_rng(seed)
    return [rng.random((n_values[c % len(n_values)], 2)) for c in range(count)]


def class_splits(n, q):
    """All compositions of n into q positive class sizes."""

    for cuts in itertools.combinations(range(1, n), q - 1):
        bounds = (0,) + cuts + (n,)
        yield tuple(bounds[t + 1] - bounds[t] for t in range(q))


@dataclass
class MomentCoefficients:
    """Fitted second moment E[N_ij N_kl] = sum over bases of coef . features * p.

    Attributes
    ----------
    pattern : tuple of str
        Index pattern such as ('ii', 'jj').
    bases : list of tuple of int
        Label multisets of distinct points (length 2, 3 or 4) whose probability
        multiplies each coefficient.
    coefficients : numpy.ndarray
        (len(bases), len(FEATURES)) coefficients of (1, n, n^2, Q, R).
    residual : float
        Largest absolute error on held-out configurations.
    """

    pattern: tuple
    bases: list
    coefficients: np.ndarray
    residual: float

    def coefficient(self, size):
        """Return the coefficient rows of all bases with the given number of points."""

        return [c for b, c in zip(self.bases, self.coefficients) if len(b) == size]

    def rounded(self):
        """Coefficients rounded to integers as {basis: {feature: value}}."""

        return {b: {f: int(v) for f, v in zip(FEATURES, np.round(c)) if round(v) != 0}
                for b, c in zip(self.bases, self.coefficients)}


def _pattern_classes(pattern):
    letters = []
    for cell in pattern:
        if len(cell) != 2:
            raise InputError(f'Each cell of an index pattern has two letters. Got {pattern}')
        for letter in cell:
            if letter not in letters:
                letters.append(letter)
    classes = [letters.index(letter) for cell in pattern for letter in cell]
    # one filler class: with only the pattern's classes their sizes sum to n and
    # the label probabilities become linearly dependent
    return tuple(classes), len(letters) + 1


def _pattern_bases(i, j, k, l):
    """Label multisets of the configurations two (base, NN) pairs can form.

    Two pairs coincide or are reflexive (2 points), share exactly one point (3
    points) or are disjoint (4 points). A shared point forces equal labels.
    """

    bases = []
    if (i == k and j == l) or (i == l and j == k):
        bases.append((i, j))
    for shared, multiset in ((j == l, (i, k, j)), (j == k, (i, j, l)), (i == l, (k, i, j))):
        key = tuple(sorted(multiset))
        if shared and key not in [tuple(sorted(b)) for b in bases]:
            bases.append(multiset)
    bases.append((i, j, k, l))
    return bases


def _design_rows(configs, classes, q, bases):
    rows, targets = [], []
    i, j, k, l = classes
    for coords in configs:
        g = build_nn_graph(coords)
        n = g.n
        features = np.array([1.0, n, n * n, g.Q, g.R])
        for split in class_splits(n, q):
            sizes = np.array(split, dtype=float)
            probs = [float(_label_prob(sizes, n, *[np.array(c) for c in b])) for b in bases]
            rows.append(np.concatenate([p * features for p in probs]))
            _, second, _ = enumerate_moments(g.nn_index, split)
            targets.append(second[i * q + j, k * q + l])
    return np.array(rows), np.array(targets)


def fit_moment_coefficients(index_pattern, n_configs=24, n_held_out=6, seed=0):
    """Recover E[N_ij N_kl] as affine functions of (n, Q, R) by enumeration.

    Parameters
    ----------
    index_pattern : tuple of str
        Two cells with letters standing for classes, equal letters equal
        classes, e.g. ('ii', 'ii'), ('ij', 'ij'), ('ii', 'jj'), ('ij', 'ji').
    n_configs : int
        Number of random configurations (n from 4 to 8) in the fit.
    n_held_out : int
        Number of further configurations the fit must reproduce.
    seed : int

    Returns
    -------
    MomentCoefficients

    Raises
    ------
    NumericalError
        If the fit system is rank deficient or the held-out residual exceeds
        1e-8.

    Examples
    --------
    >>> fit = fit_moment_coefficients(('ii', 'ii'))
    >>> fit.rounded()[(0, 0)]
    {'n': 1, 'R': 1}
    """

    classes, q = _pattern_classes(index_pattern)
    bases = _pattern_bases(*classes)
    configs = random_configurations(n_configs + n_held_out, seed=seed)
    design, target = _design_rows(configs[:n_configs], classes, q, bases)
    unknowns = design.shape[1]
    rank = np.linalg.matrix_rank(design)
    if rank < unknowns:
        raise NumericalError(f'Coefficient fit for {index_pattern} is singular (rank {rank} < {unknowns}); '
                             f'add configurations')
    theta, *_ = np.linalg.lstsq(design, target, rcond=None)

    held_design, held_target = _design_rows(configs[n_configs:], classes, q, bases)
    residual = float(np.abs(held_design @ theta - held_target).max()) if len(held_target) else 0.0
    if residual > FIT_TOL:
        raise NumericalError(f'Coefficient fit for {index_pattern} misses held-out configurations by {residual:.3g}')
    logger.debug('Fitted %s with %d equations, held-out residual %.2e', index_pattern, len(target), residual)
    return MomentCoefficients(tuple(index_pattern), bases, theta.reshape(len(bases), len(FEATURES)), residual)
