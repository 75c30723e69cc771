"""Nearest neighbor contingency tables and the chi-square segregation tests.

The cell counts N_ij of an NNCT have moments under random labelling (RL) that
depend only on the class sizes and on the NN-graph scalars Q and R. From these
moments three families of quadratic-form tests are built:

* Dixon's overall test C on all q^2 cells, chi-square with q(q-1) df;
* the base-class-specific test C_B(i) on row i, chi-square with q-1 df;
* the NN-class-specific test C_NN(j) on column j, chi-square with q df.

Under CSR independence the same statistics are used conditionally on (Q, R).
"""

import logging
from dataclasses import dataclass, field
from typing import Optional
from warnings import warn

import numpy as np
from scipy import linalg, special

from .core import (DegenerateClassError, InputError, MarkedPointSet, NnGraph, build_nn_graph,
                   NumericalError, NumericalWarning)
from .utils import get_configs

logger = logging.getLogger(__name__)

KINDS = ('overall', 'base', 'nn')


class Nnct:
    """q x q nearest neighbor contingency table.

    Rows are base classes, columns NN classes. Row sums are the fixed class
    sizes n_i, column sums C_j are random.

    Attributes
    ----------
    counts : numpy.ndarray
        (q, q) cell counts N_ij. Integer for observed tables; float tables are
        accepted for hypothetical inputs.
    class_names : list of str
    """

    def __init__(self, counts, class_names=None):
        counts = np.asarray(counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] < 2:
            raise InputError(f'NNCT counts must be a q x q matrix with q >= 2. Got shape {counts.shape}')
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise InputError('NNCT counts must be finite and non-negative')
        if np.all(counts == np.round(counts)):
            counts = np.round(counts).astype(np.int64)
        else:
            counts = counts.astype(float)
        self.counts = counts
        q = counts.shape[0]
        if class_names is None:
            class_names = [str(i) for i in range(q)]
        elif len(class_names) != q:
            raise InputError(f'{len(class_names)} class names given for a {q} x {q} NNCT')
        self.class_names = [str(c) for c in class_names]

    def __str__(self):
        return f'Nnct(q={self.q}, n={self.total}, rows={self.row_sums.tolist()})'

    def __eq__(self, other):
        if type(self) is type(other):
            return np.array_equal(self.counts, other.counts) and self.class_names == other.class_names
        else:
            return False

    @property
    def q(self):
        return self.counts.shape[0]

    @property
    def row_sums(self):
        return self.counts.sum(axis=1)

    @property
    def col_sums(self):
        return self.counts.sum(axis=0)

    @property
    def total(self):
        return self.counts.sum()

    def vector(self):
        """Return the cell counts concatenated row-wise as a float vector."""

        return self.counts.reshape(-1).astype(float)

    def row_percentages(self):
        """Percentages of each row (NN classes of each base class)."""

        rows = self.row_sums.astype(float)
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.where(rows[:, None] > 0, 100.0 * self.counts / rows[:, None], 0.0)

    def col_percentages(self):
        """Percentages of each column (base classes of each NN class)."""

        cols = self.col_sums.astype(float)
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.where(cols[None, :] > 0, 100.0 * self.counts / cols[None, :], 0.0)


def build_nnct(pts, g, class_names=None):
    """Count (base class, NN class) pairs.

    Parameters
    ----------
    pts : MarkedPointSet
    g : NnGraph
        Graph built from the locations of pts.

    Returns
    -------
    Nnct
    """

    if not isinstance(pts, MarkedPointSet):
        raise InputError(f'build_nnct expected a MarkedPointSet. Got {type(pts)}')
    if not isinstance(g, NnGraph) or g.n != pts.n:
        raise InputError(f'NN graph of size {getattr(g, "n", None)} does not match point set of size {pts.n}')
    counts = nnct_counts(pts.labels, g.nn_index, pts.q)
    return Nnct(counts, class_names=pts.class_names if class_names is None else class_names)


def nnct_counts(labels, nn_index, q):
    """Return the (q, q) count matrix for labels and NN indices."""

    labels = np.asarray(labels)
    return np.bincount(labels * q + labels[nn_index], minlength=q * q).reshape(q, q)


def expected_counts(class_sizes, n=None):
    """Expected cell counts under RL.

    E[N_ii] = n_i(n_i - 1)/(n - 1) and E[N_ij] = n_i n_j/(n - 1) for i != j.

    Parameters
    ----------
    class_sizes : sequence of int
    n : int
        Total size; defaults to sum(class_sizes).

    Returns
    -------
    numpy.ndarray : (q, q) matrix whose row i sums to n_i.
    """

    sizes = np.asarray(class_sizes, dtype=float)
    if n is None:
        n = sizes.sum()
    if n != sizes.sum():
        raise InputError(f'n={n} does not equal the sum of class sizes {sizes.sum():g}')
    if n < 2:
        raise InputError(f'Expected counts need n >= 2. Got n={n}')
    expected = np.outer(sizes, sizes)
    expected[np.diag_indices_from(expected)] -= sizes
    return expected / (n - 1)


def _label_prob(sizes, n, *classes):
    """Probability that distinct points receive the given labels under RL.

    Each argument of classes is an int array (broadcast together); the result is
    the product of falling class counts over the falling factorial of n, and 0
    when more distinct points are requested than exist.
    """

    m = len(classes)
    if m > n:
        return np.zeros(np.broadcast(*classes).shape)
    prob = np.ones(np.broadcast(*classes).shape)
    for t, c in enumerate(classes):
        factor = sizes[c] - sum((c == classes[s]).astype(float) for s in range(t))
        prob = prob * np.clip(factor, 0.0, None) / (n - t)
    return prob


@dataclass(frozen=True)
class MomentModel:
    """First and second moments of the NNCT cells under RL given (Q, R).

    Attributes
    ----------
    expected : numpy.ndarray
        (q, q) matrix of E[N_ij].
    sigma : numpy.ndarray
        (q^2, q^2) covariance of the row-major cell vector.
    class_sizes : numpy.ndarray
    n, Q, R : int
    """

    expected: np.ndarray
    sigma: np.ndarray
    class_sizes: np.ndarray
    n: int
    Q: int
    R: int
    rank: int = field(default=0, compare=False)

    @property
    def q(self):
        return self.expected.shape[0]

    def cov(self, i, j, k, l):
        """Return Cov[N_ij, N_kl]."""

        q = self.q
        return float(self.sigma[i * q + j, k * q + l])

    def row_block(self, i):
        """Return (E[N_i], Sigma_i) for row i."""

        q = self.q
        idx = slice(i * q, (i + 1) * q)
        return self.expected[i], self.sigma[idx, idx]

    def col_block(self, j):
        """Return (E[C_j], Sigma_j) for column j."""

        q = self.q
        idx = np.arange(q) * q + j
        return self.expected[:, j], self.sigma[np.ix_(idx, idx)]


def second_moments(class_sizes, n, Q, R):
    """Return the (q^2, q^2) matrix E[N_ij N_kl] under RL given (Q, R).

    Ordered pairs of base points (p, p') fall into six disjoint configurations,
    each with a fixed number of distinct points carrying the labels:

    ============================  ==============  =========================
    configuration                 number of pairs labels of distinct points
    ============================  ==============  =========================
    p = p'                        n               (i, j), needs i=k, j=l
    reflexive, p' = nn(p),        R               (i, j), needs i=l, j=k
    p = nn(p')
    shared NN, nn(p) = nn(p')     Q               (i, k, j), needs j=l
    p' = nn(p), not reflexive     n - R           (i, j, l), needs j=k
    p = nn(p'), not reflexive     n - R           (k, i, j), needs i=l
    four distinct points          n^2-3n-Q+R      (i, j, k, l)
    ============================  ==============  =========================
    """

    sizes = np.asarray(class_sizes, dtype=float)
    q = sizes.shape[0]
    cells = np.arange(q * q)
    i, j = (cells // q)[:, None], (cells % q)[:, None]
    k, l = (cells // q)[None, :], (cells % q)[None, :]
    prob = lambda *c: _label_prob(sizes, n, *c)
    distinct = n * n - 3 * n - Q + R
    return (n * ((i == k) & (j == l)) * prob(i, j)
            + R * ((i == l) & (j == k)) * prob(i, j)
            + Q * (j == l) * prob(i, k, j)
            + (n - R) * (j == k) * prob(i, j, l)
            + (n - R) * (i == l) * prob(k, i, j)
            + distinct * prob(i, j, k, l))


def cell_moments(class_sizes, n=None, Q=0, R=0, rel_tol=None):
    """Build the MomentModel for class sizes and NN-graph scalars Q, R.

    Var[N_ii] reduces to (n+R)p_ii + (2n-2R+Q)p_iii + (n^2-3n-Q+R)p_iiii - E[N_ii]^2
    and Var[N_ij] to n p_ij + Q p_iij + (n^2-3n-Q+R)p_iijj - E[N_ij]^2.

    Parameters
    ----------
    class_sizes : sequence of int
    n : int
        Defaults to sum(class_sizes).
    Q, R : int
        From an NnGraph, or supplied directly (e.g. from a published table).
    rel_tol : float
        Relative eigenvalue tolerance of the rank check. Defaults to the
        configured pinv_rel_tol.

    Returns
    -------
    MomentModel
    """

    sizes = np.asarray(class_sizes, dtype=np.int64)
    if sizes.ndim != 1 or sizes.shape[0] < 2:
        raise InputError(f'At least 2 classes are needed. Got class sizes {sizes.tolist()}')
    if np.any(sizes < 0):
        raise InputError(f'Class sizes must be non-negative. Got {sizes.tolist()}')
    if n is None:
        n = int(sizes.sum())
    expected = expected_counts(sizes, n)
    if Q < 0 or R < 0 or R % 2 or R > n:
        raise InputError(f'Q must be >= 0 and R even in [0, n]. Got Q={Q}, R={R}, n={n}')

    e = expected.reshape(-1)
    sigma = second_moments(sizes, n, Q, R) - np.outer(e, e)
    sigma = (sigma + sigma.T) / 2

    if rel_tol is None:
        rel_tol = get_configs()['pinv_rel_tol']
    eigs = np.linalg.eigvalsh(sigma)
    rank = int(np.count_nonzero(eigs > rel_tol * max(np.abs(eigs).max(), 1.0)))
    q = sizes.shape[0]
    if rank < q * (q - 1):
        warn(f'Covariance of the NNCT has rank {rank} < q(q-1)={q * (q - 1)} '
             f'for class sizes {sizes.tolist()}', category=NumericalWarning)

    return MomentModel(expected=expected, sigma=sigma, class_sizes=sizes, n=int(n), Q=int(Q), R=int(R), rank=rank)


def moments_from_graph(pts, g):
    """Return the MomentModel of a labelled point set and its NN graph."""

    return cell_moments(pts.class_sizes, pts.n, g.Q, g.R)


def pseudo_inverse(sym_matrix, rel_tol=None):
    """Moore-Penrose inverse of a symmetric matrix via its eigendecomposition.

    Eigenvalues whose magnitude is below rel_tol times the largest magnitude are
    treated as zero.

    Parameters
    ----------
    sym_matrix : array_like
        Square symmetric matrix.
    rel_tol : float
        Defaults to the configured pinv_rel_tol (1e-8).

    Returns
    -------
    numpy.ndarray
    """

    a = np.asarray(sym_matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f'pseudo_inverse expected a square matrix. Got shape {a.shape}')
    scale = max(np.abs(a).max(), 1.0)
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * scale):
        raise InputError('pseudo_inverse expected a symmetric matrix')
    if rel_tol is None:
        rel_tol = get_configs()['pinv_rel_tol']
    return linalg.pinvh((a + a.T) / 2, atol=0.0, rtol=rel_tol)


def chisq_sf(x, df):
    """Upper tail probability of the chi-square distribution.

    Computed as the regularized upper incomplete gamma function Q(df/2, x/2).

    Examples
    --------
    >>> round(chisq_sf(3.841459, 1), 4)
    0.05
    """

    if df < 1:
        raise InputError(f'chisq_sf needs df >= 1. Got {df}')
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise InputError('chisq_sf needs x >= 0')
    p = special.gammaincc(df / 2.0, x / 2.0)
    return float(p) if p.ndim == 0 else p


@dataclass
class TestReport:
    """Result of one segregation test.

    Attributes
    ----------
    kind : str
        'overall', 'base' or 'nn'.
    index : int or None
        Class of a base- or NN-class-specific test.
    statistic : float
    df : int
    p_asy : float
        Asymptotic chi-square p-value.
    p_mc : float or None
        Monte Carlo p-value under CSR independence in the same window.
    p_rand : float or None
        Randomization p-value over relabelings of the observed locations.
    class_name : str or None
    """

    __test__ = False  # not a pytest class

    kind: str
    index: Optional[int]
    statistic: float
    df: int
    p_asy: float = field(init=False)
    p_mc: Optional[float] = None
    p_rand: Optional[float] = None
    class_name: Optional[str] = None

    def __post_init__(self):
        self.statistic = max(float(self.statistic), 0.0)
        self.p_asy = chisq_sf(self.statistic, self.df)

    @property
    def name(self):
        if self.kind == 'overall':
            return 'overall'
        return f'{self.kind}({self.index})'

    @property
    def selector(self):
        if self.kind == 'overall':
            return 'overall'
        return f'{self.kind}:{self.index}'

    def to_dict(self):
        return {
            'test': self.selector,
            'class': self.class_name,
            'statistic': self.statistic,
            'df': self.df,
            'p_asy': self.p_asy,
            'p_mc': self.p_mc,
            'p_rand': self.p_rand,
        }


def _check_pair(nnct, moments):
    if nnct.q != moments.q:
        raise InputError(f'NNCT has q={nnct.q} but moments were built for q={moments.q}')
    if not np.allclose(nnct.row_sums, moments.class_sizes):
        raise InputError(f'NNCT row sums {nnct.row_sums.tolist()} do not match moment class sizes '
                         f'{moments.class_sizes.tolist()}')


def _check_psd(sigma, psd_tol=None):
    if psd_tol is None:
        psd_tol = get_configs()['psd_tol']
    eigs = np.linalg.eigvalsh(sigma)
    # counts are integers, so a unit floor keeps all-zero covariances PSD
    top = max(np.abs(eigs).max(), 1.0)
    if eigs.min() < -psd_tol * top:
        raise NumericalError(f'Covariance matrix is not positive semidefinite '
                             f'(smallest eigenvalue {eigs.min():.3g}, largest {eigs.max():.3g})')


def _quadratic_form(diff, inverse):
    return float(diff @ inverse @ diff)


def dixon_overall(nnct, moments):
    """Dixon's overall test C = (N - E)' Sigma^- (N - E) with q(q-1) df."""

    _check_pair(nnct, moments)
    _check_psd(moments.sigma)
    diff = nnct.vector() - moments.expected.reshape(-1)
    q = nnct.q
    return TestReport('overall', None, _quadratic_form(diff, pseudo_inverse(moments.sigma)), q * (q - 1))


def base_class_specific(nnct, moments, i):
    """Base-class-specific test C_B(i) on row i with q-1 df."""

    _check_pair(nnct, moments)
    q = nnct.q
    if not (0 <= i < q):
        raise InputError(f'Base class {i} out of range for q={q}')
    if moments.class_sizes[i] <= 1:
        raise DegenerateClassError(f'Base-class-specific test undefined for class {nnct.class_names[i]} '
                                   f'with {moments.class_sizes[i]} point(s)')
    expected, sigma = moments.row_block(i)
    diff = nnct.counts[i].astype(float) - expected
    return TestReport('base', i, _quadratic_form(diff, pseudo_inverse(sigma)), q - 1,
                      class_name=nnct.class_names[i])


def _column_inverse(sigma, rel_tol=None):
    if rel_tol is None:
        rel_tol = get_configs()['pinv_rel_tol']
    eigs = np.linalg.eigvalsh(sigma)
    if eigs.max() > 0 and eigs.min() > rel_tol * eigs.max():
        return np.linalg.inv(sigma)
    warn('Column covariance is singular; using the pseudo-inverse', category=NumericalWarning)
    return pseudo_inverse(sigma, rel_tol)


def nn_class_specific(nnct, moments, j):
    """NN-class-specific test C_NN(j) on column j with q df."""

    _check_pair(nnct, moments)
    q = nnct.q
    if not (0 <= j < q):
        raise InputError(f'NN class {j} out of range for q={q}')
    expected, sigma = moments.col_block(j)
    diff = nnct.counts[:, j].astype(float) - expected
    return TestReport('nn', j, _quadratic_form(diff, _column_inverse(sigma)), q,
                      class_name=nnct.class_names[j])


def two_class_overall_closed_form(nnct, moments):
    """Dixon's two-class statistic from the diagonal z-scores.

    C = (Z_AA^2 + Z_BB^2 - 2 r Z_AA Z_BB)/(1 - r^2) with r the correlation of
    N_11 and N_22.
    """

    _check_pair(nnct, moments)
    if nnct.q != 2:
        raise InputError(f'The closed form needs q=2. Got q={nnct.q}')
    var_aa = moments.cov(0, 0, 0, 0)
    var_bb = moments.cov(1, 1, 1, 1)
    if var_aa <= 0 or var_bb <= 0:
        raise NumericalError('Diagonal cell variances must be positive')
    r = moments.cov(0, 0, 1, 1) / np.sqrt(var_aa * var_bb)
    if abs(abs(r) - 1.0) < 1e-12:
        raise NumericalError(f'Diagonal cells are perfectly correlated (r={r:.6f})')
    z_aa = (nnct.counts[0, 0] - moments.expected[0, 0]) / np.sqrt(var_aa)
    z_bb = (nnct.counts[1, 1] - moments.expected[1, 1]) / np.sqrt(var_bb)
    return float((z_aa ** 2 + z_bb ** 2 - 2 * r * z_aa * z_bb) / (1 - r ** 2))


def segregation_tests(nnct, moments):
    """Return the overall, every base- and every NN-class-specific TestReport.

    Base tests for classes with fewer than 2 points are omitted.
    """

    reports = [dixon_overall(nnct, moments)]
    for i in range(nnct.q):
        if moments.class_sizes[i] > 1:
            reports.append(base_class_specific(nnct, moments, i))
    for j in range(nnct.q):
        reports.append(nn_class_specific(nnct, moments, j))
    return reports


def selector_names(q):
    """Return the names of the statistics vector: overall, base:0.., nn:0.."""

    return ['overall'] + [f'base:{i}' for i in range(q)] + [f'nn:{j}' for j in range(q)]


def selector_dfs(q):
    return np.array([q * (q - 1)] + [q - 1] * q + [q] * q)


def parse_selector(text, q, class_names=None):
    """Return the position of a statistic named 'overall', 'base:i' or 'nn:j'.

    The class may be given by index or by class name.
    """

    text = text.strip()
    if text == 'overall':
        return 0
    kind, sep, cls = text.partition(':')
    if not sep or kind not in ('base', 'nn'):
        raise InputError(f'Unknown test "{text}". Use overall, base:<class> or nn:<class>')
    if class_names is not None and cls in class_names:
        index = class_names.index(cls)
    else:
        try:
            index = int(cls)
        except ValueError:
            raise InputError(f'Unknown class "{cls}" in test "{text}"')
    if not (0 <= index < q):
        raise InputError(f'Class {index} out of range for q={q} in test "{text}"')
    return 1 + index if kind == 'base' else 1 + q + index


def expand_selectors(texts, q, class_names=None):
    """Expand selector strings, with 'base:*' and 'nn:*' meaning every class."""

    positions = []
    for text in texts:
        if text in ('base:*', 'nn:*'):
            offset = 1 if text.startswith('base') else 1 + q
            positions.extend(offset + c for c in range(q))
        elif text in ('all', '*'):
            positions.extend(range(1 + 2 * q))
        else:
            positions.append(parse_selector(text, q, class_names))
    if not positions:
        raise InputError('At least one test must be selected')
    return sorted(set(positions))


class TestBattery:
    """All segregation statistics for one MomentModel, vectorized over tables.

    The generalized inverses are computed once, so evaluating many relabelings
    of the same locations (fixed Q, R and class sizes) costs one batch of
    quadratic forms. Statistics of base tests on classes with fewer than 2 points
    are NaN.
    """

    __test__ = False  # not a pytest class

    def __init__(self, moments):
        self.moments = moments
        q = moments.q
        self.q = q
        self.dfs = selector_dfs(q)
        _check_psd(moments.sigma)
        self._overall = pseudo_inverse(moments.sigma)
        self._rows = [pseudo_inverse(moments.row_block(i)[1]) for i in range(q)]
        self._cols = [_column_inverse(moments.col_block(j)[1]) for j in range(q)]

    def statistics(self, counts):
        """Return statistics in selector order for counts of shape (..., q, q)."""

        counts = np.asarray(counts, dtype=float)
        q = self.q
        diff = counts - self.moments.expected
        flat = diff.reshape(diff.shape[:-2] + (q * q,))
        out = np.empty(diff.shape[:-2] + (1 + 2 * q,))
        out[..., 0] = np.einsum('...a,ab,...b->...', flat, self._overall, flat)
        for i in range(q):
            if self.moments.class_sizes[i] > 1:
                row = diff[..., i, :]
                out[..., 1 + i] = np.einsum('...a,ab,...b->...', row, self._rows[i], row)
            else:
                out[..., 1 + i] = np.nan
        for j in range(q):
            col = diff[..., :, j]
            out[..., 1 + q + j] = np.einsum('...a,ab,...b->...', col, self._cols[j], col)
        return np.clip(out, 0.0, None)


def statistics_from_points(pts, g=None):
    """Return the statistics vector (selector order) of a labelled point set."""

    if g is None:
        g = build_nn_graph(pts)
    moments = moments_from_graph(pts, g)
    counts = nnct_counts(pts.labels, g.nn_index, pts.q)
    return TestBattery(moments).statistics(counts)
