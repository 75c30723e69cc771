"""Module for marked planar point sets and their nearest neighbor structure.

Use RectWindow for the study region, MarkedPointSet for labelled locations and
build_nn_graph for the NN graph together with the scalars Q and R that the
segregation tests condition on.
"""

import logging
from warnings import warn

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

# Candidates requested from the k-d tree per point. Rows whose candidates are all
# tied with the nearest distance are re-searched exhaustively.
KD_CANDIDATES = 8
TIE_RTOL = 1e-9


class SegpointError(Exception):
    """Root of all errors raised by segpoint."""


class InputError(SegpointError, ValueError):
    """Invalid user input: bad coordinates, labels, indices, windows or parameters."""


class ConfigError(InputError):
    """Invalid experiment or YAML configuration. The message names the field path."""


class DegenerateClassError(InputError):
    """A test or estimator was requested for a class that is empty or too small."""


class NumericalError(SegpointError, ArithmeticError):
    """A covariance matrix or fitting system is numerically unusable."""


class NumericalWarning(UserWarning):
    """A numerical fallback was used, e.g. a pseudo-inverse in place of an inverse."""


class RectWindow:
    """Rectangular observation window.

    Attributes
    ----------
    xmin, xmax, ymin, ymax : float
        Bounds of the window in data units.
    """

    def __init__(self, xmin=0.0, xmax=1.0, ymin=0.0, ymax=1.0):
        bounds = np.array([xmin, xmax, ymin, ymax], dtype=float)
        if not np.all(np.isfinite(bounds)):
            raise InputError(f'RectWindow bounds must be finite. Got {bounds.tolist()}')
        if not (xmax > xmin and ymax > ymin):
            raise InputError(f'RectWindow needs xmax > xmin and ymax > ymin. Got {bounds.tolist()}')
        self.xmin, self.xmax, self.ymin, self.ymax = (float(b) for b in bounds)

    def __str__(self):
        return f'[{self.xmin:g},{self.xmax:g}]x[{self.ymin:g},{self.ymax:g}]'

    def __repr__(self):
        return f'RectWindow({self.xmin!r}, {self.xmax!r}, {self.ymin!r}, {self.ymax!r})'

    def __eq__(self, other):
        if type(self) is type(other):
            return self.to_list() == other.to_list()
        else:
            return False

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin

    @property
    def area(self):
        return self.width * self.height

    @property
    def shorter_side(self):
        return min(self.width, self.height)

    def to_list(self):
        return [self.xmin, self.xmax, self.ymin, self.ymax]

    def contains(self, coords):
        """Return a boolean mask of the rows of coords lying in the closed window."""

        coords = np.atleast_2d(coords)
        return ((coords[:, 0] >= self.xmin) & (coords[:, 0] <= self.xmax)
                & (coords[:, 1] >= self.ymin) & (coords[:, 1] <= self.ymax))

    @classmethod
    def bounding_box(cls, coords):
        """Return the smallest window containing coords."""

        coords = np.asarray(coords, dtype=float)
        xmin, ymin = coords.min(axis=0)
        xmax, ymax = coords.max(axis=0)
        return cls(xmin, xmax, ymin, ymax)

    @classmethod
    def parse(cls, text):
        """Build a window from 'xmin,xmax,ymin,ymax'."""

        try:
            values = [float(v) for v in text.split(',')]
        except ValueError:
            raise InputError(f'Window must be "xmin,xmax,ymin,ymax". Got "{text}"')
        if len(values) != 4:
            raise InputError(f'Window must have 4 comma separated values. Got "{text}"')
        return cls(*values)


class MarkedPointSet:
    """Planar locations with class labels in 0..q-1 and an observation window.

    Attributes
    ----------
    coords : numpy.ndarray
        (n, 2) float array of locations.
    labels : numpy.ndarray
        (n,) int array of class ids.
    window : RectWindow
        Study region.
    q : int
        Number of classes (some may be empty).
    class_names : list of str
        Display names of the classes.
    """

    def __init__(self, coords, labels, window=None, q=None, class_names=None):
        coords = np.asarray(coords, dtype=float)
        labels = np.asarray(labels)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise InputError(f'coords must have shape (n, 2). Got {coords.shape}')
        n = coords.shape[0]
        if n < 2:
            raise InputError(f'At least 2 points are needed. Got {n}')
        if labels.shape != (n,):
            raise InputError(f'labels must have shape ({n},). Got {labels.shape}')
        if not np.all(np.isfinite(coords)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(coords), axis=1))[0])
            raise InputError(f'Coordinates must be finite. Point {bad} is {coords[bad].tolist()}')
        if not np.issubdtype(labels.dtype, np.integer):
            raise InputError(f'labels must be integer class ids. Got dtype {labels.dtype}')
        if labels.min() < 0:
            raise InputError('labels must be non-negative class ids')

        if q is None:
            q = len(class_names) if class_names is not None else int(labels.max()) + 1
        q = max(int(q), 2)
        if labels.max() >= q:
            raise InputError(f'Label {int(labels.max())} out of range for q={q} classes')
        if class_names is None:
            class_names = [str(i) for i in range(q)]
        elif len(class_names) != q:
            raise InputError(f'{len(class_names)} class names given for q={q} classes')

        self.coords = coords
        self.labels = labels.astype(np.int64)
        self.window = window if window is not None else RectWindow.bounding_box(coords)
        self.q = q
        self.class_names = [str(c) for c in class_names]

    def __len__(self):
        return self.coords.shape[0]

    def __str__(self):
        sizes = ', '.join(f'{name}={size}' for name, size in zip(self.class_names, self.class_sizes))
        return f'MarkedPointSet(n={self.n}, {sizes}, window={self.window})'

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def class_sizes(self):
        return np.bincount(self.labels, minlength=self.q)

    def relabeled(self, labels):
        """Return a new set on the same locations with different labels."""

        return MarkedPointSet(self.coords, labels, window=self.window, q=self.q,
                              class_names=self.class_names)

    def class_coords(self, i):
        """Return the (n_i, 2) locations of class i."""

        return self.coords[self.labels == i]


class NnGraph:
    """Nearest neighbor graph of a point set.

    Attributes
    ----------
    nn_index : numpy.ndarray
        For each point, the index of its nearest neighbor.
    nn_dist : numpy.ndarray
        For each point, the distance to its nearest neighbor.
    indeg : numpy.ndarray
        For each point, how many points have it as their NN.
    Q_k : numpy.ndarray
        Histogram of indeg: Q_k[k] points serve as NN exactly k times.
    Q : int
        Sum over points of indeg*(indeg-1); number of ordered pairs sharing a NN.
    R : int
        Twice the number of reflexive (mutual NN) pairs.
    """

    def __init__(self, nn_index, nn_dist):
        self.nn_index = np.asarray(nn_index, dtype=np.int64)
        self.nn_dist = np.asarray(nn_dist, dtype=float)
        n = self.nn_index.shape[0]
        self.indeg = np.bincount(self.nn_index, minlength=n)
        self.Q_k = np.bincount(self.indeg)
        self.Q = int(np.sum(self.indeg * (self.indeg - 1)))
        self.R = int(np.count_nonzero(self.nn_index[self.nn_index] == np.arange(n)))

    def __str__(self):
        return f'NnGraph(n={self.n}, Q={self.Q}, R={self.R})'

    @property
    def n(self):
        return self.nn_index.shape[0]

    def q_from_histogram(self):
        """Return Q as sum_k k(k-1) Q_k over the open-ended in-degree histogram."""

        k = np.arange(self.Q_k.shape[0])
        return int(np.sum(k * (k - 1) * self.Q_k))

    def q_truncated(self):
        """Return Q as 2(Q_2 + 3Q_3 + 6Q_4 + 10Q_5 + 15Q_6).

        Only equal to Q when no point has in-degree above 6, which holds for
        tie-free planar data.
        """

        padded = np.zeros(7, dtype=np.int64)
        upto = min(7, self.Q_k.shape[0])
        padded[:upto] = self.Q_k[:upto]
        return int(2 * (padded[2] + 3 * padded[3] + 6 * padded[4] + 10 * padded[5] + 15 * padded[6]))

    def mean_nn_distance(self):
        """Return (mean, standard deviation) of the NN distances."""

        return float(np.mean(self.nn_dist)), float(np.std(self.nn_dist, ddof=1))


def _as_coords(pts):
    if isinstance(pts, MarkedPointSet):
        return pts.coords
    coords = np.asarray(pts, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise InputError(f'coords must have shape (n, 2). Got {coords.shape}')
    if coords.shape[0] < 2:
        raise InputError(f'At least 2 points are needed. Got {coords.shape[0]}')
    if not np.all(np.isfinite(coords)):
        raise InputError('Coordinates must be finite')
    return coords


def _row_nn(coords, i):
    """Exhaustive NN of point i: (index, distance), lowest index on ties."""

    d = np.hypot(coords[:, 0] - coords[i, 0], coords[:, 1] - coords[i, 1])
    d[i] = np.inf
    j = int(np.argmin(d))
    return j, float(d[j])


def brute_force_nn(pts):
    """Reference O(n^2) NN search with the lowest-index tie-break.

    Returns
    -------
    (numpy.ndarray, numpy.ndarray) : NN indices and NN distances.
    """

    coords = _as_coords(pts)
    d = np.hypot(coords[:, None, 0] - coords[None, :, 0], coords[:, None, 1] - coords[None, :, 1])
    np.fill_diagonal(d, np.inf)
    nn = np.argmin(d, axis=1)
    return nn, d[np.arange(coords.shape[0]), nn]


def nn_search(pts):
    """k-d tree NN search giving the same answer as brute_force_nn.

    The tree proposes KD_CANDIDATES neighbors per point. Distances are recomputed
    with the same arithmetic as the exhaustive search, and the lowest index among
    the exact minima wins. Rows where every proposed candidate ties with the
    minimum may have further ties outside the candidate set and are searched
    exhaustively.
    """

    coords = _as_coords(pts)
    n = coords.shape[0]
    k = min(n, KD_CANDIDATES)
    tree = cKDTree(coords)
    _, cand = tree.query(coords, k=k)
    cand = cand.reshape(n, k)

    rows = np.arange(n)
    d = np.hypot(coords[cand, 0] - coords[:, None, 0], coords[cand, 1] - coords[:, None, 1])
    d[cand == rows[:, None]] = np.inf
    dmin = d.min(axis=1)
    nn = np.where(d == dmin[:, None], cand, n).min(axis=1)

    if k < n:
        farthest = np.where(np.isinf(d), -np.inf, d).max(axis=1)
        suspect = np.flatnonzero(farthest <= dmin * (1 + TIE_RTOL))
        for i in suspect:
            nn[i], dmin[i] = _row_nn(coords, i)
        if suspect.size:
            logger.debug('Exhaustive NN search for %d tied rows', suspect.size)

    return nn.astype(np.int64), dmin


def build_nn_graph(pts):
    """Build the NN graph of a point set.

    Parameters
    ----------
    pts : MarkedPointSet or array_like
        The points, or an (n, 2) array of locations. Labels are not used.

    Returns
    -------
    NnGraph

    Examples
    --------
    >>> g = build_nn_graph(np.array([[0, 0], [1, 0], [3, 0]]))
    >>> g.nn_index.tolist(), g.Q, g.R
    ([1, 0, 1], 2, 2)
    """

    nn, dist = nn_search(pts)
    graph = NnGraph(nn, dist)
    if graph.Q_k.shape[0] <= 7:
        assert graph.q_truncated() == graph.Q, 'Q paths disagree'
    else:
        warn(f'A point serves as NN {graph.Q_k.shape[0] - 1} times (ties); '
             'Q uses the open-ended in-degree histogram', category=UserWarning)
    return graph


def pairwise_nn_query(pts, i):
    """Return (index, distance) of the NN of point i, lowest index on ties."""

    coords = _as_coords(pts)
    n = coords.shape[0]
    if not (0 <= int(i) < n) or int(i) != i:
        raise InputError(f'Point index {i} out of range for n={n}')
    return _row_nn(coords, int(i))
