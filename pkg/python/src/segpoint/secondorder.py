"""Second-order summaries of marked point patterns on rectangular windows.

Ripley's K with isotropic edge correction, its L transform, the bivariate
(cross) K, Diggle's D = K_cases - K_controls, the pair correlation function
obtained by differentiating K, and pointwise Monte Carlo envelopes.

Pairs are weighted by 1/w, w being the fraction of the circle through the other
point, centred at the base point, that lies inside the window.
"""

import logging
from dataclasses import dataclass
from functools import partial
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import DegenerateClassError, InputError, RectWindow, build_nn_graph
from .montecarlo import _run_chunks
from .patterns import STREAM_ENVELOPE, STREAM_RELABEL, PatternSpec, generate
from .utils import get_configs, substream_rng

logger = logging.getLogger(__name__)

ENVELOPE_QUANTILES = (0.025, 0.975)


class DistanceGrid:
    """Strictly increasing, non-negative distances t at which curves are evaluated."""

    def __init__(self, t_values):
        t_values = np.asarray(t_values, dtype=float)
        if t_values.ndim != 1 or t_values.size == 0:
            raise InputError('A distance grid needs at least one value')
        if np.any(t_values < 0) or np.any(np.diff(t_values) <= 0):
            raise InputError('Distance grid values must be non-negative and strictly increasing')
        self.t_values = t_values

    def __len__(self):
        return self.t_values.size

    def __str__(self):
        return f'DistanceGrid({self.t_values.size} values in [{self.t_values[0]:g}, {self.t_values[-1]:g}])'

    @property
    def max_t(self):
        return float(self.t_values[-1])

    @classmethod
    def default(cls, window, points=None, fraction=0.25):
        """Equally spaced values in (0, fraction * shorter side]."""

        if points is None:
            points = get_configs()['grid_points']
        max_t = fraction * window.shorter_side
        return cls(np.linspace(max_t / points, max_t, points))


@dataclass
class Curve:
    """A summary function on a distance grid.

    Attributes
    ----------
    t_values : numpy.ndarray
    estimate : numpy.ndarray
    label : str
    reliable : numpy.ndarray or None
        Mask of grid values where the estimate is trustworthy.
    """

    t_values: np.ndarray
    estimate: np.ndarray
    label: str = ''
    reliable: Optional[np.ndarray] = None

    def to_dict(self):
        return {'t': self.t_values, 'estimate': self.estimate}


@dataclass
class CurveWithEnvelope(Curve):
    """Curve with pointwise lower and upper simulation bounds."""

    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    n_sim: int = 0

    def to_dict(self):
        d = super().to_dict()
        d.update({'lower': self.lower, 'upper': self.upper})
        return d

    def outside(self):
        """Mask of grid values where the estimate leaves the envelope."""

        return (self.estimate < self.lower) | (self.estimate > self.upper)


def _side_distances(coords, window):
    return np.stack([coords[:, 0] - window.xmin, window.xmax - coords[:, 0],
                     coords[:, 1] - window.ymin, window.ymax - coords[:, 1]], axis=-1)


def _edge_weights(coords, radius, window):
    """Vectorized edge_weight for rows of coords and radii (0 radius gives 1)."""

    coords = np.atleast_2d(coords)
    radius = np.broadcast_to(np.asarray(radius, dtype=float), coords.shape[:1])
    sides = _side_distances(coords, window)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(radius[:, None] > 0, sides / radius[:, None], np.inf)
    # half-angle of the arc beyond each side (left, right, bottom, top)
    half = np.arccos(np.clip(ratio, -1.0, 1.0))
    outside = 2 * half.sum(axis=1)
    # arcs beyond adjacent sides overlap when the corner lies inside the circle
    for a, b in ((0, 2), (0, 3), (1, 2), (1, 3)):
        outside -= np.clip(half[:, a] + half[:, b] - np.pi / 2, 0.0, None)
    return np.clip(1.0 - outside / (2 * np.pi), 0.0, 1.0)


def edge_weight(center, radius, window):
    """Fraction of the circle of `radius` around `center` inside the window.

    Parameters
    ----------
    center : sequence of float
        (x, y) inside the window.
    radius : float
        Positive radius.
    window : RectWindow

    Returns
    -------
    float in (0, 1]

    Examples
    --------
    >>> round(edge_weight((0.0, 0.0), 0.1, RectWindow(0, 1, 0, 1)), 6)
    0.25
    """

    center = np.asarray(center, dtype=float).reshape(1, 2)
    if not window.contains(center)[0]:
        raise InputError(f'Center {center[0].tolist()} is outside {window}')
    if radius <= 0:
        raise InputError(f'Radius must be positive. Got {radius}')
    return float(_edge_weights(center, radius, window)[0])


def _check_inside(coords, window):
    inside = window.contains(coords)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise InputError(f'Point {coords[bad].tolist()} is outside {window}; pass a window containing the data')


def _pairs_within(a, b, max_t, same):
    """Ordered pairs (index in a, index in b, distance) closer than max_t.

    With same=True, a and b are the same set and self pairs are excluded.
    """

    if same:
        pairs = cKDTree(a).query_pairs(max_t, output_type='ndarray')
        ia = np.concatenate([pairs[:, 0], pairs[:, 1]]) if len(pairs) else np.empty(0, dtype=np.int64)
        ib = np.concatenate([pairs[:, 1], pairs[:, 0]]) if len(pairs) else np.empty(0, dtype=np.int64)
    else:
        neighbors = cKDTree(a).query_ball_tree(cKDTree(b), max_t)
        ia = np.repeat(np.arange(len(neighbors)), [len(x) for x in neighbors]).astype(np.int64)
        ib = np.array([j for x in neighbors for j in x], dtype=np.int64)
    d = np.hypot(a[ia, 0] - b[ib, 0], a[ia, 1] - b[ib, 1])
    return ia, ib, d


def _cumulative(d, weights, t_values):
    """sum of weights over d < t for each t."""

    order = np.argsort(d, kind='stable')
    cum = np.concatenate([[0.0], np.cumsum(weights[order])])
    return cum[np.searchsorted(d[order], t_values, side='left')]


def ripley_k_uni(coords, window, grid):
    """Univariate Ripley's K with isotropic edge correction.

    K(t) = A / N^2 * sum over ordered pairs i != j with d_ij < t of 1/w(i, d_ij).

    Parameters
    ----------
    coords : array_like
        (N, 2) locations of one class, inside the window.
    window : RectWindow
    grid : DistanceGrid

    Returns
    -------
    numpy.ndarray : K on the grid.
    """

    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    n = coords.shape[0]
    if n < 2:
        raise DegenerateClassError(f'Ripley\'s K needs at least 2 points. Got {n}')
    _check_inside(coords, window)
    ia, _, d = _pairs_within(coords, coords, grid.max_t, same=True)
    weights = 1.0 / _edge_weights(coords[ia], d, window)
    return window.area / n ** 2 * _cumulative(d, weights, grid.t_values)


def ripley_k_biv(pts, i, j, grid, window=None):
    """Bivariate K of classes i and j, symmetric in (i, j).

    The directional estimators K_i->j (weights centred on class i points) and
    K_j->i are combined as (n_j K_i->j + n_i K_j->i)/(n_i + n_j). For i == j
    this is the univariate estimator.
    """

    window = pts.window if window is None else window
    if i == j:
        return ripley_k_uni(pts.class_coords(i), window, grid)
    a, b = pts.class_coords(i), pts.class_coords(j)
    n_a, n_b = a.shape[0], b.shape[0]
    if n_a == 0 or n_b == 0:
        raise DegenerateClassError(f'Bivariate K needs both classes non-empty. Got sizes {n_a}, {n_b}')
    _check_inside(a, window)
    _check_inside(b, window)
    ia, ib, d = _pairs_within(a, b, grid.max_t, same=False)
    from_a = _cumulative(d, 1.0 / _edge_weights(a[ia], d, window), grid.t_values)
    from_b = _cumulative(d, 1.0 / _edge_weights(b[ib], d, window), grid.t_values)
    k_ab = window.area / (n_a * n_b) * from_a
    k_ba = window.area / (n_a * n_b) * from_b
    return (n_b * k_ab + n_a * k_ba) / (n_a + n_b)


def l_function(k_values):
    """L(t) = sqrt(K(t)/pi)."""

    return np.sqrt(np.clip(np.asarray(k_values, dtype=float), 0.0, None) / np.pi)


def default_bandwidth(n, area, factor=None):
    """Pair correlation bandwidth factor / sqrt(intensity)."""

    if factor is None:
        factor = get_configs()['pcf_bandwidth_factor']
    return factor / np.sqrt(n / area)


def pair_correlation(k_values, grid, bandwidth, mean_nn_distance=None):
    """Pair correlation g(t) = K'(t)/(2 pi t) from K on a fine grid.

    K' is the slope of a Gaussian-kernel local quadratic fit of K around each t,
    which is exact when K is quadratic.

    Parameters
    ----------
    k_values : array_like
        K on grid.
    grid : DistanceGrid
        Must not contain t = 0.
    bandwidth : float
    mean_nn_distance : float
        Values at t below it are flagged unreliable.

    Returns
    -------
    Curve
    """

    t = grid.t_values
    if t[0] <= 0:
        raise InputError('The pair correlation is undefined at t=0; use a grid of positive distances')
    if bandwidth <= 0:
        raise InputError(f'Bandwidth must be positive. Got {bandwidth}')
    k_values = np.asarray(k_values, dtype=float)
    dt = t[None, :] - t[:, None]
    kernel = np.exp(-0.5 * (dt / bandwidth) ** 2)
    design = np.stack([np.ones_like(dt), dt, dt ** 2], axis=-1)
    normal = np.einsum('ab,abk,abl->akl', kernel, design, design)
    rhs = np.einsum('ab,abk,b->ak', kernel, design, k_values)
    slope = np.linalg.solve(normal, rhs[..., None])[:, 1, 0]
    g = slope / (2 * np.pi * t)
    reliable = t >= mean_nn_distance if mean_nn_distance is not None else np.ones_like(t, dtype=bool)
    return Curve(t, g, 'g', reliable)


def envelope(statistic, null_spec, cfg, grid, observed=None, label='', key=()):
    """Pointwise 2.5% and 97.5% bounds of a curve over null simulations.

    Parameters
    ----------
    statistic : callable
        Picklable function of a MarkedPointSet returning values on grid.
    null_spec : PatternSpec
    cfg : McConfig
        cfg.replicates simulations are drawn from substreams of cfg.master_seed.
    grid : DistanceGrid
    observed : numpy.ndarray
        Curve of the data; the mean of the simulations when omitted.

    Returns
    -------
    CurveWithEnvelope
    """

    spec = PatternSpec(null_spec.kind, null_spec.class_sizes, null_spec.window, cfg.master_seed,
                       dict(null_spec.params), null_spec.regenerate_locations)
    sims = np.vstack(_run_chunks(_chunk_envelope, (statistic, spec, (STREAM_ENVELOPE,) + tuple(key)),
                                 cfg.replicates, cfg.workers))
    lower, upper = np.quantile(sims, ENVELOPE_QUANTILES, axis=0)
    estimate = sims.mean(axis=0) if observed is None else np.asarray(observed, dtype=float)
    return CurveWithEnvelope(grid.t_values, estimate, label, lower=lower, upper=upper, n_sim=sims.shape[0])


def _chunk_envelope(statistic, spec, key, start, stop):
    return np.vstack([statistic(generate(spec, r, key=key)) for r in range(start, stop)])


def class_curve(pts, grid, cls=None, which='l'):
    """K(t) (which='k') or L(t) - t (which='l') of one class, or of all points when cls is None."""

    coords = pts.coords if cls is None else pts.class_coords(cls)
    k_values = ripley_k_uni(coords, pts.window, grid)
    return k_values if which == 'k' else l_function(k_values) - grid.t_values


def pair_l_minus_t(pts, grid, i, j):
    """Bivariate L_ij(t) - t."""

    return l_function(ripley_k_biv(pts, i, j, grid)) - grid.t_values


def l_curves(pts, grid, cfg, which='l'):
    """K or L(t) - t for all points and for each class, with CSR envelopes.

    Classes with fewer than 2 points are skipped.
    """

    if which not in ('k', 'l'):
        raise InputError(f'which must be k or l. Got {which}')
    curves = []
    all_spec = PatternSpec('csr', (pts.n - pts.n // 2, pts.n // 2), pts.window)
    curves.append(envelope(partial(class_curve, grid=grid, which=which), all_spec, cfg, grid,
                           observed=class_curve(pts, grid, which=which), label='all', key=(0,)))
    for c, size in enumerate(pts.class_sizes):
        if size < 2:
            continue
        # class 1 of the null pattern is a single unused point
        spec = PatternSpec('csr', (int(size), 1), pts.window)
        curves.append(envelope(partial(class_curve, grid=grid, cls=0, which=which), spec, cfg, grid,
                               observed=class_curve(pts, grid, c, which), label=pts.class_names[c], key=(c + 1,)))
    return curves


def kij_curves(pts, grid, cfg):
    """L_ij(t) - t for every unordered pair of distinct non-empty classes."""

    curves = []
    sizes = pts.class_sizes
    for i in range(pts.q):
        for j in range(i + 1, pts.q):
            if sizes[i] == 0 or sizes[j] == 0:
                continue
            spec = PatternSpec('csr', (int(sizes[i]), int(sizes[j])), pts.window)
            label = f'{pts.class_names[i]}-{pts.class_names[j]}'
            curves.append(envelope(partial(pair_l_minus_t, grid=grid, i=0, j=1), spec, cfg, grid,
                                   observed=pair_l_minus_t(pts, grid, i, j), label=label, key=(i, j)))
    return curves


def pcf_curves(pts, grid, cfg, bandwidth=None):
    """Pair correlation of all points and of each class with CSR envelopes.

    Values below the mean NN distance of the points concerned are flagged.
    """

    curves = []
    groups = [('all', None, pts.n)] + [(pts.class_names[c], c, int(s)) for c, s in enumerate(pts.class_sizes) if s >= 2]
    for label, cls, size in groups:
        coords = pts.coords if cls is None else pts.class_coords(cls)
        h = default_bandwidth(size, pts.window.area) if bandwidth is None else bandwidth
        mean_nn, _ = build_nn_graph(coords).mean_nn_distance()
        observed = pair_correlation(ripley_k_uni(coords, pts.window, grid), grid, h, mean_nn)
        spec = PatternSpec('csr', (size - size // 2, size // 2), pts.window)
        env = envelope(partial(_pcf_values, grid=grid, bandwidth=h), spec, cfg, grid,
                       observed=observed.estimate, label=label, key=(0 if cls is None else cls + 1,))
        env.reliable = observed.reliable
        curves.append(env)
    return curves


def _pcf_values(pts, grid, bandwidth):
    return pair_correlation(ripley_k_uni(pts.coords, pts.window, grid), grid, bandwidth).estimate


def diggle_d(pts, case, control, grid, cfg):
    """Diggle's D(t) = K_case(t) - K_control(t) with a +-2 SE band.

    The standard error is the pointwise standard deviation of D over
    cfg.replicates random relabelings of the case and control locations.

    Returns
    -------
    CurveWithEnvelope : lower = -2 SE, upper = +2 SE.
    """

    sizes = pts.class_sizes
    for c in (case, control):
        if not (0 <= c < pts.q):
            raise InputError(f'Class {c} out of range for q={pts.q}')
        if sizes[c] < 2:
            raise DegenerateClassError(f'Diggle\'s D needs at least 2 points of class {pts.class_names[c]}')
    if case == control:
        raise InputError('Case and control classes must differ')
    keep = (pts.labels == case) | (pts.labels == control)
    coords = pts.coords[keep]
    is_case = pts.labels[keep] == case
    _check_inside(coords, pts.window)
    ia, ib, d = _pairs_within(coords, coords, grid.max_t, same=True)
    order = np.argsort(d, kind='stable')
    ia, ib, d = ia[order], ib[order], d[order]
    weights = 1.0 / _edge_weights(coords[ia], d, pts.window)
    index = np.searchsorted(d, grid.t_values, side='left')
    n_case, n_control = int(sizes[case]), int(sizes[control])
    area = pts.window.area

    def d_curve(labels):
        both_case = labels[ia] & labels[ib]
        both_control = ~labels[ia] & ~labels[ib]
        k_case = np.concatenate([[0.0], np.cumsum(weights * both_case)])[index] * area / n_case ** 2
        k_control = np.concatenate([[0.0], np.cumsum(weights * both_control)])[index] * area / n_control ** 2
        return k_case - k_control

    observed = d_curve(is_case)
    sims = np.vstack([d_curve(substream_rng(cfg.master_seed, STREAM_RELABEL, r).permutation(is_case))
                      for r in range(cfg.replicates)])
    se = sims.std(axis=0, ddof=1) if cfg.replicates > 1 else np.zeros_like(observed)
    label = f'{pts.class_names[case]}-{pts.class_names[control]}'
    return CurveWithEnvelope(grid.t_values, observed, label, lower=-2 * se, upper=2 * se, n_sim=cfg.replicates)
