"""Random generation of the null and alternative patterns.

Every pattern is drawn from a PCG64 substream keyed by the pattern seed, a
purpose code and the replicate index, so replicate r of a PatternSpec is the
same whichever process draws it.

Null patterns
    ``csr``          classes iid uniform on the window, mutually independent
    ``rl``           random labelling of fixed locations (RL cases 1-3)
Alternatives
    ``segregation2`` X on (0,1-s)^2, Y on (s,1)^2
    ``segregation3`` X on (0,1-2s)^2, Y on (2s,1)^2, Z on (s,1-s)^2
    ``association2`` Y offspring within radius r of uniformly chosen X parents
    ``association3`` Y within r_y and Z within r_z of X parents
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import InputError, MarkedPointSet, RectWindow
from .utils import substream_rng

logger = logging.getLogger(__name__)

# purpose codes of the random substreams
STREAM_PATTERN = 0
STREAM_LOCATIONS = 1
STREAM_RELABEL = 2
STREAM_CRITICAL = 3
STREAM_ENVELOPE = 4

KINDS = ('csr', 'rl', 'segregation2', 'segregation3', 'association2', 'association3')

UNIT_SQUARE = RectWindow(0.0, 1.0, 0.0, 1.0)

# (per-class boxes, window) of the random labelling location layouts, keyed by
# (number of classes, case). Case 1 puts every location in the unit square.
RL_LAYOUTS = {
    (2, 2): ([(0.0, 2 / 3, 0.0, 2 / 3), (1 / 3, 1.0, 1 / 3, 1.0)], RectWindow(0.0, 1.0, 0.0, 1.0)),
    (2, 3): ([(0.0, 1.0, 0.0, 1.0), (2.0, 3.0, 0.0, 1.0)], RectWindow(0.0, 3.0, 0.0, 1.0)),
    (3, 2): ([(0.0, 1.0, 0.0, 1.0), (2.0, 3.0, 0.0, 1.0), (1.0, 2.0, 2.0, 3.0)], RectWindow(0.0, 3.0, 0.0, 3.0)),
}

NAMED_ALTERNATIVES = {
    'HS1': ('segregation2', {'s': 1 / 6}),
    'HS2': ('segregation2', {'s': 1 / 4}),
    'HS3': ('segregation2', {'s': 1 / 3}),
    'HA1': ('association2', {'r': 1 / 4}),
    'HA2': ('association2', {'r': 1 / 7}),
    'HA3': ('association2', {'r': 1 / 10}),
    'HS1-3cl': ('segregation3', {'s': 1 / 12}),
    'HS2-3cl': ('segregation3', {'s': 1 / 8}),
    'HS3-3cl': ('segregation3', {'s': 1 / 6}),
    'HA1-3cl': ('association3', {'r_y': 1 / 7, 'r_z': 1 / 10}),
    'HA2-3cl': ('association3', {'r_y': 1 / 10, 'r_z': 1 / 20}),
    'HA3-3cl': ('association3', {'r_y': 1 / 13, 'r_z': 1 / 30}),
}


@dataclass
class PatternSpec:
    """Description of a random pattern.

    Attributes
    ----------
    kind : str
        One of KINDS.
    class_sizes : tuple of int
    window : RectWindow
        Region of CSR patterns. RL layouts and the alternatives carry their own
        region and ignore it.
    seed : int
    params : dict
        ``case`` for rl, ``s`` for segregation, ``r`` or ``r_y``, ``r_z`` for
        association.
    regenerate_locations : bool
        For rl, draw new locations for every replicate instead of reusing one set.
    """

    kind: str
    class_sizes: tuple
    window: RectWindow = field(default_factory=lambda: UNIT_SQUARE)
    seed: int = 0
    params: dict = field(default_factory=dict)
    regenerate_locations: bool = False

    def __post_init__(self):
        self.class_sizes = tuple(int(s) for s in self.class_sizes)
        self.params = {k: (float(v) if k != 'case' else int(v)) for k, v in self.params.items()}
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise InputError(f'Unknown pattern kind "{self.kind}". Use one of {", ".join(KINDS)}')
        q = len(self.class_sizes)
        if q < 2 or any(s < 1 for s in self.class_sizes):
            raise InputError(f'At least 2 classes with positive sizes are needed. Got {self.class_sizes}')
        if self.window.area <= 0:
            raise InputError(f'Window {self.window} has zero area')
        needed = {
            'rl': ('case',), 'segregation2': ('s',), 'segregation3': ('s',),
            'association2': ('r',), 'association3': ('r_y', 'r_z'),
        }.get(self.kind, ())
        for key in needed:
            if key not in self.params:
                raise InputError(f'Pattern kind "{self.kind}" needs parameter "{key}"')
        classes = {'segregation2': 2, 'association2': 2, 'segregation3': 3, 'association3': 3}.get(self.kind)
        if classes is not None and q != classes:
            raise InputError(f'Pattern kind "{self.kind}" needs {classes} classes. Got {q}')
        if self.kind == 'rl':
            case = self.params['case']
            if case != 1 and (q, case) not in RL_LAYOUTS:
                raise InputError(f'No RL case {case} layout for {q} classes')
        if self.kind == 'segregation2' and not (0 <= self.params['s'] < 1):
            raise InputError(f'segregation2 needs 0 <= s < 1. Got s={self.params["s"]}')
        if self.kind == 'segregation3' and not (0 <= self.params['s'] < 0.5):
            raise InputError(f'segregation3 needs 0 <= s < 1/2. Got s={self.params["s"]}')
        for key in ('r', 'r_y', 'r_z'):
            if key in needed and not (0 < self.params[key] < 1):
                raise InputError(f'{self.kind} needs 0 < {key} < 1. Got {key}={self.params[key]}')

    @property
    def q(self):
        return len(self.class_sizes)

    @property
    def is_null(self):
        return self.kind in ('csr', 'rl')

    def region(self):
        """Window the generated points are analysed in."""

        if self.kind == 'rl':
            layout = RL_LAYOUTS.get((self.q, self.params['case']))
            return layout[1] if layout is not None else UNIT_SQUARE
        if self.kind == 'csr':
            return self.window
        return UNIT_SQUARE

    def with_sizes(self, class_sizes):
        """Return a copy of the pattern with other class sizes."""

        return PatternSpec(self.kind, class_sizes, self.window, self.seed, dict(self.params),
                           self.regenerate_locations)

    def to_dict(self):
        return {
            'kind': self.kind,
            'class_sizes': list(self.class_sizes),
            'window': self.window.to_list(),
            'seed': int(self.seed),
            'params': dict(self.params),
            'regenerate_locations': self.regenerate_locations,
        }

    @classmethod
    def from_dict(cls, d):
        window = d.get('window')
        return cls(kind=d['kind'], class_sizes=d['class_sizes'],
                   window=RectWindow(*window) if window is not None else UNIT_SQUARE,
                   seed=d.get('seed', 0), params=d.get('params', {}),
                   regenerate_locations=d.get('regenerate_locations', False))


def named_alternative(name, class_sizes, seed=0):
    """Return the PatternSpec of a named alternative such as 'HS1' or 'HA2-3cl'."""

    if name not in NAMED_ALTERNATIVES:
        raise InputError(f'Unknown alternative "{name}". Use one of {", ".join(NAMED_ALTERNATIVES)}')
    kind, params = NAMED_ALTERNATIVES[name]
    return PatternSpec(kind, class_sizes, seed=seed, params=dict(params))


def _uniform_box(rng, size, box):
    xmin, xmax, ymin, ymax = box
    u = rng.random((size, 2))
    return np.column_stack([xmin + (xmax - xmin) * u[:, 0], ymin + (ymax - ymin) * u[:, 1]])


def _labels_in_blocks(class_sizes):
    return np.repeat(np.arange(len(class_sizes)), class_sizes)


def gen_csr(spec, rng):
    """CSR independence: each class iid uniform on the window.

    Returns
    -------
    MarkedPointSet
    """

    w = spec.window
    coords = np.vstack([_uniform_box(rng, size, (w.xmin, w.xmax, w.ymin, w.ymax)) for size in spec.class_sizes])
    return MarkedPointSet(coords, _labels_in_blocks(spec.class_sizes), window=w, q=spec.q)


def rl_locations(case, class_sizes, rng):
    """Draw the fixed locations of an RL case layout.

    Case 1 draws all locations uniformly on the unit square; other cases draw the
    n_c locations of block c on its own box of RL_LAYOUTS.
    """

    q = len(class_sizes)
    n = sum(class_sizes)
    if case == 1:
        return _uniform_box(rng, n, (0.0, 1.0, 0.0, 1.0))
    boxes, _ = RL_LAYOUTS[(q, case)]
    return np.vstack([_uniform_box(rng, size, box) for size, box in zip(class_sizes, boxes)])


def gen_rl(locations, class_sizes, rng, window=None):
    """Random labelling: assign labels to fixed locations without replacement.

    Parameters
    ----------
    locations : array_like
        (n, 2) fixed locations.
    class_sizes : sequence of int
    rng : numpy.random.Generator
    window : RectWindow

    Returns
    -------
    MarkedPointSet
    """

    locations = np.asarray(locations, dtype=float)
    if sum(class_sizes) > locations.shape[0]:
        raise InputError(f'Class sizes {tuple(class_sizes)} exceed the {locations.shape[0]} locations')
    chosen = locations[:sum(class_sizes)]
    labels = rng.permutation(_labels_in_blocks(class_sizes))
    return MarkedPointSet(chosen, labels, window=window, q=len(class_sizes))


def gen_segregation(spec, rng):
    """Shifted-square segregation alternative.

    With s=0 the draws equal gen_csr on the unit square for the same generator.
    """

    s = spec.params['s']
    if spec.kind == 'segregation2':
        boxes = [(0.0, 1 - s, 0.0, 1 - s), (s, 1.0, s, 1.0)]
    else:
        boxes = [(0.0, 1 - 2 * s, 0.0, 1 - 2 * s), (2 * s, 1.0, 2 * s, 1.0), (s, 1 - s, s, 1 - s)]
    coords = np.vstack([_uniform_box(rng, size, box) for size, box in zip(spec.class_sizes, boxes)])
    return MarkedPointSet(coords, _labels_in_blocks(spec.class_sizes), window=UNIT_SQUARE, q=spec.q)


def _offspring(rng, parents, size, radius):
    which = rng.integers(parents.shape[0], size=size)
    r = radius * rng.random(size)
    theta = 2 * np.pi * rng.random(size)
    return parents[which] + np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def gen_association(spec, rng):
    """Radial-offset association alternative.

    Parents X are uniform on the unit square. Each offspring picks a parent
    uniformly with replacement and sits at radius U(0, r) and angle U(0, 2pi)
    from it. Offspring outside the unit square are kept.
    """

    n_x = spec.class_sizes[0]
    if n_x < 1:
        raise InputError('Association patterns need at least one parent point')
    parents = _uniform_box(rng, n_x, (0.0, 1.0, 0.0, 1.0))
    if spec.kind == 'association2':
        radii = [spec.params['r']]
    else:
        radii = [spec.params['r_y'], spec.params['r_z']]
    blocks = [parents] + [_offspring(rng, parents, size, r) for size, r in zip(spec.class_sizes[1:], radii)]
    return MarkedPointSet(np.vstack(blocks), _labels_in_blocks(spec.class_sizes), window=UNIT_SQUARE, q=spec.q)


def fixed_locations(spec, replicate=0, key=()):
    """Locations an RL spec labels in replicate (shared unless regenerated)."""

    if spec.regenerate_locations:
        rng = substream_rng(spec.seed, STREAM_LOCATIONS, *key, replicate)
    else:
        rng = substream_rng(spec.seed, STREAM_LOCATIONS, *key)
    return rl_locations(spec.params['case'], spec.class_sizes, rng)


def generate(spec, replicate, key=(), locations=None):
    """Draw replicate number `replicate` of a pattern.

    Parameters
    ----------
    spec : PatternSpec
    replicate : int
    key : tuple of int
        Extra substream key, e.g. the index of the size tuple in an experiment.
    locations : numpy.ndarray
        Precomputed RL locations (from fixed_locations) to avoid redrawing them.

    Returns
    -------
    MarkedPointSet
    """

    rng = substream_rng(spec.seed, STREAM_PATTERN, *key, replicate)
    if spec.kind == 'csr':
        return gen_csr(spec, rng)
    elif spec.kind == 'rl':
        if locations is None or spec.regenerate_locations:
            locations = fixed_locations(spec, replicate, key)
        return gen_rl(locations, spec.class_sizes, rng, window=spec.region())
    elif spec.kind.startswith('segregation'):
        return gen_segregation(spec, rng)
    else:
        return gen_association(spec, rng)


def hard_core_thin(coords, delta):
    """Sequential inhibition: keep points in order unless within delta of a kept one.

    Returns
    -------
    numpy.ndarray : indices of the kept points.
    """

    coords = np.asarray(coords, dtype=float)
    if delta < 0:
        raise InputError(f'Hard-core distance must be non-negative. Got {delta}')
    kept = []
    for i, p in enumerate(coords):
        if not kept or np.min(np.hypot(*(coords[kept] - p).T)) >= delta:
            kept.append(i)
    return np.array(kept, dtype=np.int64)


def gen_hard_core(n, delta, window, rng, oversample=4):
    """Hard-core pattern of up to n points with minimum distance delta.

    Draws oversample*n uniform candidates and thins them sequentially. Fewer than
    n points are returned when the window cannot hold n.
    """

    candidates = _uniform_box(rng, oversample * n, (window.xmin, window.xmax, window.ymin, window.ymax))
    kept = hard_core_thin(candidates, delta)[:n]
    if kept.shape[0] < n:
        logger.info('Hard-core thinning kept %d of %d requested points', kept.shape[0], n)
    return candidates[kept]
