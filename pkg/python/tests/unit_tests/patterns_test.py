"""Unit test for the patterns module.

Pattern draws are checked for their support, repeatability and the special
cases where an alternative reduces to the null pattern.
"""

import numpy as np
import pytest

from segpoint.core import InputError, RectWindow
from segpoint.patterns import (NAMED_ALTERNATIVES, RL_LAYOUTS, UNIT_SQUARE, PatternSpec,
                               fixed_locations, gen_csr, gen_hard_core, gen_segregation, generate,
                               hard_core_thin, named_alternative)
from segpoint.utils import substream_rng

pytestmark = [pytest.mark.usable, pytest.mark.fast]


# Tests
def test_csr_inside_window():
    w = RectWindow(2, 5, -1, 0)
    spec = PatternSpec('csr', (40, 60), window=w, seed=1)
    pts = generate(spec, 0)
    assert pts.n == 100
    assert pts.class_sizes.tolist() == [40, 60]
    assert pts.window == w
    assert np.all(w.contains(pts.coords))


def test_generate_repeatable():
    spec = PatternSpec('csr', (10, 10), seed=3)
    assert np.array_equal(generate(spec, 7).coords, generate(spec, 7).coords)
    assert not np.array_equal(generate(spec, 7).coords, generate(spec, 8).coords)
    assert not np.array_equal(generate(spec, 7, key=(1,)).coords, generate(spec, 7, key=(2,)).coords)


@pytest.mark.parametrize('kind, sizes, params', [
    ['segregation2', (20, 30), {'s': 0.0}],
    ['segregation3', (20, 30, 10), {'s': 0.0}],
])
def test_segregation_zero_shift_is_csr(kind, sizes, params):
    spec = PatternSpec(kind, sizes, params=params)
    csr = PatternSpec('csr', sizes)
    a = gen_segregation(spec, substream_rng(5, 0))
    b = gen_csr(csr, substream_rng(5, 0))
    assert np.array_equal(a.coords, b.coords)
    assert np.array_equal(a.labels, b.labels)


@pytest.mark.parametrize('name, sizes', [['HS3', (50, 50)], ['HS3-3cl', (30, 30, 30)]])
def test_segregation_supports(name, sizes):
    spec = named_alternative(name, sizes, seed=2)
    s = spec.params['s']
    pts = generate(spec, 0)
    x = pts.class_coords(0)
    y = pts.class_coords(1)
    if spec.q == 2:
        assert np.all(x <= 1 - s) and np.all(y >= s)
    else:
        z = pts.class_coords(2)
        assert np.all(x <= 1 - 2 * s) and np.all(y >= 2 * s)
        assert np.all((z >= s) & (z <= 1 - s))


def test_association_radius():
    spec = named_alternative('HA2', (20, 80), seed=4)
    pts = generate(spec, 3)
    parents = pts.class_coords(0)
    offspring = pts.class_coords(1)
    d = np.hypot(offspring[:, None, 0] - parents[None, :, 0], offspring[:, None, 1] - parents[None, :, 1])
    assert np.all(d.min(axis=1) <= spec.params['r'] + 1e-12)
    assert np.all(UNIT_SQUARE.contains(parents))


def test_association_three_class_radii():
    spec = named_alternative('HA1-3cl', (10, 40, 40), seed=4)
    pts = generate(spec, 0)
    parents = pts.class_coords(0)
    for cls, radius in [(1, spec.params['r_y']), (2, spec.params['r_z'])]:
        kids = pts.class_coords(cls)
        d = np.hypot(kids[:, None, 0] - parents[None, :, 0], kids[:, None, 1] - parents[None, :, 1])
        assert np.all(d.min(axis=1) <= radius + 1e-12)


def test_rl_fixed_locations():
    spec = PatternSpec('rl', (30, 20), seed=9, params={'case': 2})
    locations = fixed_locations(spec)
    a = generate(spec, 0, locations=locations)
    b = generate(spec, 1, locations=locations)
    assert np.array_equal(a.coords, b.coords)
    assert not np.array_equal(a.labels, b.labels)
    assert a.class_sizes.tolist() == [30, 20]
    assert np.array_equal(generate(spec, 0).coords, a.coords)
    assert a.window == RL_LAYOUTS[(2, 2)][1]


def test_rl_layout_boxes():
    spec = PatternSpec('rl', (15, 25, 20), seed=1, params={'case': 2})
    locations = fixed_locations(spec)
    boxes, _ = RL_LAYOUTS[(3, 2)]
    start = 0
    for size, (xmin, xmax, ymin, ymax) in zip(spec.class_sizes, boxes):
        block = locations[start:start + size]
        assert np.all((block[:, 0] >= xmin) & (block[:, 0] <= xmax))
        assert np.all((block[:, 1] >= ymin) & (block[:, 1] <= ymax))
        start += size


def test_rl_regenerated_locations():
    spec = PatternSpec('rl', (10, 10), seed=9, params={'case': 1}, regenerate_locations=True)
    assert not np.array_equal(generate(spec, 0).coords, generate(spec, 1).coords)
    assert spec.region() == UNIT_SQUARE


@pytest.mark.parametrize('kind, sizes, params', [
    ['poisson', (5, 5), {}],
    ['csr', (5,), {}],
    ['csr', (5, 0), {}],
    ['rl', (5, 5), {}],
    ['rl', (5, 5), {'case': 4}],
    ['segregation2', (5, 5), {'s': 1.0}],
    ['segregation2', (5, 5, 5), {'s': 0.1}],
    ['segregation3', (5, 5, 5), {'s': 0.5}],
    ['association2', (5, 5), {'r': 0.0}],
    ['association3', (5, 5, 5), {'r_y': 0.1}],
])
def test_spec_invalid(kind, sizes, params):
    with pytest.raises(InputError):
        PatternSpec(kind, sizes, params=params)


def test_spec_dict():
    spec = PatternSpec('rl', (5, 7), window=RectWindow(0, 2, 0, 1), seed=4, params={'case': 3})
    assert PatternSpec.from_dict(spec.to_dict()) == spec
    other = spec.with_sizes((8, 8))
    assert other.class_sizes == (8, 8)
    assert other.params == spec.params


def test_named_alternatives():
    assert set(NAMED_ALTERNATIVES) >= {'HS1', 'HS2', 'HS3', 'HA1', 'HA2', 'HA3'}
    assert named_alternative('HS2', (10, 10)).params == {'s': 0.25}
    assert not named_alternative('HA3', (10, 10)).is_null
    with pytest.raises(InputError):
        named_alternative('HX', (10, 10))


def test_hard_core_thin():
    coords = np.array([[0.0, 0.0], [0.05, 0.0], [0.2, 0.0], [0.2, 0.09], [1.0, 1.0]])
    assert hard_core_thin(coords, 0.1).tolist() == [0, 2, 4]
    assert hard_core_thin(coords, 0.0).tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(InputError):
        hard_core_thin(coords, -1.0)


def test_gen_hard_core():
    coords = gen_hard_core(60, 0.05, UNIT_SQUARE, substream_rng(1, 4))
    assert coords.shape == (60, 2)
    d = np.hypot(coords[:, None, 0] - coords[None, :, 0], coords[:, None, 1] - coords[None, :, 1])
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 0.05
