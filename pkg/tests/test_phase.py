import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from radialvp.phase import Ensemble, ModelTag, Particle, RadialPoint, cartesian_to_radial, speed_squared

vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3)


@pytest.mark.parametrize(
    "x, v, expected",
    [
        ((1, 0, 0), (0, 1, 0), (1.0, 0.0, 1.0)),
        ((0, 0, 2), (0, 0, -1), (2.0, -1.0, 0.0)),
        ((3, 4, 0), (1, 1, 0), (5.0, 1.4, 1.0)),
    ],
)
def test_cartesian_to_radial_examples(x, v, expected):
    p = cartesian_to_radial(x, v)
    assert p.as_tuple() == pytest.approx(expected, rel=1e-14, abs=1e-14)


def test_cartesian_rejects_origin():
    with pytest.raises(ValueError):
        cartesian_to_radial((0, 0, 0), (1, 0, 0))


@pytest.mark.parametrize("p, expected", [((1, 0, 1), 1.0), ((2, -1, 0), 1.0), ((5, 1.4, 1), 2.0)])
def test_speed_squared_examples(p, expected):
    assert speed_squared(RadialPoint(*p)) == pytest.approx(expected, rel=1e-14)


def test_speed_squared_rejects_zero_radius():
    with pytest.raises(ValueError):
        speed_squared(RadialPoint(0.0, 1.0, 0.0))


def test_radial_point_validation():
    with pytest.raises(ValueError):
        RadialPoint(-1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        RadialPoint(1.0, 0.0, -1.0)


@settings(max_examples=200, deadline=None)
@given(vec, vec)
def test_speed_round_trip(x, v):
    x, v = np.array(x), np.array(v)
    if np.linalg.norm(x) < 1e-3:
        return
    p = cartesian_to_radial(x, v)
    assert speed_squared(p) == pytest.approx(float(v @ v), rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(vec, vec, st.integers(0, 2**32 - 1))
def test_rotation_invariance(x, v, seed):
    x, v = np.array(x), np.array(v)
    if np.linalg.norm(x) < 1e-3:
        return
    rot = Rotation.random(random_state=seed).as_matrix()
    a = cartesian_to_radial(x, v)
    b = cartesian_to_radial(rot @ x, rot @ v)
    scale = 1.0 + float(v @ v) * float(x @ x)
    assert b.r == pytest.approx(a.r, rel=1e-12)
    assert b.w == pytest.approx(a.w, rel=1e-12, abs=1e-12 * math.sqrt(scale))
    assert b.ell == pytest.approx(a.ell, rel=1e-12, abs=1e-12 * scale)


def test_ensemble_round_trip_and_validation():
    ps = [Particle(RadialPoint(1.0, 0.5, 2.0), 0.25), Particle(RadialPoint(2.0, -1.0, 0.0), 0.75)]
    e = Ensemble.from_particles(ps, model="relativistic", time=3.0)
    assert e.model is ModelTag.RELATIVISTIC
    assert len(e) == 2
    assert e.particles == ps
    c = e.copy()
    c.r[0] = 9.0
    assert e.r[0] == 1.0
    with pytest.raises(ValueError):
        Ensemble(np.ones(2), np.ones(2), -np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        Ensemble(np.ones(2), np.ones(2), np.ones(2), -np.ones(2))
    with pytest.raises(ValueError):
        ModelTag.coerce("newtonian")
