import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from flatlab.curve import (
    CurveSpec,
    builtin_curve,
    curve_cover,
    flatness_constant,
    halfparabola,
    parabola,
    piecewise_polynomial_curve,
    tangent_projection,
    verify_containment,
)
from flatlab.errors import ValidationError
from flatlab.grid import Scale, projection_gap
from flatlab.measure import atom, builtin_measure, lift_to_curve, uniform_interval


def test_certificates():
    p = parabola()
    assert p.convexity_margin == pytest.approx(2.0)
    assert p.second_derivative_sup == pytest.approx(2.0)
    assert builtin_curve("halfparabola").second_derivative_sup == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        builtin_curve("circle")


def test_nonconvex_rejected():
    with pytest.raises(ValidationError, match="convexity"):
        CurveSpec("cubic", lambda x: x ** 3, lambda x: 3 * x ** 2, lambda x: 6 * x)


def test_derivative_mismatch_rejected():
    with pytest.raises(ValidationError, match="finite differences"):
        CurveSpec("bad", lambda x: x * x, lambda x: 2.1 * x, lambda x: 2.0 + 0 * x)


def test_modulus_widens_certificate():
    loose = CurveSpec("p", lambda x: x * x, lambda x: 2 * x, lambda x: 2.0 + 0 * x, modulus=100.0)
    assert loose.convexity_margin < 2.0 < loose.second_derivative_sup


# -- flatness constant


def test_flatness_parabola():
    assert flatness_constant(parabola()) == pytest.approx(0.5)


def test_flatness_halfparabola():
    assert flatness_constant(halfparabola()) == pytest.approx(1 / math.sqrt(2))


@pytest.mark.parametrize("curve", [parabola, halfparabola])
def test_doubling_c_breaks_containment(curve):
    c = flatness_constant(curve())
    assert verify_containment(curve(), c).ok
    assert not verify_containment(curve(), 2 * c).ok


def test_containment_report_margins():
    rep = verify_containment(parabola(), 0.5)
    assert rep.ok and rep.samples > 0
    assert rep.worst_normal <= 1 and rep.worst_tangent <= 1


# -- tangent frames


def test_tangent_at_vertex():
    f = tangent_projection(parabola(), 0.0)
    np.testing.assert_allclose(f.tangent, [1, 0])
    np.testing.assert_allclose(f.project(np.array([[3.0, 2.0]])), [2.0])
    assert f.direction.angle == pytest.approx(math.pi / 2)


def test_tangent_at_half():
    f = tangent_projection(parabola(), 0.5)
    np.testing.assert_allclose(f.tangent, np.array([1, 1]) / math.sqrt(2))
    np.testing.assert_allclose(f.normal, np.array([-1, 1]) / math.sqrt(2))


def test_tangent_anchor_domain():
    with pytest.raises(ValidationError):
        tangent_projection(parabola(), 1.5)


def _gap_ratio(x1, x2):
    p = parabola()
    g = projection_gap(tangent_projection(p, x1).direction, tangent_projection(p, x2).direction)
    return g / abs(2 * x1 - 2 * x2)


def test_tangent_comparability_sampled_pairs():
    rng = np.random.default_rng(4)
    # |pi_1 - pi_2| = 2 sin(|arctan s1 - arctan s2| / 2); arctan' >= 1/(1+4) on [-2, 2]
    lower = 0.9 / (1 + 4)
    for x1, x2 in rng.uniform(-1, 1, (100, 2)):
        r = _gap_ratio(x1, x2)
        assert lower <= r <= 1 + 1e-12


def test_tangent_comparability_quarter_fails_near_ends():
    assert _gap_ratio(0.9, 1.0) < 0.25
    assert 0.25 <= _gap_ratio(-0.5, 0.5) <= 4


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=20, unique=True))
def test_slope_strictly_increasing(xs):
    xs = sorted(xs)
    slopes = [tangent_projection(parabola(), x).tangent for x in xs]
    s = [t[1] / t[0] for t in slopes]
    assert all(a < b for a, b in zip(s, s[1:]))


# -- covers


def test_cover_single_neighbourhood():
    rep = curve_cover(lift_to_curve(atom(Scale(8)), parabola()), 2 ** -4, 16.0, parabola())
    assert len(rep) == 1 and rep.covered


def test_cover_lifted_lebesgue_count():
    mu = uniform_interval(-1, 1, Scale(8))
    rep = curve_cover(lift_to_curve(mu, parabola()), 2 ** -4, 2.0, parabola())
    c = rep.c
    arclength = quad(lambda x: math.sqrt(1 + 4 * x * x), -1, 1)[0]
    for ref in (2 / (c * 2 ** -4), arclength / (c * 2 ** -4)):
        assert ref / 4 <= len(rep) <= 4 * ref
    assert rep.ok
    assert rep.A == pytest.approx(10 / c)


@pytest.mark.parametrize("name,m", [("cantor4", 10), ("lebesgue", 8), ("cantor3", 9)])
def test_cover_invariants(name, m):
    L = lift_to_curve(builtin_measure(name, Scale(m)), parabola())
    Delta = math.sqrt(L.delta)
    rep = curve_cover(L, Delta, 16.0, parabola())
    pts = L.positions()
    d = np.linalg.norm(pts[:, None, :] - rep.centers[None, :, :], axis=2)
    assert np.all(d.min(axis=1) <= rep.radius)
    assert rep.separation_min >= rep.radius / 2
    assert rep.overlap_max <= 9


def test_cover_needs_planar_measure():
    with pytest.raises(ValidationError):
        curve_cover(atom(Scale(4)), 0.25, 2.0, parabola())


# -- piecewise polynomial curves


def test_piecewise_polynomial_curve():
    c = piecewise_polynomial_curve("quartic", [-2, 0, 2], [[0, 0, 1], [0, 0, 1, 0, 0.1]])
    np.testing.assert_allclose(c.phi(np.array([-1.0, 1.0])), [1.0, 1.1])
    assert c.convexity_margin > 1.5
    with pytest.raises(ValidationError):
        piecewise_polynomial_curve("short", [-1, 1], [[0, 0, 1]])
    with pytest.raises(ValidationError):
        piecewise_polynomial_curve("concave", [-2, 2], [[0, 0, -1]])
