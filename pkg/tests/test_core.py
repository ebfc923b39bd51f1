import math

import numpy as np
import pytest

from selfsim.core import (BoundaryPair, Grid, HypothesisError, Profile, build_tilde_u, certify_constants,
                          default_half_width, hull_box, linear_flux_map)


def test_grid_is_symmetric_with_exact_zero():
    g = Grid(3.0, 7)
    assert g.h == pytest.approx(1.0)
    assert g.y[g.mid] == 0.0
    np.testing.assert_allclose(g.y, -g.y[::-1])


@pytest.mark.parametrize("L, n", [(0.0, 5), (-1.0, 5), (math.inf, 5), (1.0, 4), (1.0, 1)])
def test_grid_rejects_bad_input(L, n):
    with pytest.raises(ValueError):
        Grid(L, n)


def test_default_width_kills_gaussian_tail():
    L = default_half_width(1.0)
    assert math.exp(-L ** 2 / 4.0) < 1e-12
    assert default_half_width(1.0, 4.0) > L


def test_boundary_pair_step_and_delta():
    b = BoundaryPair([0.0, 1.0], [1.0, -0.5])
    assert b.m == 2
    assert b.delta == pytest.approx(math.sqrt(1 + 2.25))
    s = b.step(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_allclose(s, [[0, 1], [0.5, 0.25], [1, -0.5]])


def test_boundary_pair_validation():
    with pytest.raises(ValueError):
        BoundaryPair([0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        BoundaryPair([np.nan], [1.0])


def test_tilde_u_equals_step_outside_width():
    b = BoundaryPair([0.0], [1.0])
    tu = build_tilde_u(b, 1.0)
    np.testing.assert_allclose(tu(np.array([-2.0, 2.0]))[:, 0], [0.0, 1.0])
    assert tu(np.array([0.0]))[0, 0] == pytest.approx(0.5)
    # C^1 join and derivative consistency
    y = np.linspace(-1.5, 1.5, 3001)
    num = np.gradient(tu(y)[:, 0], y)
    np.testing.assert_allclose(num, tu.d1(y)[:, 0], atol=1e-5)
    num2 = np.gradient(tu.d1(y)[:, 0], y)
    np.testing.assert_allclose(num2[5:-5], tu.d2(y)[5:-5, 0], atol=5e-3)


def test_tilde_u_width_scales_with_sqrt_aup():
    tu = build_tilde_u(BoundaryPair([0.0], [1.0]), 4.0)
    assert tu.width == 2.0
    assert tu(np.array([1.9]))[0, 0] < 1.0
    assert tu(np.array([2.0]))[0, 0] == 1.0
    with pytest.raises(ValueError):
        build_tilde_u(BoundaryPair([0.0], [1.0]), 0.0)


def test_certify_constants_identity_and_rotation():
    c = certify_constants(linear_flux_map(np.eye(2)), [(0, 1), (0, 1)])
    assert c.as_tuple() == pytest.approx((1.0, 1.0, 1.0))
    c = certify_constants(linear_flux_map(np.array([[1.0, -0.3], [0.3, 1.0]])), [(0, 1), (0, 1)])
    assert c.a_lo == pytest.approx(1.0)
    assert c.a_up == pytest.approx(math.hypot(1.0, 0.3))
    assert c.delta == pytest.approx(1.0 / 1.09)
    assert c.hypothesis_ok()


def test_certify_constants_singular_indefinite():
    c = certify_constants(lambda u: np.array([[0.0, 1.0], [0.0, 0.0]]), [(0, 1), (0, 1)])
    assert c.delta == -math.inf
    assert not c.hypothesis_ok()
    with pytest.raises(ValueError):
        certify_constants(lambda u: np.eye(1), [(1.0, 0.0)])


def test_hull_box_padding():
    box = hull_box(BoundaryPair([0.0, 2.0], [1.0, 0.0]), pad=0.1)
    d = math.sqrt(5)
    assert box[0] == pytest.approx((-0.1 * d, 1 + 0.1 * d))
    assert box[1] == pytest.approx((-0.1 * d, 2 + 0.1 * d))


def test_profile_shape_checks():
    g = Grid(1.0, 5)
    b = BoundaryPair([0.0], [1.0])
    p = Profile(g, np.linspace(0, 1, 5), np.zeros(5), b)
    assert p.U.shape == (5, 1)
    assert p.boundary_mismatch() == 0.0
    with pytest.raises(ValueError):
        Profile(g, np.zeros(4), np.zeros(4), b)


def test_hypothesis_error_is_value_error():
    assert issubclass(HypothesisError, ValueError)
