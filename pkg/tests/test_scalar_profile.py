import math

import numpy as np
import pytest

from selfsim.core import BoundaryPair, Grid, ScalarDiffusivity
from selfsim.scalar_profile import (ScalarSolveConfig, closed_form_oracle, flux_mass, lp_derivative_check,
                                    preset_diffusivity, q0_quadrature_bracket, q0_u0_brackets, solve_scalar,
                                    verify_gaussian_bounds)


@pytest.fixture(scope="module")
def linear_solution():
    D = preset_diffusivity("constant", 0.0, 1.0, D=1.0)
    return D, *solve_scalar(D, BoundaryPair([0.0], [1.0]), ScalarSolveConfig(grid=Grid(12.0, 801)))


def test_linear_matches_error_function(linear_solution):
    D, prof, rep = linear_solution
    ref = closed_form_oracle("linear", prof.grid)
    assert np.abs(prof.U - ref.U).max() < 1e-8
    assert rep.Q0 == pytest.approx(1 / math.sqrt(4 * math.pi), abs=1e-8)
    assert rep.gaussian_bound_ok
    assert prof.boundary_mismatch() < 1e-10


def test_profile_is_monotone_and_mass_matches_jump(linear_solution):
    _, prof, _ = linear_solution
    assert np.all(np.diff(prof.U[:, 0]) >= -1e-14)
    # int Q = A(U_+) - A(U_-)
    assert flux_mass(prof) == pytest.approx(1.0, abs=1e-8)


def test_gaussian_bounds_on_linear(linear_solution):
    D, prof, _ = linear_solution
    g = verify_gaussian_bounds(prof, D.D_sup)
    assert g["ok"] and g["worst"] <= 1.0 + 1e-6


def test_constant_data_gives_constant_profile():
    D = preset_diffusivity("constant", 0.3, 0.3)
    prof, rep = solve_scalar(D, BoundaryPair([0.3], [0.3]), ScalarSolveConfig(grid=Grid(5.0, 101)))
    np.testing.assert_allclose(prof.U, 0.3)
    assert rep.Q0 == 0.0


def test_rejects_decreasing_and_vector_data():
    D = preset_diffusivity("constant")
    with pytest.raises(ValueError):
        solve_scalar(D, BoundaryPair([1.0], [0.0]))
    with pytest.raises(ValueError):
        solve_scalar(D, BoundaryPair([0.0, 0.0], [1.0, 1.0]))


def test_brackets_contain_solution():
    D = ScalarDiffusivity.on_interval(lambda u: 1 + 0.5 * np.sin(3 * u), 0.0, 1.0)
    b = BoundaryPair([0.0], [1.0])
    prof, rep = solve_scalar(D, b, ScalarSolveConfig(grid=Grid(10.0, 801)))
    (ua, ub), (qa, qb) = q0_u0_brackets(D.D_star, D.D_sup, b)
    assert ua <= rep.U0 <= ub and qa <= rep.Q0 <= qb
    ql, qh = q0_quadrature_bracket(D.D, b, rep.U0)
    assert ql * 0.99 <= rep.Q0 ** 2 <= qh * 1.01


def test_degenerate_example_I():
    D = preset_diffusivity("degen_I")
    prof, rep = solve_scalar(D, BoundaryPair([-1.0], [1.0]), ScalarSolveConfig(grid=Grid(3.0, 601)))
    ref = closed_form_oracle("degen_I", prof.grid)
    assert np.abs(prof.U - ref.U).max() < 1e-3
    assert rep.support[0] == pytest.approx(-1.0, abs=0.02)
    assert rep.support[1] == pytest.approx(1.0, abs=0.02)


def test_pme_free_boundary_is_finite():
    D = preset_diffusivity("pme", 0.0, 1.0, m=2)
    prof, rep = solve_scalar(D, BoundaryPair([0.0], [1.0]), ScalarSolveConfig(grid=Grid(6.0, 601)))
    left = rep.support[0]
    assert math.isfinite(left) and rep.y_minus_star <= left <= 0.0
    assert np.abs(prof.U[prof.y <= left]).max() <= 1e-8
    assert math.isinf(rep.support[1])


def test_lp_derivative_estimate(linear_solution):
    D, prof, _ = linear_solution
    out = lp_derivative_check(prof, D, 2.0, 0.5)
    assert not out["skipped"] and out["holds"]
    with pytest.raises(ValueError):
        lp_derivative_check(prof, D, 2.0, 1.0)


def test_oracles_and_presets():
    g = Grid(2.0, 201)
    for ex in ("degen_I", "degen_II", "degen_III"):
        p = closed_form_oracle(ex, g)
        assert p.U[0, 0] == pytest.approx(-1.0) and p.U[-1, 0] == pytest.approx(1.0)
        assert np.all(np.diff(p.U[:, 0]) >= 0)
    assert isinstance(closed_form_oracle("gl_phase"), ScalarDiffusivity)
    with pytest.raises(ValueError):
        closed_form_oracle("nope")
    with pytest.raises(ValueError):
        preset_diffusivity("pme", -1.0, 1.0)
    with pytest.raises(ValueError):
        preset_diffusivity("gl_phase", -0.9, 0.0)


def test_degen_III_closed_form_satisfies_profile_equation():
    # (D(U) U')' + (y/2) U' = 0 on |y| < 1
    D = preset_diffusivity("degen_III")
    errs = []
    for n in (2001, 4001):
        g = Grid(1.0, n)
        y, U = g.y, closed_form_oracle("degen_III", g).U[:, 0]
        flux = D.D(U) * np.gradient(U, y)
        res = np.gradient(flux, y) + 0.5 * y * np.gradient(U, y)
        errs.append(np.abs(res[np.abs(y) < 0.9]).max())
    # finite-difference residual, second order in h
    assert errs[1] < 1e-4 and errs[0] / errs[1] > 3.5


def test_config_validation():
    with pytest.raises(ValueError):
        ScalarSolveConfig(eps_schedule=(1e-2, 1e-1))
    with pytest.raises(ValueError):
        ScalarSolveConfig(shoot_tol=0)
