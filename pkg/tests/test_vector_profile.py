import math

import numpy as np
import pytest

from selfsim.core import BoundaryPair, Grid, HypothesisError, build_tilde_u, certify_constants, linear_flux_map
from selfsim.vector_profile import (VectorSolveConfig, flux_envelope, g_source, integral_relations,
                                    linear_matrix_profile, solve_vector, verify_theorem_estimates,
                                    verify_weak_residual)

B = BoundaryPair([0.0, 1.0], [1.0, -0.5])
ROT = np.array([[1.0, -0.3], [0.3, 1.0]])


@pytest.fixture(scope="module")
def rot_solution():
    A = linear_flux_map(ROT)
    prof = solve_vector(A, B, VectorSolveConfig(grid=Grid(16.0, 801)))
    return A, prof


def test_matches_linear_oracle(rot_solution):
    A, prof = rot_solution
    ref = linear_matrix_profile(ROT, B, prof.grid)
    assert np.abs(prof.U - ref.U).max() < 2e-4
    assert prof.boundary_mismatch() < 1e-6


def test_linear_oracle_routes_agree():
    g = Grid(20.0, 801)
    for M in (np.diag([1.0, 4.0]), ROT):
        a = linear_matrix_profile(M, B, g)
        b = linear_matrix_profile(M, B, g, method="quadrature")
        assert np.abs(a.U - b.U).max() < 1e-6
        assert np.abs(a.Q - b.Q).max() < 1e-6


def test_identity_oracle_is_componentwise_erf():
    g = Grid(10.0, 201)
    p = linear_matrix_profile(np.eye(2), B, g)
    from scipy.special import erf
    expect = 0.5 * (1 + erf(g.y / 2))
    np.testing.assert_allclose(p.U[:, 0], expect, atol=1e-12)
    np.testing.assert_allclose(p.U[:, 1], 1.0 - 1.5 * expect, atol=1e-12)


def test_integral_relations_and_weak_residual(rot_solution):
    A, prof = rot_solution
    with pytest.warns(UserWarning):
        rel = integral_relations(prof, A)
    assert np.abs(rel.moment0).max() < 1e-6
    assert np.abs(rel.moment1_residual).max() < 1e-6
    assert verify_weak_residual(prof, A) < 1e-3


def test_theorem_estimates(rot_solution):
    A, prof = rot_solution
    c = certify_constants(A, [(-0.2, 1.2), (-0.7, 1.2)])
    est = verify_theorem_estimates(prof, A, c)
    assert est["flux_envelope"] <= 1.02
    assert est["apriori_ratio"] > 0 and math.isfinite(est["uniform_ratio"])
    assert flux_envelope(prof, c.delta) == pytest.approx(est["flux_envelope"])


def test_refuses_non_monotone_map():
    A = linear_flux_map(np.array([[1.0, 3.0], [0.0, -1.0]]))
    with pytest.raises(HypothesisError):
        solve_vector(A, B)


@pytest.mark.filterwarnings("ignore:profile has not decayed")
def test_nonlinear_map_and_random_start_agree():
    from selfsim.core import VectorFluxMap
    A = VectorFluxMap(lambda u: u @ ROT.T + 0.1 * np.tanh(u),
                      lambda u: ROT + 0.1 * np.eye(2) * (1 / np.cosh(u) ** 2)[..., None, :])
    g = Grid(12.0, 401)
    p0 = solve_vector(A, B, VectorSolveConfig(grid=g))
    p1 = solve_vector(A, B, VectorSolveConfig(grid=g, init="random", seed=3))
    assert np.abs(p0.U - p1.U).max() < 1e-8
    assert np.abs(integral_relations(p0, A).moment0).max() < 1e-6


def test_g_source_vanishes_outside_width():
    tu = build_tilde_u(BoundaryPair([0.0], [1.0]), 1.0)
    g = g_source(tu, Grid(3.0, 61))
    y = Grid(3.0, 61).y
    assert np.all(g[np.abs(y) >= 1.0] == 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        VectorSolveConfig(newton_tol=0)
    with pytest.raises(ValueError):
        VectorSolveConfig(init="bogus")
    with pytest.raises(ValueError):
        VectorSolveConfig(eps_schedule=(0.0, 0.1))
