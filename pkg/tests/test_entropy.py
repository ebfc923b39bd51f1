import math

import numpy as np
import pytest

from selfsim.core import BoundaryPair, Grid, SolverError, linear_flux_map
from selfsim.entropy import (EntropyDensity, EvolutionState, adjoint_check, decay_rate_fit,
                             discrete_steady_state, eigen_residuals, entropy_inequality_check, evolve,
                             hellinger, hellinger_constant, linear_flux, moment_odes_check, moments,
                             perturbed_start, power_flux, relative_entropy, sigma_check, smooth_bump,
                             stable_dt, step_pde)
from selfsim.scalar_profile import closed_form_oracle


@pytest.mark.parametrize("p", [0.5, 1.0, 1.5, 2.0, 3.0])
def test_entropy_density_basic_properties(p):
    E = EntropyDensity.E(p)
    rho = np.array([0.0, 0.3, 0.999, 1.0, 1.0005, 2.0, 10.0])
    f = E(rho)
    assert f[3] == 0.0 and np.all(f >= 0)
    assert E.d1(np.array([1.0]))[0] == pytest.approx(0.0, abs=1e-12)
    assert E.d2(np.array([1.0]))[0] == pytest.approx(1.0, rel=1e-10)
    # derivatives match finite differences away from the Taylor switch
    r = np.array([0.4, 1.7, 4.0])
    h = 1e-6
    np.testing.assert_allclose(E.d1(r), (E(r + h) - E(r - h)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(E.d2(r), (E.d1(r + h) - E.d1(r - h)) / (2 * h), rtol=1e-6)


def test_entropy_density_continuous_across_taylor_switch():
    E = EntropyDensity.E(1.5)
    r = 1 + np.array([-1.001e-3, -0.999e-3, 0.999e-3, 1.001e-3])
    np.testing.assert_allclose(E(r), 0.5 * (r - 1) ** 2, rtol=2e-3)
    with pytest.raises(ValueError):
        E(np.array([-0.1]))


def test_special_densities():
    # E_1 is the Boltzmann entropy, E_2 is quadratic
    r = np.array([0.5, 2.0, 3.0])
    np.testing.assert_allclose(EntropyDensity.E(1)(r), r * np.log(r) - r + 1, rtol=1e-12)
    np.testing.assert_allclose(EntropyDensity.E(2)(r), 0.5 * (r - 1) ** 2, rtol=1e-12)
    phi = EntropyDensity.phi_m(3)
    assert (phi.p, phi.q) == (2, -1)


def test_entropy_inequalities_hold():
    assert entropy_inequality_check(EntropyDensity.phi_pq(0.5, -1.0), "CA") <= 1 + 1e-9
    for m in (1.5, 2.0, 3.0):
        assert entropy_inequality_check(EntropyDensity.phi_m(m), ("pme", m)) <= 1 + 1e-9
    # a mismatched density violates the pme inequality
    assert entropy_inequality_check(EntropyDensity.E(1.0), ("pme", 3.0)) > 1.01


def test_functionals_and_hellinger_constant():
    y = np.linspace(-5, 5, 1001)
    U = 1 + 0.5 * np.tanh(y)
    phi = EntropyDensity.E(1.0)
    assert relative_entropy(U, U, phi, y) == 0.0
    u = U * (1 + 0.1 * smooth_bump(y))
    assert relative_entropy(u, U, phi, y) > 0
    c = hellinger_constant(phi)
    assert hellinger(u, U, y) <= c * relative_entropy(u, U, phi, y) + 1e-15
    with pytest.raises(ValueError):
        relative_entropy(u, U - 2, phi, y)


def test_decay_rate_fit_recovers_exponent():
    t = np.linspace(0, 5, 50)
    fit = decay_rate_fit(t, 3 * np.exp(-0.7 * t))
    assert fit.Lambda == pytest.approx(0.7) and fit.residual < 1e-12
    with pytest.raises(ValueError):
        decay_rate_fit(t[:5], np.exp(-t[:5]))


def test_sigma_check_pme():
    from selfsim.scalar_profile import preset_diffusivity, solve_scalar, ScalarSolveConfig
    D = preset_diffusivity("pme", 1.0, 1.2, m=2)
    prof, _ = solve_scalar(D, BoundaryPair([1.0], [1.2]), ScalarSolveConfig(grid=Grid(8.0, 401)))
    rep = sigma_check(prof, ("pme", 2))
    assert rep.hypothesis_ok and rep.Sigma < rep.explicit_bound
    assert rep.Lambda_predicted == pytest.approx(0.5 * (1 - 2 * rep.Sigma))
    lip = sigma_check(prof, ("lipschitz", 2.4, 2.0))
    assert lip.threshold == pytest.approx(2.0 / 2.4 ** 2)
    with pytest.raises(ValueError):
        sigma_check(prof, ("bogus",))


def test_linearized_operator_adjoint_and_eigenfunctions():
    prof = closed_form_oracle("linear", Grid(11.0, 1001))
    y = prof.y
    v, w = smooth_bump(y, 0.5, 3.0), smooth_bump(y, -0.5, 3.0)
    assert adjoint_check(prof, linear_flux(1.0), v, w) < 1e-4
    r1, r2 = eigen_residuals(prof, linear_flux(1.0))
    assert r1 < 1e-4 and r2 < 2e-4
    const = closed_form_oracle("linear", Grid(5.0, 101), U_minus=1.0, U_plus=1.0)
    assert all(math.isnan(r) for r in eigen_residuals(const, linear_flux(1.0)))


def test_step_pde_keeps_steady_state_and_boundary():
    g = Grid(10.0, 201)
    U0 = closed_form_oracle("linear", Grid(10.0, 201), U_minus=1.0, U_plus=2.0).U[:, 0]
    Ud = discrete_steady_state(g, linear_flux(1.0), U0)
    s = step_pde(EvolutionState(g, Ud, boundary=BoundaryPair([1.0], [2.0])), linear_flux(1.0))
    assert np.abs(s.u - Ud).max() < 1e-11
    assert s.u[0] == 1.0 and s.u[-1] == 2.0
    assert s.tau == pytest.approx(stable_dt(g, 1.0))


def test_stability_guard():
    g = Grid(5.0, 101)
    s = EvolutionState(g, np.ones(101), u_bound=1.0)
    s.u[50] = 5.0
    with pytest.raises(SolverError):
        step_pde(s, linear_flux(1.0), dt=1e-3)


def test_vector_step_reduces_to_scalar():
    g = Grid(5.0, 101)
    u = 1 + 0.3 * smooth_bump(g.y)
    a = step_pde(EvolutionState(g, u), linear_flux(1.0), dt=1e-3)
    b = step_pde(EvolutionState(g, np.stack([u, u], axis=1)), linear_flux_map(np.eye(2)), dt=1e-3)
    np.testing.assert_allclose(b.u[:, 0], a.u, atol=1e-13)
    np.testing.assert_allclose(b.u[:, 1], a.u, atol=1e-13)


def test_evolution_moments_and_entropy_decay(tmp_path):
    g = Grid(8.0, 201)
    A = power_flux(2)
    b = BoundaryPair([1.0], [1.2])
    U0 = 1.0 + 0.2 * 0.5 * (1 + np.tanh(g.y))
    Ud = discrete_steady_state(g, A, U0)
    start = EvolutionState(g, perturbed_start(Ud, g.y, 0.2), 0.0, b)
    csv_path = tmp_path / "traj.csv"
    traj = evolve(start, A, 2.0, Ud, EntropyDensity.phi_m(2), record_dt=0.05, csv_path=csv_path)
    assert np.all(np.diff(traj.H) <= 1e-15)
    assert traj.H[-1] < 0.2 * traj.H[0]
    chk = moment_odes_check(traj, A)
    assert chk["moment0_residual"] < 0.05 * chk["moment0_scale"]
    assert chk["moment1_residual"] < 0.05 * chk["moment1_scale"] + 0.05 * chk["moment0_scale"]
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "tau,H_phi,hellinger,moment0,moment1"
    assert len(lines) == len(traj.tau) + 1
    m0, m1 = moments(traj.states[-1], g.y, b)
    assert float(np.sum(m0)) == pytest.approx(traj.moment0[-1].sum())
