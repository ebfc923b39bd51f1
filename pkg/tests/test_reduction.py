import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from selfsim.core import Grid, certify_constants
from selfsim.reduction import (ReactionNetwork, build_Q, dpsi_general, figure_boundary, lagrange_multiplier,
                               lift_profile, make_reduction, monotonicity_lemma_check, psi_general,
                               psi_three_species, psi_two_species, reduced_flux_map, three_species_network,
                               two_reactions_network, two_species_network)
from selfsim.vector_profile import VectorSolveConfig, solve_vector

NETWORKS = [three_species_network(), two_reactions_network(), two_species_network(1, 2),
            two_species_network(2, 3)]


def test_Q_normal_forms():
    np.testing.assert_array_equal(build_Q(three_species_network()), [[1, 0, 1], [0, 1, 1]])
    np.testing.assert_array_equal(build_Q(two_reactions_network()), [[1, 2, 2]])
    np.testing.assert_array_equal(build_Q(two_species_network(2, 4)), [[1, 2]])
    for net in NETWORKS:
        assert np.abs(build_Q(net) @ net.stoich.T).max() == 0


def test_network_validation():
    with pytest.raises(ValueError):
        ReactionNetwork([[1, 0]], [[0, 1, 0]])
    with pytest.raises(ValueError):
        ReactionNetwork([[1, 0]], [[0, 1]], rates=[-1.0])
    with pytest.raises(ValueError):
        ReactionNetwork([[1]], [[0]])
    np.testing.assert_array_equal(build_Q(ReactionNetwork.empty(2)), np.eye(2))


@pytest.mark.parametrize("net", NETWORKS, ids=lambda n: str(n.stoich.tolist()))
def test_psi_is_right_inverse_on_equilibria(net):
    red = make_reduction(net)
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 10, (200, red.Q.shape[0]))
    c = red.psi(u)
    assert np.abs(c @ red.Q.T - u).max() < 1e-10
    assert np.abs(net.R(c)).max() < 1e-10
    assert np.all(c >= 0)
    np.testing.assert_allclose(c, psi_general(net, u, red.Q), atol=1e-10)


@pytest.mark.parametrize("net", NETWORKS, ids=lambda n: str(n.stoich.tolist()))
def test_dpsi_matches_finite_differences(net):
    red = make_reduction(net)
    u = np.full(red.Q.shape[0], 1.7) + np.arange(red.Q.shape[0])
    J = red.dpsi(u)
    h = 1e-6
    for k in range(u.size):
        e = np.zeros_like(u)
        e[k] = h
        fd = (red.psi(u + e) - red.psi(u - e)) / (2 * h)
        np.testing.assert_allclose(J[..., k], fd, atol=1e-7)
    np.testing.assert_allclose(J, dpsi_general(net, u, red.Q), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1e3), st.floats(0, 1e3))
def test_three_species_closed_form_is_stable(u1, u2):
    c = psi_three_species(np.array([u1, u2]))
    assert np.all(np.isfinite(c)) and np.all(c >= 0)
    assert c[0] * c[1] == pytest.approx(c[2], rel=1e-9, abs=1e-12)
    assert c[0] + c[2] == pytest.approx(u1, rel=1e-10, abs=1e-12)


def test_two_species_special_values():
    np.testing.assert_allclose(psi_two_species(1, 1, np.array([4.0])), [[2.0, 2.0]])
    c = psi_two_species(1, 2, np.array([3.0]))
    # a = 1 solves a + 2 a^2 = 3
    np.testing.assert_allclose(c, [[1.0, 1.0]], atol=1e-14)
    with pytest.raises(ValueError):
        psi_two_species(1, 2, np.array([-1.0]))


def test_psi_general_clips_zero_coordinates():
    net = three_species_network()
    c, flags = psi_general(net, np.array([0.0, 2.0]), return_flags=True)
    np.testing.assert_allclose(c, [0.0, 2.0, 0.0], atol=1e-14)
    assert flags["clipped"]


def test_lemma_matches_sampled_monotonicity():
    net = three_species_network()
    red = make_reduction(net)
    for d in [(2, 2, 10), (1, 1, 1), (6, 6, 1), (0.1, 1, 1), (5.5, 0.5, 1)]:
        c = certify_constants(reduced_flux_map(net, d, red), [(0.0, 1e4), (0.0, 1e4)])
        assert monotonicity_lemma_check(*d) == (c.a_lo > 0)
    with pytest.raises(ValueError):
        monotonicity_lemma_check(0, 1, 1)


def test_reduced_flux_map_validation():
    with pytest.raises(ValueError):
        reduced_flux_map(three_species_network(), (1.0, 1.0))
    with pytest.raises(ValueError):
        reduced_flux_map(three_species_network(), (1.0, -1.0, 1.0))


def test_figure_case_lift():
    net = three_species_network()
    red = make_reduction(net)
    d = (2.0, 2.0, 10.0)
    b, (cm, cp) = figure_boundary()
    prof = solve_vector(reduced_flux_map(net, d, red), b, VectorSolveConfig(grid=Grid(20.0, 801)))
    C = lift_profile(prof, red)
    assert C.feasible
    np.testing.assert_allclose(C.C[0], cm, atol=1e-3)
    np.testing.assert_allclose(C.C[-1], cp, atol=1e-3)
    np.testing.assert_allclose(C.C[:, 0], C.C[::-1, 1], atol=1e-10)
    assert np.argmax(C.C[:, 2]) == C.grid.mid
    lam = lagrange_multiplier(C, d, net)
    assert lam["off_residual"] < 1e-2
    assert lam["lam"].shape == (801, 1)
