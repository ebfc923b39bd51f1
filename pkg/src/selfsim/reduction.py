"""Reduction of detailed-balance reaction-diffusion systems to conserved quantities.

For mass-action reactions alpha^r <-> beta^r with equilibrium w, the slow
variables are u = Q c with ker Q = span{beta^r - alpha^r}. The equilibrium
manifold is parametrized by Psi(u), the minimizer of the relative Boltzmann
entropy sum_i w_i lambda_B(c_i / w_i) subject to Q c = u, and the reduced
diffusion system has flux map A(u) = Q D Psi(u).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
import sympy

from .core import BoundaryPair, Grid, Profile, SolverError, VectorFluxMap

NEG_TOL = 1e-14


@dataclass(frozen=True)
class ReactionNetwork:
    """Reactions alpha^r -> beta^r (rows of ``alpha``/``beta``) with rates and equilibrium w."""

    alpha: np.ndarray
    beta: np.ndarray
    rates: np.ndarray
    w: np.ndarray
    names: tuple = ()

    def __init__(self, alpha, beta, rates=None, w=None, names=()):
        alpha = np.atleast_2d(np.asarray(alpha, dtype=int))
        beta = np.atleast_2d(np.asarray(beta, dtype=int))
        if alpha.shape != beta.shape:
            raise ValueError("alpha and beta must have equal shapes")
        if np.any(alpha < 0) or np.any(beta < 0):
            raise ValueError("stoichiometric coefficients must be nonnegative")
        r, i = alpha.shape
        rates = np.ones(r) if rates is None else np.asarray(rates, dtype=float).reshape(r)
        w = np.ones(i) if w is None else np.asarray(w, dtype=float).reshape(i)
        if np.any(rates <= 0):
            raise ValueError("rates must be positive")
        if np.any(w <= 0):
            raise ValueError("equilibrium w must be positive")
        if alpha.size and np.linalg.matrix_rank(beta - alpha) >= i:
            raise ValueError("stoichiometric subspace is full-dimensional; nothing to reduce")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "names", tuple(names))

    @classmethod
    def empty(cls, species: int, w=None):
        z = np.zeros((0, species), dtype=int)
        return cls(z, z, np.zeros(0) + 1.0, w)

    @property
    def species(self) -> int:
        return self.alpha.shape[1]

    @property
    def stoich(self) -> np.ndarray:
        """Reaction vectors beta^r - alpha^r as rows."""
        return self.beta - self.alpha

    def R(self, c) -> np.ndarray:
        """Mass-action rate sum_r k_r (c^a/w^a - c^b/w^b)(b - a); c has shape (..., i)."""
        c = np.asarray(c, dtype=float)
        out = np.zeros_like(c)
        for a, b, k in zip(self.alpha, self.beta, self.rates):
            fa = np.prod((c / self.w) ** a, axis=-1)
            fb = np.prod((c / self.w) ** b, axis=-1)
            out = out + k * (fa - fb)[..., None] * (b - a)
        return out


def two_species_network(beta: int, gamma: int, rate: float = 1.0) -> ReactionNetwork:
    """gamma X1 <-> beta X2."""
    return ReactionNetwork([[gamma, 0]], [[0, beta]], [rate])


def three_species_network(rate: float = 1.0) -> ReactionNetwork:
    """X3 <-> X1 + X2."""
    return ReactionNetwork([[0, 0, 1]], [[1, 1, 0]], [rate])


def two_reactions_network(k1: float = 1.0, k2: float = 1.0) -> ReactionNetwork:
    """2 X1 <-> X2 and X2 <-> X3."""
    return ReactionNetwork([[2, 0, 0], [0, 1, 0]], [[0, 1, 0], [0, 0, 1]], [k1, k2])


def _integer_row(row):
    fr = [Fraction(int(x.p), int(x.q)) for x in row]
    den = math.lcm(*[f.denominator for f in fr]) if fr else 1
    ints = [int(f * den) for f in fr]
    g = math.gcd(*ints) or 1
    return [v // g for v in ints]


def build_Q(network: ReactionNetwork) -> np.ndarray:
    """Integer matrix whose rows span the orthogonal complement of the reaction vectors.

    The exact rational null space is put in reduced row echelon form, so the
    leading entries form an identity block, and each row is scaled to coprime
    integers.
    """
    i = network.species
    if network.stoich.shape[0] == 0:
        return np.eye(i, dtype=int)
    S = sympy.Matrix(network.stoich.tolist())
    basis = S.nullspace()
    if not basis:
        raise ValueError("stoichiometric subspace is full-dimensional")
    N = sympy.Matrix.hstack(*basis).T
    R, _ = N.rref()
    rows = [_integer_row(list(R.row(k))) for k in range(R.rows)]
    Q = np.array(rows, dtype=int)
    assert np.all(Q @ network.stoich.T == 0)
    return Q


# ---------------------------------------------------------------- explicit Psi

def _check_nonneg(u, name="u"):
    u = np.asarray(u, dtype=float)
    if np.any(u < -NEG_TOL):
        raise ValueError(f"{name} must be nonnegative")
    return np.maximum(u, 0.0)


def psi_three_species(u) -> np.ndarray:
    """Equilibrium c with c1 c2 = c3 and (c1 + c3, c2 + c3) = u; u has shape (..., 2).

    Written in cancellation-free form: c3 = 2 u1 u2 / (1 + u1 + u2 + s) and
    c1 = 2 u1 / (s + 1 + u2 - u1), with s = sqrt((1 + u1 + u2)^2 - 4 u1 u2).
    """
    u = _check_nonneg(u)
    u1, u2 = u[..., 0], u[..., 1]
    s = np.sqrt((u1 - u2) ** 2 + 2 * (u1 + u2) + 1.0)
    c1 = 2 * u1 / (s + 1 + u2 - u1)
    c2 = 2 * u2 / (s + 1 + u1 - u2)
    c3 = 2 * u1 * u2 / (1 + u1 + u2 + s)
    return np.stack([c1, c2, c3], axis=-1)


def dpsi_three_species(u) -> np.ndarray:
    u = _check_nonneg(u)
    u1, u2 = u[..., 0], u[..., 1]
    s = np.sqrt((u1 - u2) ** 2 + 2 * (u1 + u2) + 1.0)
    s1 = (1 + u1 - u2) / s
    s2 = (1 + u2 - u1) / s
    J = np.empty(u.shape[:-1] + (3, 2))
    J[..., 0, 0], J[..., 0, 1] = 0.5 * (1 + s1), 0.5 * (s2 - 1)
    J[..., 1, 0], J[..., 1, 1] = 0.5 * (s1 - 1), 0.5 * (1 + s2)
    J[..., 2, 0], J[..., 2, 1] = 0.5 * (1 - s1), 0.5 * (1 - s2)
    return J


def psi_two_reactions(u) -> np.ndarray:
    """c = (sigma, sigma^2, sigma^2) with sigma + 4 sigma^2 = u."""
    u = _check_nonneg(u)
    u = u[..., 0] if u.ndim and u.shape[-1:] == (1,) else u
    sig = 2 * u / (np.sqrt(1 + 16 * u) + 1)
    return np.stack([sig, sig * sig, sig * sig], axis=-1)


def dpsi_two_reactions(u) -> np.ndarray:
    u = _check_nonneg(u)
    u = u[..., 0] if u.ndim and u.shape[-1:] == (1,) else u
    sig = 2 * u / (np.sqrt(1 + 16 * u) + 1)
    ds = 1 / np.sqrt(1 + 16 * u)
    return np.stack([ds, 2 * sig * ds, 2 * sig * ds], axis=-1)[..., None]


def psi_two_species(beta: float, gamma: float, u):
    """(c1, c2) with beta c1 + gamma c2 = u and c1^gamma = c2^beta.

    Parametrizes c = (a^beta, a^gamma) and finds a >= 0 from the increasing
    equation beta a^beta + gamma a^gamma = u by bisection and a Newton polish.
    """
    if beta <= 0 or gamma <= 0:
        raise ValueError("beta and gamma must be positive")
    u = _check_nonneg(u)
    if beta == gamma:
        c = u / (beta + gamma)
        return np.stack([c, c], axis=-1)
    a = _two_species_param(beta, gamma, u)
    return np.stack([a ** beta, a ** gamma], axis=-1)


def _two_species_param(beta, gamma, u):
    u = np.asarray(u, dtype=float)
    f = lambda a: beta * a ** beta + gamma * a ** gamma - u
    lo = np.zeros_like(u)
    hi = np.maximum((u / min(beta, gamma)) ** (1 / min(beta, gamma)),
                    (u / min(beta, gamma)) ** (1 / max(beta, gamma))) + 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        pos = f(mid) > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    a = 0.5 * (lo + hi)
    for _ in range(3):
        df = beta * beta * a ** (beta - 1) + gamma * gamma * a ** (gamma - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where((a > 0) & (df > 0), f(a) / df, 0.0)
        a = np.clip(a - step, lo, hi)
    return a


def dpsi_two_species(beta, gamma, u):
    u = _check_nonneg(u)
    if beta == gamma:
        d = np.full(u.shape, 1.0 / (beta + gamma))
        return np.stack([d, d], axis=-1)[..., None]
    a = _two_species_param(beta, gamma, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        da = 1.0 / (beta * beta * a ** (beta - 1) + gamma * gamma * a ** (gamma - 1))
        d1 = beta * a ** (beta - 1) * da
        d2 = gamma * a ** (gamma - 1) * da
    return np.stack([d1, d2], axis=-1)[..., None]


# ---------------------------------------------------------------- general Psi

def psi_general(network: ReactionNetwork, u, Q: Optional[np.ndarray] = None,
                tol: float = 1e-13, max_iter: int = 100, return_flags: bool = False):
    """Entropy minimizer subject to Q c = u, via Newton on the dual variable mu.

    Stationarity gives c = w exp(Q^T mu); mu solves Q (w exp(Q^T mu)) = u.
    Coordinates u_j = 0 with nonnegative Q force the species in row j to
    vanish; those are removed before the solve and reported in the flags.
    """
    Q = build_Q(network) if Q is None else np.asarray(Q)
    u = np.asarray(u, dtype=float)
    batch = u.reshape(-1, Q.shape[0])
    out = np.empty((batch.shape[0], Q.shape[1]))
    clipped = np.zeros(batch.shape[0], dtype=bool)
    for k, uk in enumerate(batch):
        out[k], clipped[k] = _psi_dual(Q.astype(float), network.w, uk, tol, max_iter)
    c = out.reshape(u.shape[:-1] + (Q.shape[1],))
    if return_flags:
        return c, {"clipped": clipped.reshape(u.shape[:-1])}
    return c


def _psi_dual(Q, w, u, tol, max_iter):
    if np.any(u < -NEG_TOL):
        raise ValueError("u must lie in Q [0, inf)^i")
    u = np.maximum(u, 0.0)
    active_rows = np.ones(Q.shape[0], dtype=bool)
    active_species = np.ones(Q.shape[1], dtype=bool)
    clipped = False
    if np.all(Q >= 0):
        zero = u <= NEG_TOL
        if np.any(zero):
            clipped = True
            active_rows &= ~zero
            active_species &= ~np.any(Q[zero] > 0, axis=0)
    c = np.zeros(Q.shape[1])
    if not active_rows.any() or not active_species.any():
        return c, clipped
    Qa = Q[np.ix_(active_rows, active_species)]
    wa, ua = w[active_species], u[active_rows]
    mu = np.zeros(Qa.shape[0])
    scale = 1.0 + np.abs(ua).max()

    def phi(m):
        return float(np.sum(wa * np.exp(Qa.T @ m)) - m @ ua)

    for _ in range(max_iter):
        ca = wa * np.exp(Qa.T @ mu)
        F = Qa @ ca - ua
        if np.abs(F).max() <= tol * scale:
            break
        J = (Qa * ca) @ Qa.T
        dmu = np.linalg.solve(J, -F)
        t, f0 = 1.0, phi(mu)
        slope = float(F @ dmu)
        while phi(mu + t * dmu) > f0 + 1e-4 * t * slope + 1e-14 * abs(f0):
            t *= 0.5
            if t < 1e-12:
                raise SolverError("dual Newton line search failed; u may lie outside Q[0,inf)^i")
        mu = mu + t * dmu
        if np.abs(t * dmu).max() <= 1e-15 * (1 + np.abs(mu).max()) and np.abs(F).max() <= 1e-10 * scale:
            break
    else:
        raise SolverError("dual Newton did not converge")
    c[active_species] = wa * np.exp(Qa.T @ mu)
    return c, clipped


def dpsi_general(network: ReactionNetwork, u, Q=None) -> np.ndarray:
    """D Psi = diag(c) Q^T (Q diag(c) Q^T)^{-1}, from implicit differentiation."""
    Q = build_Q(network) if Q is None else np.asarray(Q, dtype=float)
    c = psi_general(network, u, Q)
    cb = c.reshape(-1, Q.shape[1])
    out = np.empty((cb.shape[0], Q.shape[1], Q.shape[0]))
    for k, ck in enumerate(cb):
        M = (Q * ck) @ Q.T
        out[k] = (ck[:, None] * Q.T) @ np.linalg.pinv(M)
    return out.reshape(c.shape[:-1] + (Q.shape[1], Q.shape[0]))


# ---------------------------------------------------------------- reduction maps

@dataclass(frozen=True)
class ReductionMap:
    Q: np.ndarray
    psi: Callable
    dpsi: Callable
    label: str
    network: ReactionNetwork = field(repr=False, default=None)


def _is(network, other):
    return (network.alpha.shape == other.alpha.shape and np.array_equal(network.alpha, other.alpha)
            and np.array_equal(network.beta, other.beta) and np.allclose(network.w, 1.0))


def make_reduction(network: ReactionNetwork, force_general: bool = False) -> ReductionMap:
    """Closed-form Psi when the network (with w = 1) is one of the explicit cases."""
    Q = build_Q(network)
    if not force_general:
        if _is(network, three_species_network()):
            return ReductionMap(Q, psi_three_species, dpsi_three_species, "three_species", network)
        if _is(network, two_reactions_network()):
            return ReductionMap(Q, psi_two_reactions, dpsi_two_reactions, "two_reactions", network)
        if network.alpha.shape == (1, 2) and np.allclose(network.w, 1.0):
            g, b = int(network.alpha[0, 0]), int(network.beta[0, 1])
            if network.alpha[0, 1] == 0 and network.beta[0, 0] == 0 and g > 0 and b > 0:
                q = np.array([[b, g]]) // math.gcd(b, g)
                scale = b / q[0, 0]
                # Q may be (beta, gamma) / gcd; Psi is written for u = beta c1 + gamma c2
                return ReductionMap(
                    q, lambda u: psi_two_species(b, g, np.asarray(u, float)[..., 0] * scale),
                    lambda u: scale * dpsi_two_species(b, g, np.asarray(u, float)[..., 0] * scale),
                    f"two_species({b},{g})", network)
    return ReductionMap(Q, lambda u: psi_general(network, u, Q),
                        lambda u: dpsi_general(network, u, Q), "general", network)


def reduced_flux_map(network: ReactionNetwork, D, reduction: Optional[ReductionMap] = None) -> VectorFluxMap:
    """A(u) = Q D Psi(u) with Jacobian Q D DPsi(u); D is a diagonal (vector or matrix)."""
    red = reduction or make_reduction(network)
    D = np.asarray(D, dtype=float)
    d = np.diag(D) if D.ndim == 2 else D
    if d.shape != (red.Q.shape[1],) or np.any(d <= 0):
        raise ValueError("D must be a positive diagonal with one entry per species")
    QD = red.Q * d

    def A(u):
        return red.psi(u) @ QD.T

    def jac(u):
        return np.einsum("ij,...jk->...ik", QD, red.dpsi(u))

    return VectorFluxMap(A, jac, name=f"reduced[{red.label}]")


def monotonicity_lemma_check(d1: float, d2: float, d3: float) -> bool:
    """Strict monotonicity region (3 - sqrt 8) d3 < d_j < (3 + sqrt 8) d3 for j = 1, 2."""
    if min(d1, d2, d3) <= 0:
        raise ValueError("diffusivities must be positive")
    lo, hi = (3 - math.sqrt(8)) * d3, (3 + math.sqrt(8)) * d3
    return bool(lo < d1 < hi and lo < d2 < hi)


# ---------------------------------------------------------------- lifted profiles

@dataclass
class LiftedProfile:
    grid: Grid
    C: np.ndarray
    boundary: BoundaryPair
    infeasible_nodes: np.ndarray
    label: str = ""

    @property
    def feasible(self) -> bool:
        return not self.infeasible_nodes.any()

    @property
    def y(self):
        return self.grid.y


def lift_profile(profile: Profile, reduction: ReductionMap) -> LiftedProfile:
    """C(y) = Psi(U(y)); nodes with a negative U coordinate are flagged and clipped."""
    U = profile.U
    bad = np.any(U < -NEG_TOL, axis=1)
    C = reduction.psi(np.maximum(U, 0.0))
    b = profile.boundary
    cb = BoundaryPair(reduction.psi(np.maximum(b.U_minus, 0.0)), reduction.psi(np.maximum(b.U_plus, 0.0)))
    return LiftedProfile(profile.grid, C, cb, bad, reduction.label)


def _second_diff(C, h):
    out = np.empty_like(C)
    out[1:-1] = (C[2:] - 2 * C[1:-1] + C[:-2]) / h ** 2
    out[0] = (2 * C[0] - 5 * C[1] + 4 * C[2] - C[3]) / h ** 2
    out[-1] = (2 * C[-1] - 5 * C[-2] + 4 * C[-3] - C[-4]) / h ** 2
    return out


def lagrange_multiplier(C_profile: LiftedProfile, D, network: ReactionNetwork):
    """Coefficients lam(y) with D C'' + (y/2) C' + sum_r lam_r (beta^r - alpha^r) = 0.

    Uses an independent subset of the reaction vectors and least squares per
    node. Returns a dict with ``lam`` (n, gamma_*), the off-subspace residual
    and, for one reaction between two species, both scalar expressions for
    the multiplier and their mismatch.
    """
    D = np.asarray(D, dtype=float)
    d = np.diag(D) if D.ndim == 2 else D
    C = C_profile.C
    y = C_profile.y
    h = C_profile.grid.h
    Cp = np.gradient(C, h, axis=0, edge_order=2)
    r = d * _second_diff(C, h) + 0.5 * y[:, None] * Cp
    S = network.stoich
    if S.shape[0] == 0:
        return {"lam": np.zeros((len(y), 0)), "off_residual": float(np.abs(r).max()), "r": r}
    _, piv = sympy.Matrix(S.T.tolist()).rref()
    G = S[list(piv)].T.astype(float)  # columns span Gamma
    lam, *_ = np.linalg.lstsq(G, -r.T, rcond=None)
    lam = lam.T
    off = r + lam @ G.T
    out = {"lam": lam, "off_residual": float(np.abs(off[1:-1]).max()), "r": r, "basis": G}
    if C.shape[1] == 2 and S.shape[0] == 1:
        g, b = -S[0, 0], S[0, 1]
        lam1 = -r[:, 0] / g
        lam2 = r[:, 1] / b
        out.update({"Lambda_1": lam1, "Lambda_2": lam2,
                    "Lambda_mismatch": float(np.abs(lam1 - lam2)[1:-1].max())})
    return out


def figure_boundary():
    """Limits of the non-monotone three-species example, d = (2, 2, 10).

    C_- = (5.3, 0.3, 5.3 * 0.3) and its mirror C_+; returned as reduced values
    U_+- = Q C_+- together with the concentration limits.
    """
    Q = build_Q(three_species_network())
    c_minus = np.array([5.3, 0.3, 5.3 * 0.3])
    c_plus = c_minus[[1, 0, 2]]
    return BoundaryPair(Q @ c_minus, Q @ c_plus), (c_minus, c_plus)
