"""Vector profiles A(U)'' + (y/2)U' = 0 through the once-integrated equation

    A(u~ + v')' + (y/2) v' - v/2 + g = 0,    v(-L) = v(L) = 0,

where u~ is the smoothed step and g(y) = int_{-inf}^y (eta/2) u~'(eta) d eta.
The unknown v is discretized at the grid nodes and the system is solved by
damped Newton with a sparse Jacobian, optionally continued in A + eps*I.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import expm, sqrtm
from scipy.sparse.linalg import spsolve
from scipy.special import erf

from .core import (BoundaryPair, ConstantsReport, Grid, HypothesisError, Profile, SolverError,
                   TildeU, VectorFluxMap, build_tilde_u, certify_constants, default_grid,
                   hull_box, trapezoid)

EPS_GEOMETRIC = tuple(10.0 ** -k for k in range(1, 9))


@dataclass(frozen=True)
class VectorSolveConfig:
    """Newton parameters. ``eps_schedule=None`` picks {0} or the geometric schedule."""

    grid: Optional[Grid] = None
    eps_schedule: Optional[Sequence[float]] = None
    newton_tol: float = 1e-10
    newton_max_iter: int = 60
    damping: float = 0.5
    min_step: float = 2.0 ** -20
    init: str = "zero"
    seed: int = 0
    box_pad: float = 0.1

    def __post_init__(self):
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        if self.eps_schedule is not None:
            eps = tuple(float(e) for e in self.eps_schedule)
            if any(e < 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
                raise ValueError("eps_schedule must be strictly decreasing and nonnegative")
            object.__setattr__(self, "eps_schedule", eps)
        if self.init not in ("zero", "random"):
            raise ValueError("init must be 'zero' or 'random'")


def g_source(tilde_u: TildeU, grid: Grid, refine: int = 16) -> np.ndarray:
    """Cumulative trapezoid of (eta/2) u~'(eta) on a refined grid, sampled at the nodes.

    Outside the transition layer |y| >= sqrt(a_up) the integrand's oddness
    makes g vanish; that zero is imposed exactly.
    """
    nf = (grid.n_points - 1) * refine + 1
    yf = np.linspace(-grid.half_width, grid.half_width, nf)
    f = 0.5 * yf[:, None] * tilde_u.d1(yf)
    G = cumulative_trapezoid(f, yf, axis=0, initial=0.0)[::refine]
    G[np.abs(grid.y) >= tilde_u.width] = 0.0
    return G


def _derivative_matrix(n: int, h: float) -> sp.csr_matrix:
    """Centered first derivative with one-sided second-order rows at both ends."""
    main = np.zeros(n)
    up = np.full(n - 1, 0.5 / h)
    lo = np.full(n - 1, -0.5 / h)
    W = sp.diags([lo, main, up], [-1, 0, 1], format="lil")
    W[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    W[n - 1, n - 3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return W.tocsr()


def _interior_difference(n: int, h: float) -> sp.csr_matrix:
    """(a_{i+1} - a_{i-1}) / 2h on interior rows, zero on the boundary rows."""
    up = np.full(n - 1, 0.5 / h)
    lo = np.full(n - 1, -0.5 / h)
    up[0] = 0.0
    lo[-1] = 0.0
    return sp.diags([lo, up], [-1, 1], format="csr")


class _System:
    def __init__(self, A: VectorFluxMap, tilde_u: TildeU, grid: Grid):
        self.A, self.grid = A, grid
        n, m = grid.n_points, tilde_u.boundary.m
        self.n, self.m = n, m
        self.y = grid.y
        self.ut = tilde_u(self.y)
        self.g = g_source(tilde_u, grid)
        I_m = sp.identity(m, format="csr")
        self.W = sp.kron(_derivative_matrix(n, grid.h), I_m, format="csr")
        self.Dc = sp.kron(_interior_difference(n, grid.h), I_m, format="csr")
        interior = np.ones(n)
        interior[[0, -1]] = 0.0
        self.int_mask = np.repeat(interior, m)
        self.Y = sp.diags(np.repeat(0.5 * self.y * interior, m)) @ self.W
        self.half = sp.diags(0.5 * self.int_mask)
        self.bnd = sp.diags(1.0 - self.int_mask)

    def U(self, v):
        return self.ut + (self.W @ v.ravel()).reshape(self.n, self.m)

    def residual(self, v, eps):
        w = (self.W @ v.ravel()).reshape(self.n, self.m)
        a = self.A.A(self.ut + w) + eps * (self.ut + w)
        F = np.empty_like(v)
        F[1:-1] = ((a[2:] - a[:-2]) / (2 * self.grid.h) + 0.5 * self.y[1:-1, None] * w[1:-1]
                   - 0.5 * v[1:-1] + self.g[1:-1])
        F[0] = v[0]
        F[-1] = v[-1]
        return F

    def jacobian(self, v, eps):
        J = np.asarray(self.A.jacobian(self.U(v)), dtype=float) + eps * np.eye(self.m)
        B = sp.block_diag(list(J), format="csr")
        return (self.Dc @ B @ self.W + self.Y - self.half + self.bnd).tocsc()


def _newton(sys: _System, v, eps, cfg: VectorSolveConfig):
    F = sys.residual(v, eps)
    phi = 0.5 * float(np.sum(F * F))
    for it in range(cfg.newton_max_iter + 1):
        if np.abs(F).max() <= cfg.newton_tol:
            return v, it, float(np.abs(F).max())
        if it == cfg.newton_max_iter:
            break
        J = sys.jacobian(v, eps)
        dv = spsolve(J, -F.ravel()).reshape(v.shape)
        if not np.all(np.isfinite(dv)):
            raise SolverError("singular Newton system")
        t = 1.0
        while True:
            vt = v + t * dv
            Ft = sys.residual(vt, eps)
            phit = 0.5 * float(np.sum(Ft * Ft))
            if np.isfinite(phit) and phit <= (1.0 - 2e-4 * t) * phi:
                break
            t *= cfg.damping
            if t < cfg.min_step:
                raise SolverError(f"line search exhausted at eps={eps:g} (|F|={math.sqrt(2 * phi):.3e})")
        v, F, phi = vt, Ft, phit
    raise SolverError(f"Newton did not converge at eps={eps:g} (|F|_inf={np.abs(F).max():.3e})")


def _constants_for(A: VectorFluxMap, boundary: BoundaryPair, pad: float):
    if A.a_lo is not None and A.a_up is not None and A.delta is not None:
        return ConstantsReport(A.a_lo, A.a_up, A.delta, 0, (), sampled=False)
    return certify_constants(A, hull_box(boundary, pad))


def solve_vector(A: VectorFluxMap, boundary: BoundaryPair,
                 config: Optional[VectorSolveConfig] = None) -> Profile:
    """Profile for a monotone flux map, U = u~ + v' with Q the centered difference of A(U).

    Constants missing from ``A`` are certified on the hull of the limits
    (padded by ``box_pad`` * Delta). The solve is refused when a_lo + delta <= 0.
    """
    cfg = config or VectorSolveConfig()
    consts = _constants_for(A, boundary, cfg.box_pad)
    if not consts.a_lo + consts.delta > 0:
        raise HypothesisError(
            f"a_lo + delta = {consts.a_lo:.3e} + {consts.delta:.3e} <= 0 on box {consts.box}")
    if not consts.a_up > 0:
        raise HypothesisError("a_up must be positive")
    grid = cfg.grid or default_grid(0.0, consts.a_up)
    tilde = build_tilde_u(boundary, consts.a_up)
    sys = _System(A, tilde, grid)
    n, m = grid.n_points, boundary.m

    if cfg.eps_schedule is not None:
        schedule, optional_zero = cfg.eps_schedule, False
    elif consts.a_lo > 0:
        schedule, optional_zero = (0.0,), False
    else:
        schedule, optional_zero = EPS_GEOMETRIC, True

    if cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        v = 1e-2 * boundary.delta * rng.standard_normal((n, m))
        v[0] = v[-1] = 0.0
    else:
        v = np.zeros((n, m))
    iters, history = 0, []
    eps = schedule[0]
    prev_U = None
    for eps in schedule:
        v, it, res = _newton(sys, v, eps, cfg)
        iters += it
        U = sys.U(v)
        if prev_U is not None:
            history.append(float(np.abs(U - prev_U).max()))
        prev_U = U
    regularized = eps > 0
    if optional_zero:
        try:
            v0, it, res0 = _newton(sys, v.copy(), 0.0, cfg)
            iters += it
            v, eps, res, regularized = v0, 0.0, res0, False
            history.append(float(np.abs(sys.U(v) - prev_U).max()))
        except SolverError:
            pass
    U = sys.U(v)
    a = A.A(U) + eps * U
    Q = (_derivative_matrix(n, grid.h) @ a)
    flags = {"eps_final": eps, "regularized": regularized, "newton_iterations": iters,
             "residual": res, "continuation_diffs": history,
             "constants": consts.as_tuple(), "tilde_a_up": consts.a_up}
    return Profile(grid, U, Q, boundary, flags=flags)


def linear_matrix_profile(Amat, boundary: BoundaryPair, grid: Optional[Grid] = None,
                          method: str = "auto") -> Profile:
    """Closed-form profile for A(u) = Amat u.

    Each eigenvalue lam contributes (1 + erf(y / (2 sqrt(lam)))) / 2 with the
    principal root. Defective matrices (or ``method='quadrature'``) fall back to
    a refined trapezoid rule for int A^{-1/2} exp(-eta^2 (4A)^{-1}) / sqrt(4 pi).
    """
    Amat = np.atleast_2d(np.asarray(Amat, dtype=float))
    m = Amat.shape[0]
    if Amat.shape != (m, m) or boundary.m != m:
        raise ValueError("matrix and boundary dimensions differ")
    lam, V = np.linalg.eig(Amat)
    if np.any(lam.real <= 0):
        raise HypothesisError("all eigenvalues need positive real part")
    if grid is None:
        # slowest Gaussian decay rate is min Re(1/lam)
        grid = default_grid(1.0 / float(np.min((1.0 / lam).real)))
    y = grid.y
    dU = boundary.U_plus - boundary.U_minus
    use_eig = method == "eig" or (method == "auto" and np.linalg.cond(V) < 1e8)
    if use_eig:
        r = np.sqrt(lam.astype(complex))
        c = np.linalg.solve(V, dU.astype(complex))
        F = 0.5 * (1.0 + erf(y[:, None] / (2.0 * r[None, :])))
        dF = np.exp(-y[:, None] ** 2 / (4.0 * lam[None, :])) / np.sqrt(4 * np.pi * lam[None, :])
        U = boundary.U_minus + ((F * c) @ V.T).real
        Up = ((dF * c) @ V.T).real
        U[grid.mid] = (boundary.U_minus + V @ (0.5 * c)).real
    else:
        U, Up = _linear_quadrature(Amat, boundary, grid)
    return Profile(grid, U, Up @ Amat.T, boundary, flags={"method": "eig" if use_eig else "quadrature"})


def _linear_quadrature(Amat, boundary: BoundaryPair, grid: Grid, refine: int = 16):
    m = Amat.shape[0]
    nf = (grid.n_points - 1) * refine + 1
    yf = np.linspace(-grid.half_width, grid.half_width, nf)
    Ainv = np.linalg.inv(Amat)
    root = sqrtm(Ainv)
    K = expm(-(yf[:, None, None] ** 2) * (0.25 * Ainv)[None])
    dU = boundary.U_plus - boundary.U_minus
    integrand = np.real(np.einsum("ij,njk,k->ni", root, K, dU)) / math.sqrt(4 * math.pi)
    U = boundary.U_minus + cumulative_trapezoid(integrand, yf, axis=0, initial=0.0)
    return U[::refine], integrand[::refine]


# ---------------------------------------------------------------- checks

def flux_envelope(profile: Profile, delta: float, floor: float = 1e-13, noise_factor: float = 10.0) -> float:
    """max |q(y)| / (|q(0)| exp(-delta y^2 / 4)) over nodes with |q| above the noise floor.

    The flux left at the truncation ends estimates the solver's absolute
    error; nodes with |q| below ``noise_factor`` times that value (or below
    ``floor``) are not resolved and are skipped.
    """
    q = np.linalg.norm(profile.Q, axis=1)
    floor = max(floor, noise_factor * max(q[0], q[-1]))
    q0 = q[profile.grid.mid]
    if q0 == 0.0:
        return 0.0 if np.all(q <= floor) else math.inf
    sel = q > floor
    y = profile.y[sel]
    return float(np.max(np.exp(np.log(q[sel] / q0) + delta * y * y / 4.0)))


def _l2sq(f, y):
    f = np.asarray(f, dtype=float).reshape(len(y), -1)
    return float(trapezoid(np.sum(f * f, axis=1), y))


def verify_theorem_estimates(profile: Profile, A: VectorFluxMap, constants, tilde_u: Optional[TildeU] = None):
    """Quantities entering the a priori, flux and uniform bounds.

    ``constants`` is a ConstantsReport or an (a_lo, a_up, delta) tuple. v is
    recovered from U - u~ by cumulative quadrature. Returns a dict with the
    three L^2 terms, their sum relative to a_up^(1/2) Delta^2, the flux
    envelope ratio and the uniform-bound ratio (NaN when a_lo or delta is 0).
    """
    a_lo, a_up, delta = constants.as_tuple() if hasattr(constants, "as_tuple") else constants
    b = profile.boundary
    tilde_u = tilde_u or build_tilde_u(b, a_up)
    y = profile.y
    dlt = b.delta
    if dlt == 0:
        return {"a_lo_Up2": 0.0, "U_minus_tilde2": 0.0, "v_H1_over_aup": 0.0, "apriori_ratio": 0.0,
                "flux_envelope": 0.0, "sup_U_minus_tilde": 0.0, "uniform_ratio": 0.0}
    Up = np.gradient(profile.U, y, axis=0, edge_order=2)
    r = profile.U - tilde_u(y)
    v = cumulative_trapezoid(r, y, axis=0, initial=0.0)
    t1 = a_lo * _l2sq(Up, y)
    t2 = _l2sq(r, y)
    t3 = (_l2sq(v, y) + t2) / a_up
    sup = float(np.abs(r).max())
    uni = sup / (math.sqrt(a_up) / (math.sqrt(delta) * a_lo) * dlt) if a_lo > 0 and delta > 0 else math.nan
    return {"a_lo_Up2": t1, "U_minus_tilde2": t2, "v_H1_over_aup": t3,
            "apriori_ratio": (t1 + t2 + t3) / (math.sqrt(a_up) * dlt ** 2),
            "flux_envelope": flux_envelope(profile, delta) if delta > 0 else math.nan,
            "sup_U_minus_tilde": sup, "uniform_ratio": uni}


class IntegralRelations(NamedTuple):
    moment0: np.ndarray
    moment1_residual: np.ndarray
    decay_ok: bool


def integral_relations(profile: Profile, A) -> IntegralRelations:
    """int (U - u_bar) dy and int y (u_bar - U) dy - (A(U_+) - A(U_-)).

    The step u_bar takes its midpoint value at y = 0, which keeps the
    trapezoid rule second order across the jump; the first moment also gets
    the end correction for the kink at y = 0.
    """
    Afun = A.A if hasattr(A, "A") else A
    b = profile.boundary
    y = profile.y
    ubar = b.step(y)
    r = profile.U - ubar
    m0 = trapezoid(r, y, axis=0)
    jump = np.asarray(Afun(b.U_plus), float) - np.asarray(Afun(b.U_minus), float)
    # y (u_bar - U) has a kink at y = 0 whose slope jumps by U_+ - U_-; adding the
    # Euler-Maclaurin term h^2 (U_+ - U_-) / 12 restores O(h^4) accuracy
    h = profile.grid.h
    m1 = trapezoid(-y[:, None] * r, y, axis=0) + h * h / 12.0 * (b.U_plus - b.U_minus) - jump
    decay_ok = profile.boundary_mismatch() <= 1e-8 * max(1.0, b.delta)
    if not decay_ok:
        warnings.warn("profile has not decayed at the truncation boundary; relations are indicative")
    return IntegralRelations(np.atleast_1d(m0), np.atleast_1d(m1), bool(decay_ok))


def bump(y, center, radius):
    """Mollifier exp(-1/(1 - t^2)), t = (y - c)/r, with first and second y-derivatives."""
    t = (np.asarray(y, dtype=float) - center) / radius
    inside = np.abs(t) < 1.0
    s = np.where(inside, 1.0 - t * t, 1.0)
    psi = np.where(inside, np.exp(-1.0 / s), 0.0)
    d1 = psi * (-2.0 * t / s ** 2) / radius
    d2 = psi * (4.0 * t * t / s ** 4 - 2.0 / s ** 2 - 8.0 * t * t / s ** 3) / radius ** 2
    return psi, np.where(inside, d1, 0.0), np.where(inside, d2, 0.0)


def verify_weak_residual(profile: Profile, A, test_family_size: int = 20, radius: Optional[float] = None):
    """max over bumps psi and components of |int A(U) psi'' - U ((y/2) psi)' dy|."""
    Afun = A.A if hasattr(A, "A") else A
    y = profile.y
    L = profile.grid.half_width
    radius = radius or 0.1 * L
    centers = np.linspace(-0.5 * L, 0.5 * L, test_family_size)
    a = np.asarray(Afun(profile.U), dtype=float).reshape(profile.U.shape)
    worst = 0.0
    for c in centers:
        psi, d1, d2 = bump(y, c, radius)
        dpsi = 0.5 * psi + 0.5 * y * d1
        res = trapezoid(a * d2[:, None] - profile.U * dpsi[:, None], y, axis=0)
        worst = max(worst, float(np.abs(res).max()))
    return worst
