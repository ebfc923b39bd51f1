"""Rescaled evolution u_tau = (A(u))_yy + (y/2) u_y, relative entropies and decay checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.linalg import solve_banded
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import BoundaryPair, Grid, Profile, SolverError, VectorFluxMap, trapezoid

SERIES_TOL = 1e-3


# ---------------------------------------------------------------- entropy densities

def _Ep(p, rho):
    rho = np.asarray(rho, dtype=float)
    x = rho - 1.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if p == 1:
            val = np.where(rho > 0, rho * np.log(np.where(rho > 0, rho, 1.0)) - rho + 1, 1.0)
        elif p == 0:
            val = np.where(rho > 0, -np.log(np.where(rho > 0, rho, 1.0)) + rho - 1, np.inf)
        else:
            rp = np.where(rho > 0, rho ** p, 0.0 if p > 0 else np.inf)
            val = (rp - p * rho + p - 1) / ((p - 1) * p)
    # Taylor series about 1 avoids cancellation: E'' = rho^(p-2)
    c3 = p - 2
    c4 = c3 * (p - 3)
    c5 = c4 * (p - 4)
    c6 = c5 * (p - 5)
    ser = x * x * (0.5 + x * (c3 / 6 + x * (c4 / 24 + x * (c5 / 120 + x * c6 / 720))))
    return np.where(np.abs(x) < SERIES_TOL, ser, val)


def _Ep1(p, rho):
    rho = np.asarray(rho, dtype=float)
    x = rho - 1.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if p == 1:
            val = np.log(rho)
        else:
            val = np.expm1((p - 1) * np.log(rho)) / (p - 1)
    c3 = p - 2
    ser = x * (1 + x * (c3 / 2 + x * c3 * (p - 3) / 6))
    return np.where(np.abs(x) < SERIES_TOL, ser, val)


def _Ep2(p, rho):
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return rho ** (p - 2)


@dataclass(frozen=True)
class EntropyDensity:
    """phi = E_p on [0, 1] and E_q on [1, inf); E_p alone when p == q."""

    p: float
    q: float
    label: str = ""

    @classmethod
    def E(cls, p: float):
        return cls(p, p, f"E_{p:g}")

    @classmethod
    def phi_pq(cls, p: float, q: float):
        return cls(p, q, f"phi_{p:g},{q:g}")

    @classmethod
    def phi_m(cls, m: float):
        """Density matched to A(u) = u^m: p_m = max(1/2, m-1), q_m = min(1/2, 2-m)."""
        return cls(max(0.5, m - 1), min(0.5, 2 - m), f"phi_m({m:g})")

    def _split(self, f, rho):
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < 0):
            raise ValueError("entropy densities are defined for rho >= 0")
        if self.p == self.q:
            return f(self.p, rho)
        return np.where(rho <= 1, f(self.p, np.minimum(rho, 1.0)), f(self.q, np.maximum(rho, 1.0)))

    def __call__(self, rho):
        return self._split(_Ep, rho)

    def d1(self, rho):
        return self._split(_Ep1, rho)

    def d2(self, rho):
        return self._split(_Ep2, rho)


# ---------------------------------------------------------------- scalar flux maps

class ScalarFlux(NamedTuple):
    """A(u) with A'(u) (and A''(u) when available)."""

    A: Callable
    dA: Callable
    d2A: Optional[Callable] = None
    name: str = "custom"


def linear_flux(delta: float = 1.0) -> ScalarFlux:
    return ScalarFlux(lambda u: delta * np.asarray(u, float), lambda u: np.full_like(np.asarray(u, float), delta),
                      lambda u: np.zeros_like(np.asarray(u, float)), f"linear({delta:g})")


def power_flux(m: float) -> ScalarFlux:
    """A(u) = u^m on u >= 0."""
    def A(u):
        return np.maximum(np.asarray(u, float), 0.0) ** m

    def dA(u):
        return m * np.maximum(np.asarray(u, float), 0.0) ** (m - 1)

    def d2A(u):
        return m * (m - 1) * np.maximum(np.asarray(u, float), 0.0) ** (m - 2)

    return ScalarFlux(A, dA, d2A, f"pme({m:g})")


def flux_from_diffusivity(D) -> ScalarFlux:
    """ScalarFlux from a ScalarDiffusivity (A = antiderivative of D)."""
    return ScalarFlux(D.antiderivative, lambda u: np.asarray(D(np.asarray(u, float)), float), None, D.name)


# ---------------------------------------------------------------- evolution

@dataclass
class EvolutionState:
    grid: Grid
    u: np.ndarray
    tau: float = 0.0
    boundary: Optional[BoundaryPair] = None
    u_bound: float = field(default=math.nan)
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.array(self.u, dtype=float)
        if self.u.shape[0] != self.grid.n_points:
            raise ValueError("state does not match grid")
        if self.boundary is None:
            self.boundary = BoundaryPair(self.u[0], self.u[-1])
        if not np.isfinite(self.u_bound):
            self.u_bound = 1.1 * max(np.abs(self.u).max(), np.abs(self.boundary.U_minus).max(),
                                     np.abs(self.boundary.U_plus).max())
        self.u[0], self.u[-1] = self.boundary.U_minus.reshape(self.u[0].shape), \
            self.boundary.U_plus.reshape(self.u[-1].shape)


def stable_dt(grid: Grid, dA_max: float) -> float:
    """min(0.25 h^2 / max A', 0.5 h / (L/2))."""
    h = grid.h
    drift = 0.5 * h / (grid.half_width / 2)
    return drift if dA_max <= 0 else min(0.25 * h * h / dA_max, drift)


def _drift(u, y, h):
    """(y/2) u_y by first-order upwinding for transport with velocity -y/2."""
    out = np.zeros_like(u)
    fwd = (u[2:] - u[1:-1]) / h
    bwd = (u[1:-1] - u[:-2]) / h
    yi = y[1:-1].reshape((-1,) + (1,) * (u.ndim - 1))
    out[1:-1] = 0.5 * yi * np.where(yi > 0, fwd, bwd)
    return out


def _drift_matrix(y, h):
    n = len(y)
    lo, di, up = np.zeros(n), np.zeros(n), np.zeros(n)
    c = 0.5 * y / h
    pos = y > 0
    di[1:-1] = np.where(pos, -c, c)[1:-1]
    up[1:-1] = np.where(pos, c, 0.0)[1:-1]
    lo[1:-1] = np.where(pos, 0.0, -c)[1:-1]
    return sp.diags([lo[1:], di, up[:-1]], [-1, 0, 1], format="csr")


def step_pde(state: EvolutionState, A, dt: Optional[float] = None) -> EvolutionState:
    """One semi-implicit step: linearized implicit diffusion, explicit upwind drift.

    ``A`` is a ScalarFlux for u of shape (n,) or a VectorFluxMap for u of
    shape (n, m). Dirichlet values are kept at the boundary limits.
    """
    g = state.grid
    h = g.h
    u = state.u
    if u.ndim == 1:
        a = np.asarray(A.dA(u), float)
        if dt is None:
            dt = stable_dt(g, float(a.max()))
        Au = np.asarray(A.A(u), float)
        rhs = np.zeros_like(u)
        rhs[1:-1] = (Au[2:] - 2 * Au[1:-1] + Au[:-2]) / h ** 2
        rhs += _drift(u, g.y, h)
        r = dt / h ** 2
        ab = np.zeros((3, len(u)))
        ab[1] = 1.0
        ab[1, 1:-1] = 1 + 2 * r * a[1:-1]
        ab[0, 2:] = -r * a[2:]           # super-diagonal: coefficient of delta_{i+1} in row i
        ab[2, :-2] = -r * a[:-2]         # sub-diagonal: coefficient of delta_{i-1} in row i
        ab[0, 1] = 0.0
        ab[2, -2] = 0.0
        b = dt * rhs
        b[0] = b[-1] = 0.0
        new = u + solve_banded((1, 1), ab, b)
    else:
        new, dt = _step_vector(state, A, dt)
    clipped = bool(np.any(new < 0))
    if clipped:
        new = np.maximum(new, 0.0)
    if not np.all(np.isfinite(new)) or np.abs(new).max() > state.u_bound:
        raise SolverError(f"stability violation at tau={state.tau:.6g}: |u| exceeds {state.u_bound:.6g}")
    flags = dict(state.flags)
    if clipped:
        flags["clipped"] = flags.get("clipped", 0) + 1
    return EvolutionState(g, new, state.tau + dt, state.boundary, state.u_bound, flags)


def _step_vector(state, A: VectorFluxMap, dt):
    g = state.grid
    h, n = g.h, g.n_points
    u = state.u
    m = u.shape[1]
    J = A.jacobian(u)
    if dt is None:
        dt = stable_dt(g, float(np.linalg.norm(J, 2, axis=(1, 2)).max()))
    Au = A.A(u)
    rhs = np.zeros_like(u)
    rhs[1:-1] = (Au[2:] - 2 * Au[1:-1] + Au[:-2]) / h ** 2
    rhs += _drift(u, g.y, h)
    L = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil") / h ** 2
    L[0, :] = 0
    L[n - 1, :] = 0
    Jb = sp.block_diag(list(J), format="csr")
    M = sp.identity(n * m, format="csr") - dt * sp.kron(L.tocsr(), sp.identity(m)) @ Jb
    M = M.tolil()
    for k in list(range(m)) + list(range((n - 1) * m, n * m)):
        M[k, :] = 0
        M[k, k] = 1
    b = dt * rhs
    b[0] = b[-1] = 0
    delta = spla.spsolve(M.tocsr(), b.reshape(-1)).reshape(n, m)
    return u + delta, dt


def discrete_steady_state(grid: Grid, A: ScalarFlux, U_init, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
    """Fixed point of the time-stepping scheme, by Newton from ``U_init``.

    The upwinded drift perturbs the continuous profile by O(h); entropies of
    simulated trajectories are measured against this discrete equilibrium so
    that they decay to zero instead of stalling at the discretization error.
    """
    U = np.array(U_init, dtype=float)
    h, n = grid.h, grid.n_points
    L = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil") / h ** 2
    L[0, :] = 0
    L[n - 1, :] = 0
    L = L.tocsr()
    Dm = _drift_matrix(grid.y, h)
    bnd = sp.diags(np.r_[1.0, np.zeros(n - 2), 1.0])
    scale = max(1.0, np.abs(U).max())
    for _ in range(max_iter):
        F = L @ np.asarray(A.A(U), float) + Dm @ U
        F[0] = F[-1] = 0.0
        if np.abs(F).max() * h * h <= tol * scale:
            return U
        Jm = L @ sp.diags(np.asarray(A.dA(U), float)) + Dm + bnd
        U = U - spla.spsolve(Jm.tocsc(), F)
    raise SolverError("discrete steady state: Newton did not converge")


# ---------------------------------------------------------------- functionals

def relative_entropy(u, U, phi: EntropyDensity, y) -> float:
    """int phi(u/U) U dy by the trapezoid rule (inf if phi is infinite somewhere)."""
    u, U = np.asarray(u, float), np.asarray(U, float)
    if np.any(U <= 0):
        raise ValueError("relative entropy needs a positive reference profile")
    vals = phi(u / U) * U
    if not np.all(np.isfinite(vals)):
        return math.inf
    return float(trapezoid(vals, y))


def hellinger(u, U, y) -> float:
    """int (sqrt u - sqrt U)^2 dy."""
    u, U = np.asarray(u, float), np.asarray(U, float)
    if np.any(u < 0) or np.any(U < 0):
        raise ValueError("hellinger distance needs nonnegative inputs")
    return float(trapezoid((np.sqrt(u) - np.sqrt(U)) ** 2, y))


def hellinger_constant(phi: EntropyDensity, rho=None) -> float:
    """Sampled sup over r != 1 of (sqrt r - 1)^2 / phi(r)."""
    rho = np.logspace(-8, 8, 20001) if rho is None else np.asarray(rho, float)
    rho = rho[np.abs(rho - 1) > 1e-6]
    return float(np.max((np.sqrt(rho) - 1) ** 2 / phi(rho)))


class DecayFit(NamedTuple):
    Lambda: float
    residual: float


def decay_rate_fit(tau, H) -> DecayFit:
    """Negated least-squares slope of log H against tau."""
    tau, H = np.asarray(tau, float), np.asarray(H, float)
    if tau.size < 10 or tau.shape != H.shape:
        raise ValueError("decay fit needs at least 10 matching samples")
    if np.any(H <= 0):
        raise ValueError("decay fit needs positive H")
    coef, res, *_ = np.polyfit(tau, np.log(H), 1, full=True)
    rms = math.sqrt(float(res[0]) / tau.size) if len(res) else 0.0
    return DecayFit(float(-coef[0]), rms)


class SigmaReport(NamedTuple):
    Sigma: float
    Lambda_predicted: float
    hypothesis_ok: bool
    threshold: float
    explicit_bound: float
    certified_on: tuple


def sigma_check(profile: Profile, mode) -> SigmaReport:
    """Flatness quantity Sigma of U and the decay rate it guarantees.

    ``mode`` is ("lipschitz", C_A, a_lo) with Sigma = sup U'^2 and
    Lambda = (1 - C_A^2 Sigma / a_lo)/2, or ("pme", m) with
    Sigma = sup U'^2 U^(m-2) and Lambda = (1 - m (m-1)^2 Sigma)/2. The
    constants C_A, a_lo are taken as valid on [min U, max U] only.
    """
    U = profile.U[:, 0]
    if U.min() <= 0:
        raise ValueError("sigma_check requires U_- > 0")
    Up = np.gradient(U, profile.grid.h, edge_order=2)
    kind = mode[0]
    rng = (float(U.min()), float(U.max()))
    if kind == "lipschitz":
        C_A, a_lo = float(mode[1]), float(mode[2])
        S = float(np.max(Up ** 2))
        thr = a_lo / C_A ** 2 if C_A > 0 else math.inf
        lam = 0.5 * (1 - C_A ** 2 * S / a_lo)
        return SigmaReport(S, lam, S < thr, thr, math.nan, rng)
    if kind == "pme":
        m = float(mode[1])
        S = float(np.max(Up ** 2 * U ** (m - 2)))
        k = m * (m - 1) ** 2
        thr = math.inf if k == 0 else 1 / k
        lam = 0.5 * (1 - k * S)
        Um, Upl = float(profile.boundary.U_minus[0]), float(profile.boundary.U_plus[0])
        lo, hi = min(Um, Upl), max(Um, Upl)
        bound = hi ** (m - 1) / (8 * m * lo ** m) * (hi - lo) ** 2
        return SigmaReport(S, lam, S < thr, thr, bound, rng)
    raise ValueError(f"unknown sigma_check mode {kind!r}")


def entropy_inequality_check(phi: EntropyDensity, mode, rho_grid=None) -> float:
    """Max over rho of lhs/rhs for the pointwise entropy inequality of a decay proof.

    mode "CA": phi''(rho) rho^2 (rho-1)^2 <= 2 phi(rho).
    mode ("pme", m): phi''(rho) m (rho^(m-1)-1)^2 / (4 rho^(m-3)) <= m (m-1)^2 phi(rho) / 2.
    Both sides vanish quadratically at rho = 1; the one-sided limits of the
    ratio there equal phi''(1) / phi''(1) = 1 and are included.
    """
    rho = np.logspace(-3, 3, 10 ** 4) if rho_grid is None else np.asarray(rho_grid, float)
    rho = rho[(rho > 0) & (rho != 1)]
    f = phi(rho)
    f2 = phi.d2(rho)
    if mode == "CA":
        lhs = f2 * rho ** 2 * (rho - 1) ** 2
        rhs = 2 * f
        limit = 1.0
    else:
        m = float(mode[1])
        if m == 1:
            return 0.0
        lhs = f2 * m * np.expm1((m - 1) * np.log(rho)) ** 2 * rho ** (3 - m) / 4
        rhs = m * (m - 1) ** 2 / 2 * f
        limit = 1.0
    return float(max(np.max(lhs / rhs), limit))


# ---------------------------------------------------------------- linearization

def _second_difference(f, h):
    out = np.full_like(f, np.nan)
    out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h ** 2
    return out


def _first_difference(f, h):
    out = np.full_like(f, np.nan)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    return out


def linearized_apply(profile: Profile, A: ScalarFlux, v) -> np.ndarray:
    """L_U v = (A'(U) v)'' + (y/2) v' by centered differences (NaN at the ends)."""
    U = profile.U[:, 0]
    v = np.asarray(v, float)
    h = profile.grid.h
    return _second_difference(A.dA(U) * v, h) + 0.5 * profile.y * _first_difference(v, h)


def linearized_adjoint_apply(profile: Profile, A: ScalarFlux, w) -> np.ndarray:
    """L*_U w = A'(U) w'' - ((y/2) w)'."""
    U = profile.U[:, 0]
    w = np.asarray(w, float)
    h = profile.grid.h
    return A.dA(U) * _second_difference(w, h) - _first_difference(0.5 * profile.y * w, h)


def adjoint_check(profile: Profile, A: ScalarFlux, v, w) -> float:
    """|<L v, w> - <v, L* w>| for v, w vanishing near the ends."""
    y = profile.y
    a = linearized_apply(profile, A, v)
    b = linearized_adjoint_apply(profile, A, w)
    sl = slice(1, -1)
    return float(abs(trapezoid(a[sl] * w[sl], y[sl]) - trapezoid(v[sl] * b[sl], y[sl])))


def _profile_derivative(profile: Profile, A: ScalarFlux):
    U = profile.U[:, 0]
    a = np.asarray(A.dA(U), float)
    Q = profile.Q[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        Up = np.where(a > 0, Q / a, 0.0)
    if not np.any(Q):
        Up = np.gradient(U, profile.grid.h, edge_order=2)
    return Up


def eigen_residuals(profile: Profile, A: ScalarFlux, weight_floor: float = 1e-8):
    """Relative residuals of L_U U' = -U'/2 and L_U (y U') = -y U'.

    Returns (nan, nan) for a constant profile.
    """
    y = profile.y
    V1 = _profile_derivative(profile, A)
    V2 = y * V1
    out = []
    for V, lam in ((V1, -0.5), (V2, -1.0)):
        nv = np.abs(V).max()
        if nv == 0:
            out.append(math.nan)
            continue
        r = linearized_apply(profile, A, V) - lam * V
        mask = np.abs(V) > weight_floor * nv
        mask[[0, -1]] = False
        out.append(float(np.abs(r[mask]).max() / nv) if mask.any() else math.nan)
    return tuple(out)


# ---------------------------------------------------------------- trajectories

def step_mean(y, boundary: BoundaryPair):
    return boundary.step(y)[:, 0] if boundary.m == 1 else boundary.step(y)


def moments(u, y, boundary: BoundaryPair):
    """(int (u - ubar), int y (u - ubar)) with the step function ubar."""
    ub = boundary.step(y).reshape(u.shape)
    d = u - ub
    yy = y.reshape((-1,) + (1,) * (u.ndim - 1))
    return trapezoid(d, y), trapezoid(yy * d, y)


@dataclass
class Trajectory:
    tau: np.ndarray
    states: np.ndarray
    H: np.ndarray
    hellinger: np.ndarray
    moment0: np.ndarray
    moment1: np.ndarray
    grid: Grid
    boundary: BoundaryPair
    flags: dict = field(default_factory=dict)


def evolve(state: EvolutionState, A, tau_end: float, reference=None, phi: Optional[EntropyDensity] = None,
           record_dt: float = 0.05, csv_path=None, flush_every: int = 20) -> Trajectory:
    """Integrate to ``tau_end`` and record entropy, Hellinger distance and moments.

    Steps use the stable time step; records are taken on the uniform grid
    tau = k * record_dt (the last step before each record is shortened).
    """
    y = state.grid.y
    recs = {"tau": [], "u": [], "H": [], "hel": [], "m0": [], "m1": []}
    writer = fh = None
    if csv_path is not None:
        fh = open(csv_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["tau", "H_phi", "hellinger", "moment0", "moment1"])

    def record(s):
        m0, m1 = moments(s.u, y, s.boundary)
        H = relative_entropy(s.u, reference, phi, y) if (phi is not None and reference is not None) else math.nan
        hel = hellinger(s.u, reference, y) if reference is not None else math.nan
        for k, v in zip(("tau", "u", "H", "hel", "m0", "m1"), (s.tau, s.u.copy(), H, hel, m0, m1)):
            recs[k].append(v)
        if writer is not None:
            writer.writerow([repr(float(s.tau)), repr(H), repr(hel), repr(float(np.sum(m0))), repr(float(np.sum(m1)))])
            if len(recs["tau"]) % flush_every == 0:
                fh.flush()

    try:
        record(state)
        k = 1
        n_rec = int(round(tau_end / record_dt))
        while k <= n_rec:
            target = k * record_dt
            nxt = step_pde(state, A)
            if nxt.tau >= target - 1e-12:
                nxt = step_pde(state, A, target - state.tau)
                nxt.tau = target
                state = nxt
                record(state)
                k += 1
            else:
                state = nxt
    finally:
        if fh is not None:
            fh.close()
    return Trajectory(np.array(recs["tau"]), np.array(recs["u"]), np.array(recs["H"]), np.array(recs["hel"]),
                      np.array(recs["m0"]), np.array(recs["m1"]), state.grid, state.boundary, dict(state.flags))


def moment_odes_check(traj: Trajectory, A) -> dict:
    """Residuals of the moment laws along a trajectory.

    With M0 = int (u - ubar) and M1 = int y (u - ubar), integration by parts
    gives d/dtau M0 = -M0/2 and d/dtau M1 = -(A(U_+) - A(U_-)) - M1; the
    stationary value M1 = -(A(U_+) - A(U_-)) matches the profile relation
    int y (ubar - U) = A(U_+) - A(U_-).
    """
    t = traj.tau
    if t.size < 3 or not np.allclose(np.diff(t), t[1] - t[0]):
        raise ValueError("moment check needs a uniformly recorded trajectory")
    b = traj.boundary
    jump = np.asarray(A.A(b.U_plus) - A.A(b.U_minus), float).reshape(traj.moment1.shape[1:])
    dm0 = np.gradient(traj.moment0, t, axis=0, edge_order=2)
    dm1 = np.gradient(traj.moment1, t, axis=0, edge_order=2)
    r0 = dm0 + 0.5 * traj.moment0
    r1 = dm1 + jump + traj.moment1
    return {"moment0_residual": float(np.abs(r0).max()), "moment1_residual": float(np.abs(r1).max()),
            "moment0_scale": float(np.abs(traj.moment0).max()), "moment1_scale": float(np.abs(jump).max())}


def smooth_bump(y, center=0.0, radius=2.0):
    """C-infinity bump with peak 1 supported on |y - center| < radius."""
    t = (np.asarray(y, float) - center) / radius
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = np.exp(1 - 1 / (1 - t[inside] ** 2))
    return out


def perturbed_start(U, y, amplitude=0.2, center=0.0, radius=2.0):
    """u0 = U (1 + amplitude * bump)."""
    return np.asarray(U, float) * (1 + amplitude * smooth_bump(y, center, radius))
