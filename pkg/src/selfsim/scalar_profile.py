"""Scalar similarity profiles (D(U)U')' + (y/2)U' = 0 by shooting from y = 0.

The first-order system is integrated for (U, P) with P = log Q:

    U' = exp(P) / D_eps(U),    P' = -y / (2 D_eps(U)),

which stays well conditioned when D_eps is tiny (Q then collapses through P
instead of through a stiff linear equation).  Unknowns are U(0) and Q(0); for
fixed U(0) the right (left) end value is monotone in Q(0), so each side is
matched by bisection, and U(0) is balanced by an outer bisection.
"""

from __future__ import annotations

import math
import warnings
import weakref
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import erf

from .core import BoundaryPair, Grid, Profile, ScalarDiffusivity, SolverError, default_grid, trapezoid

EPS_SCHEDULE = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)


@dataclass(frozen=True)
class ScalarSolveConfig:
    """Shooting parameters. ``grid=None`` selects the default grid for D_sup."""

    grid: Optional[Grid] = None
    eps_schedule: Sequence[float] = EPS_SCHEDULE
    shoot_tol: float = 1e-8
    ode_steps: int = 8
    snap_tol: float = 1e-9
    max_iter: int = 200

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_schedule)
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_schedule must be strictly decreasing positive reals")
        if self.shoot_tol <= 0:
            raise ValueError("shoot_tol must be positive")
        if self.ode_steps < 1:
            raise ValueError("ode_steps must be >= 1")
        object.__setattr__(self, "eps_schedule", eps)


@dataclass
class ScalarReport:
    U0: float
    Q0: float
    y_minus_star: float
    y_plus_star: float
    gaussian_bound_ok: bool
    q0_bracket: tuple
    u0_bracket: tuple
    eps_final: float = 0.0
    boundary_mismatch: float = 0.0
    support: tuple = (-math.inf, math.inf)
    flags: dict = field(default_factory=dict)


# ---------------------------------------------------------------- kernels

@numba.njit(cache=False)
def _rhs(D, y, u, p, eps, lo, hi):
    d = D(min(max(u, lo), hi)) + eps
    return math.exp(p) / d, -y / (2.0 * d)


@numba.njit(cache=False)
def _rk4(D, y, u, p, dt, eps, lo, hi):
    a1, b1 = _rhs(D, y, u, p, eps, lo, hi)
    a2, b2 = _rhs(D, y + 0.5 * dt, u + 0.5 * dt * a1, p + 0.5 * dt * b1, eps, lo, hi)
    a3, b3 = _rhs(D, y + 0.5 * dt, u + 0.5 * dt * a2, p + 0.5 * dt * b2, eps, lo, hi)
    a4, b4 = _rhs(D, y + dt, u + dt * a3, p + dt * b3, eps, lo, hi)
    return (u + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
            p + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4))


@numba.njit(cache=False)
def _substep(D, y, u, p, dt, eps, lo, hi, tol, target, stop_w):
    """One substep of size dt, split by step doubling until the local error is below tol.

    Returns (u, p, reached) where ``reached`` reports |target - u| <= stop_w.
    """
    t = 0.0
    h = dt
    while abs(t) < abs(dt):
        if abs(h) > abs(dt - t):
            h = dt - t
        u1, p1 = _rk4(D, y + t, u, p, h, eps, lo, hi)
        uh, ph = _rk4(D, y + t, u, p, 0.5 * h, eps, lo, hi)
        u2, p2 = _rk4(D, y + t + 0.5 * h, uh, ph, 0.5 * h, eps, lo, hi)
        err = abs(u2 - u1)
        if (not math.isfinite(err) or err > tol) and abs(h) > 1e-14:
            h *= 0.25
            continue
        u, p = u2, p2
        t += h
        if stop_w > 0 and abs(target - u) <= stop_w:
            return u, p, True
        if err < 0.01 * tol:
            h *= 2.0
    return u, p, False


@numba.njit(cache=False)
def _shoot(D, u0, p0, h, n, sub, eps, lo, hi, sign, out_u, out_p, tol, stop_w):
    """RK4 over n cells of width h in direction ``sign``.

    Returns 1 when U leaves [lo, hi] towards the target end (overshoot), 0
    otherwise. Node values are written to out_u/out_p when they are non-empty.
    ``tol > 0`` enables step-doubling refinement of each substep; ``stop_w > 0``
    ends the shot once U is that close to the target limit (remaining nodes
    are set to the limit with zero flux).
    """
    store = out_u.shape[0] > 0
    u = u0
    p = p0
    y = 0.0
    dt = sign * h / sub
    target = hi if sign > 0 else lo
    if store:
        out_u[0] = u
        out_p[0] = p
    for i in range(n):
        reached = False
        for k in range(sub):
            if tol > 0:
                u, p, reached = _substep(D, y, u, p, dt, eps, lo, hi, tol, target, stop_w)
            else:
                u, p = _rk4(D, y, u, p, dt, eps, lo, hi)
                reached = stop_w > 0 and abs(target - u) <= stop_w
            y += dt
            if not math.isfinite(u):
                return 1
            if sign > 0 and u > hi:
                return 1
            if sign < 0 and u < lo:
                return 1
            if reached:
                break
        if reached:
            if store:
                for j in range(i + 1, n + 1):
                    out_u[j] = target
                    out_p[j] = -np.inf
            return 0
        if store:
            out_u[i + 1] = u
            out_p[i + 1] = p
    return 0


@numba.njit(cache=False)
def _critical_p(D, u0, p_lo, p_hi, h, n, sub, eps, lo, hi, sign, tol, max_iter, ode_tol, stop_w):
    """Bisect log Q(0) between an undershooting p_lo and an overshooting p_hi."""
    empty = np.empty(0)
    for _ in range(max_iter):
        if p_hi - p_lo <= tol:
            break
        mid = 0.5 * (p_lo + p_hi)
        if _shoot(D, u0, mid, h, n, sub, eps, lo, hi, sign, empty, empty, ode_tol, stop_w) == 1:
            p_hi = mid
        else:
            p_lo = mid
    return p_lo, p_hi


@numba.njit(cache=False)
def _tabulated(u, table, lo, hi):
    # linear interpolation on a uniform table, used when D itself cannot be jitted
    n = table.shape[0]
    if hi <= lo:
        return table[0]
    s = (u - lo) / (hi - lo) * (n - 1)
    i = int(s)
    if i < 0:
        return table[0]
    if i >= n - 1:
        return table[n - 1]
    w = s - i
    return (1.0 - w) * table[i] + w * table[i + 1]


_JIT_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _jit_diffusivity(D: ScalarDiffusivity, lo: float, hi: float):
    """Return (jitted scalar D, mode). Falls back to a 2^16-cell table."""
    fn = D.D
    if D.jit_ok:
        try:
            cached = _JIT_CACHE.get(fn)
        except TypeError:
            cached = None
        if cached is not None:
            return cached, "jit"
        try:
            jd = fn if isinstance(fn, numba.core.registry.CPUDispatcher) else numba.njit(fn)
            val = float(jd(0.5 * (lo + hi)))
            if math.isfinite(val):
                try:
                    _JIT_CACHE[fn] = jd
                except TypeError:
                    pass
                return jd, "jit"
        except Exception:
            pass
    u = np.linspace(lo, hi, 65537)
    table = np.asarray(D.D(u), dtype=float) * np.ones_like(u)
    lo_, hi_ = float(lo), float(hi)

    @numba.njit
    def jd(x):
        return _tabulated(x, table, lo_, hi_)

    return jd, "table"


# ---------------------------------------------------------------- brackets

def q0_u0_brackets(D_star: float, D_sup: float, boundary: BoundaryPair):
    """Intervals containing U(0) and Q(0), valid when D_star > 0.

    With gamma = sqrt(D_star / (2 D_sup)) the U(0) interval is
    [(U_- + gamma U_+)/(1+gamma), (gamma U_- + U_+)/(1+gamma)] and the Q(0)
    interval [sqrt(D_star/16) Delta, sqrt(D_sup/8) Delta].
    """
    if not D_sup > 0:
        raise ValueError("D_sup must be positive")
    lo, hi = float(boundary.U_minus[0]), float(boundary.U_plus[0])
    dlt = hi - lo
    g = math.sqrt(max(D_star, 0.0) / (2.0 * D_sup))
    u0 = ((lo + g * hi) / (1 + g), (g * lo + hi) / (1 + g))
    q0 = (math.sqrt(max(D_star, 0.0) / 16.0) * dlt, math.sqrt(D_sup / 8.0) * dlt)
    return u0, q0


def q0_quadrature_bracket(D: Callable, boundary: BoundaryPair, U0: float):
    """Lower/upper bounds on Q(0)^2 from integrals of D on each side of U(0).

    Each side gives int (s - U_-) D ds <= 2 Q0^2 <= (U0 - U_-) int D ds (and the
    mirror on [U0, U_+]); the returned bracket is the intersection.
    """
    lo, hi = float(boundary.U_minus[0]), float(boundary.U_plus[0])
    f = lambda s: float(D(s))
    l1 = quad(lambda s: (s - lo) * f(s), lo, U0, limit=200)[0]
    u1 = (U0 - lo) * quad(f, lo, U0, limit=200)[0]
    l2 = quad(lambda s: (hi - s) * f(s), U0, hi, limit=200)[0]
    u2 = (hi - U0) * quad(f, U0, hi, limit=200)[0]
    return 0.5 * max(l1, l2), 0.5 * min(u1, u2)


def _endpoint_integral(D, a, b, anchor):
    """int_a^b D(u)/|anchor - u| du, anchor in {a, b}; inf if divergent."""
    if b <= a:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, err = quad(lambda u: float(D(u)) / abs(anchor - u), a, b, limit=400,
                            points=[0.5 * (a + b)])
        except (IntegrationWarning, ZeroDivisionError):
            return math.inf
    if not math.isfinite(val) or err > 1e-6 * max(1.0, abs(val)):
        return math.inf
    return val


def support_endpoints(D: Callable, boundary: BoundaryPair, U0: float, Q0: float):
    """Bounds (y_-^*, y_+^*) beyond which the profile equals its limits.

    +-inf is returned when the defining integral diverges (D not vanishing at
    the corresponding limit, or vanishing too slowly).
    """
    if not Q0 > 0:
        raise ValueError("Q0 must be positive")
    lo, hi = float(boundary.U_minus[0]), float(boundary.U_plus[0])
    ip = _endpoint_integral(D, U0, hi, hi)
    im = _endpoint_integral(D, lo, U0, lo)
    y_plus = (hi - U0) / Q0 * ip if math.isfinite(ip) else math.inf
    y_minus = -(U0 - lo) / Q0 * im if math.isfinite(im) else -math.inf
    return y_minus, y_plus


# ---------------------------------------------------------------- solver

class _Shooter:
    def __init__(self, jd, grid: Grid, lo, hi, sub, max_iter):
        self.jd, self.grid, self.lo, self.hi = jd, grid, lo, hi
        self.sub, self.max_iter = sub, max_iter
        self.n = grid.mid
        self.h = grid.h
        self.bisect_tol = 1e-14

    def _ode(self, eps):
        # refinement and early stop only in regularized (degenerate) stages
        if eps > 0:
            return 1e-12 * (self.hi - self.lo), 1e-13 * max(1.0, abs(self.lo), abs(self.hi))
        return 0.0, 0.0

    def _over(self, u0, p, eps, sign):
        e = np.empty(0)
        return _shoot(self.jd, u0, p, self.h, self.n, self.sub, eps, self.lo, self.hi, sign, e, e,
                      *self._ode(eps)) == 1

    def critical(self, u0, eps, sign, guess):
        """Bracket and bisect the critical log Q(0) for one side."""
        p_lo, p_hi = guess - 0.5, guess + 0.5
        step = 1.0
        for _ in range(200):
            if not self._over(u0, p_lo, eps, sign):
                break
            p_lo -= step
            step *= 2
        else:
            raise SolverError("no undershooting flux found")
        step = 1.0
        for _ in range(200):
            if self._over(u0, p_hi, eps, sign):
                break
            p_hi += step
            step *= 2
        else:
            raise SolverError("no overshooting flux found")
        return _critical_p(self.jd, u0, p_lo, p_hi, self.h, self.n, self.sub, eps,
                           self.lo, self.hi, sign, self.bisect_tol, self.max_iter, *self._ode(eps))

    def trajectory(self, u0, p, eps, sign):
        out_u, out_p = np.empty(self.n + 1), np.empty(self.n + 1)
        _shoot(self.jd, u0, p, self.h, self.n, self.sub, eps, self.lo, self.hi, sign, out_u, out_p,
               *self._ode(eps))
        return out_u, out_p


def _balance(sh: _Shooter, eps, bracket, guess_p, max_iter, tol):
    """Outer bisection on U(0): right-critical minus left-critical flux changes sign."""
    lo, hi = sh.lo, sh.hi
    cache = {}

    def g(u0):
        pr = sh.critical(u0, eps, 1.0, guess_p)[0]
        pl = sh.critical(u0, eps, -1.0, guess_p)[0]
        cache[u0] = (pr, pl)
        return pr - pl

    a, b = bracket
    ga, gb = g(a), g(b)
    # widen towards the limits if the bracket misses the root
    tiny = 1e-14 * (hi - lo)
    for _ in range(60):
        if ga >= 0 >= gb:
            break
        if ga < 0:
            a = lo + 0.5 * (a - lo) if a - lo > tiny else lo + tiny
            ga = g(a)
        if gb > 0:
            b = hi - 0.5 * (hi - b) if hi - b > tiny else hi - tiny
            gb = g(b)
    else:
        raise SolverError("U(0) bracket does not contain a sign change")
    for _ in range(max_iter):
        if b - a <= tol:
            break
        c = 0.5 * (a + b)
        gc = g(c)
        if gc == 0:
            a = b = c
            break
        if gc > 0:
            a, ga = c, gc
        else:
            b, gb = c, gc
    u0 = 0.5 * (a + b)
    pr = sh.critical(u0, eps, 1.0, cache.get(a, (guess_p, guess_p))[0])
    pl = sh.critical(u0, eps, -1.0, cache.get(a, (guess_p, guess_p))[1])
    return u0, pr, pl


def solve_scalar(D: ScalarDiffusivity, boundary: BoundaryPair,
                 config: Optional[ScalarSolveConfig] = None):
    """Monotone profile with U(-L) = U_- and U(L) = U_+.

    Returns ``(Profile, ScalarReport)``. Nondegenerate D (D_star > 0) is solved
    directly; otherwise the eps schedule is run with warm starts and nodes
    within ``snap_tol`` of the limits are snapped onto them.
    """
    config = config or ScalarSolveConfig()
    if boundary.m != 1:
        raise ValueError("scalar solver needs m = 1")
    lo, hi = float(boundary.U_minus[0]), float(boundary.U_plus[0])
    if lo > hi:
        raise ValueError("need U_- <= U_+; reflect y -> -y for decreasing data")
    grid = config.grid or default_grid(max(D.D_sup, 1e-300))
    y = grid.y
    if lo == hi:
        U = np.full(grid.n_points, lo)
        prof = Profile(grid, U, np.zeros_like(U), boundary)
        rep = ScalarReport(lo, 0.0, -math.inf, math.inf, True, (lo, lo), (0.0, 0.0))
        return prof, rep
    if D.D_star < 0:
        raise ValueError("D is negative on [U_-, U_+]")
    if D.D_sup <= 0:
        raise ValueError("D vanishes identically on [U_-, U_+]")

    jd, mode = _jit_diffusivity(D, lo, hi)
    sh = _Shooter(jd, grid, lo, hi, config.ode_steps, config.max_iter)
    dlt = hi - lo
    schedule = (0.0,) if D.D_star > 0 else config.eps_schedule
    u0_br, q0_br = q0_u0_brackets(D.D_star, D.D_sup, boundary)
    u0 = None
    for k, eps in enumerate(schedule):
        final = k == len(schedule) - 1
        sh.bisect_tol = 1e-14 if final else 1e-10
        br_u, br_q = q0_u0_brackets(D.D_star + eps, D.D_sup + eps, boundary)
        guess_p = math.log(0.5 * (br_q[0] + br_q[1]) if br_q[0] > 0 else br_q[1])
        if u0 is None:
            bracket = (max(br_u[0], lo + 1e-12 * dlt), min(br_u[1], hi - 1e-12 * dlt))
        else:
            w = 1e-2 * dlt
            bracket = (max(u0 - w, lo + 1e-12 * dlt), min(u0 + w, hi - 1e-12 * dlt))
            guess_p = 0.5 * (pr[0] + pl[0])
        u0, pr, pl = _balance(sh, eps, bracket, guess_p, config.max_iter,
                              (1e-15 if final else 1e-10) * dlt)

    eps = schedule[-1]
    # undershooting sides keep the profile inside [U_-, U_+]
    ur, qr = sh.trajectory(u0, pr[0], eps, 1.0)
    ul, ql = sh.trajectory(u0, pl[0], eps, -1.0)
    U = np.concatenate([ul[::-1], ur[1:]])
    P = np.concatenate([ql[::-1], qr[1:]])
    Q = np.exp(P)
    U = np.clip(U, lo, hi)
    support = (-math.inf, math.inf)
    flags = {"diffusivity_mode": mode, "regularized": eps > 0}
    if eps > 0:
        at_lo = np.abs(U - lo) <= config.snap_tol * max(1.0, abs(lo))
        at_hi = np.abs(U - hi) <= config.snap_tol * max(1.0, abs(hi))
        left = np.flatnonzero(at_lo & (y < 0))
        right = np.flatnonzero(at_hi & (y > 0))
        # a snapped node only marks a free boundary where D vanishes at the limit
        degen_lo = float(D.D(lo)) <= 1e-12 * D.D_sup
        degen_hi = float(D.D(hi)) <= 1e-12 * D.D_sup
        if left.size:
            k = left.max()
            U[: k + 1], Q[: k + 1] = lo, 0.0
            if degen_lo:
                support = (float(y[k]), support[1])
        if right.size:
            k = right.min()
            U[k:], Q[k:] = hi, 0.0
            if degen_hi:
                support = (support[0], float(y[k]))
        dvals = np.asarray(D.D(U), dtype=float) * np.ones_like(U)
        flags["singular_nodes"] = int(np.count_nonzero((dvals < 1e-8) & (Q > 1e-8 * dlt)
                                                       & (U > lo) & (U < hi)))
    Q0 = float(math.exp(0.5 * (pr[0] + pl[0])))
    prof = Profile(grid, U, Q, boundary, flags=dict(flags))
    mismatch = prof.boundary_mismatch()
    if mismatch > config.shoot_tol * max(1.0, dlt):
        raise SolverError(f"boundary mismatch {mismatch:.3e} exceeds shoot_tol")
    y_m, y_p = support_endpoints(D.D, boundary, u0, Q0)
    gb = verify_gaussian_bounds(prof, D.D_sup + eps)
    rep = ScalarReport(float(u0), Q0, y_m, y_p, bool(gb["ok"]),
                       tuple(q0_br), tuple(u0_br), eps, mismatch, support, flags)
    return prof, rep


# ---------------------------------------------------------------- checks

def verify_gaussian_bounds(profile: Profile, D_sup: float, rel_atol: float = 1e-9):
    """Worst multiplicative violation of the Gaussian tail bounds.

    For 0 <= z <= y the tails U_+ - U and the flux Q must decay at least like
    exp(-(y^2 - z^2) / (4 D_sup)), with the mirrored statements for y <= 0.
    Values below ``rel_atol`` (relative to Delta or max Q) are ignored as
    round-off. Returns a dict with the ratios and ``ok`` (all <= 1.02).
    """
    y = profile.y
    U = profile.U[:, 0]
    Q = profile.Q[:, 0]
    b = profile.boundary
    lo, hi = float(b.U_minus[0]), float(b.U_plus[0])
    dlt = hi - lo
    mid = profile.grid.mid
    out = {}
    if dlt == 0:
        return {"u_plus": 0.0, "u_minus": 0.0, "q_plus": 0.0, "q_minus": 0.0,
                "worst": 0.0, "ok": True}
    yr = y[mid:]
    e = yr ** 2 / (4.0 * D_sup)

    def worst_ratio(vals, atol):
        # vals on yr ordered outward; ratio vals[j] e^{e_j} / (vals[i] e^{e_i}) for i <= j
        with np.errstate(divide="ignore"):
            lv = np.where(vals > atol, np.log(np.maximum(vals, 1e-300)) + e, -np.inf)
        ok = vals > atol
        run_min = np.minimum.accumulate(np.where(ok, lv, np.inf))
        if not ok.any():
            return 0.0
        return float(np.exp(np.max(lv[ok] - run_min[ok])))

    atol_u = rel_atol * dlt
    atol_q = rel_atol * max(float(Q.max()), 1e-300)
    out["u_plus"] = worst_ratio(hi - U[mid:], atol_u)
    out["u_minus"] = worst_ratio((U[: mid + 1] - lo)[::-1], atol_u)
    out["q_plus"] = worst_ratio(Q[mid:], atol_q)
    out["q_minus"] = worst_ratio(Q[: mid + 1][::-1], atol_q)
    out["worst"] = max(out.values())
    out["ok"] = out["worst"] <= 1.02
    return out


def lp_derivative_check(profile: Profile, D: ScalarDiffusivity, p: float, theta: float):
    """Both sides of ||U'||_p^p <= C_hat^(p-1) * C_tilde.

    Returns dict(lhs, rhs, holds, skipped). ``skipped`` is set when the
    C_tilde integral diverges.
    """
    if not (0 < theta < 1) or p < 1:
        raise ValueError("need theta in (0, 1) and p >= 1")
    b = profile.boundary
    lo, hi = float(b.U_minus[0]), float(b.U_plus[0])
    y = profile.y
    U = profile.U[:, 0]
    dU = np.abs(np.diff(U)) / np.diff(y)
    # cellwise constant slope; exact total variation for p = 1
    lhs = float(np.sum(dU ** p * np.diff(y)))
    U0 = float(U[profile.grid.mid])
    c_hat = math.sqrt(2 * D.D_sup / (1 - theta)) * (hi - lo) / ((hi - U0) ** theta * (U0 - lo) ** theta)
    f = lambda u: (((hi - u) * (u - lo)) ** theta / max(float(D.D(u)), 1e-300)) ** (p - 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            c_tilde, err = quad(f, lo, hi, limit=400, points=[0.5 * (lo + hi)])
            bad = not math.isfinite(c_tilde) or err > 1e-6 * max(1.0, abs(c_tilde))
        except IntegrationWarning:
            c_tilde, bad = math.inf, True
    if bad:
        return {"lhs": lhs, "rhs": math.inf, "holds": None, "skipped": True}
    rhs = c_hat ** (p - 1) * c_tilde
    return {"lhs": lhs, "rhs": float(rhs), "holds": bool(lhs <= rhs), "skipped": False}


def flux_mass(profile: Profile) -> float:
    return float(trapezoid(profile.Q[:, 0], profile.y))


# ---------------------------------------------------------------- presets / oracles

def _y_tilde(u):
    # inverse of u = (3/2) y - (1/2) y^3 on [-1, 1]
    return 2.0 * np.sin(np.arcsin(np.clip(u, -1.0, 1.0)) / 3.0)


def preset_diffusivity(name: str, lo: float = None, hi: float = None, **params) -> ScalarDiffusivity:
    """Named diffusivities: constant, pme, degen_I, degen_II, degen_III, gl_phase."""
    if name in ("constant", "linear"):
        d = float(params.get("D", 1.0))
        if d <= 0:
            raise ValueError("constant D must be positive")
        lo = 0.0 if lo is None else lo
        hi = 1.0 if hi is None else hi
        return ScalarDiffusivity.on_interval(lambda u: d + 0.0 * u, lo, hi,
                                             A=lambda u: d * np.asarray(u, float), name="constant")
    if name == "pme":
        m = float(params.get("m", 2.0))
        if m < 1:
            raise ValueError("pme needs m >= 1")
        lo = 0.0 if lo is None else lo
        hi = 1.0 if hi is None else hi
        if lo < 0:
            raise ValueError("pme needs nonnegative states")
        return ScalarDiffusivity.on_interval(lambda u: m * np.abs(u) ** (m - 1), lo, hi,
                                             A=lambda u: np.abs(u) ** m, name=f"pme({m:g})")
    if name == "degen_I":
        return ScalarDiffusivity.on_interval(lambda u: 0.25 * (1.0 - u * u), -1.0, 1.0,
                                             A=lambda u: 0.25 * (u - u ** 3 / 3.0), name=name)
    if name == "degen_II":
        return ScalarDiffusivity.on_interval(lambda u: (1.0 - _y_tilde(u) ** 2) / 8.0, -1.0, 1.0,
                                             name=name, jit_ok=False)
    if name == "degen_III":
        # corrected prefactor 3/32 (see notes); gives U = inverse of (3/2)u - u^3/2
        return ScalarDiffusivity.on_interval(
            lambda u: 3.0 / 32.0 * (1.0 - u * u) ** 2 * (5.0 - u * u), -1.0, 1.0,
            A=lambda u: 3.0 / 32.0 * (5 * u - 11 * u ** 3 / 3 + 7 * u ** 5 / 5 - u ** 7 / 7),
            name=name)
    if name == "gl_phase":
        lo = -0.5 if lo is None else lo
        hi = 0.5 if hi is None else hi
        if not (-1 / math.sqrt(3) < lo <= hi < 1 / math.sqrt(3)):
            raise ValueError("gl_phase needs an interval inside (-1/sqrt(3), 1/sqrt(3))")
        return ScalarDiffusivity.on_interval(lambda u: (1.0 - 3.0 * u * u) / (1.0 - u * u), lo, hi,
                                             A=lambda u: 3.0 * u - np.log((1 + u) / (1 - u)),
                                             name=name)
    raise ValueError(f"unknown diffusivity preset {name!r}")


def closed_form_oracle(example_id: str, grid: Optional[Grid] = None, D: float = 1.0,
                       U_minus: float = 0.0, U_plus: float = 1.0):
    """Exact grid samples of the profiles with a closed form.

    ``linear`` uses the error function with constant ``D`` and limits
    ``U_minus``/``U_plus``; ``degen_I``..``degen_III`` are the compactly
    supported profiles on [-1, 1]. ``gl_phase`` has no closed-form profile and
    returns its :class:`ScalarDiffusivity` instead.
    """
    if example_id == "gl_phase":
        return preset_diffusivity("gl_phase")
    if example_id == "linear":
        if D <= 0:
            raise ValueError("D must be positive")
        grid = grid or default_grid(D)
        y = grid.y
        dlt = U_plus - U_minus
        U = U_minus + 0.5 * dlt * (1.0 + erf(y / (2.0 * math.sqrt(D))))
        Q = dlt * math.sqrt(D / (4 * math.pi)) * np.exp(-y ** 2 / (4 * D))
        U[grid.mid] = 0.5 * (U_minus + U_plus)
        return Profile(grid, U, Q, BoundaryPair([U_minus], [U_plus]), flags={"oracle": "linear"})
    if example_id not in ("degen_I", "degen_II", "degen_III"):
        raise ValueError(f"unknown example {example_id!r}")
    Dfun = preset_diffusivity(example_id)
    grid = grid or default_grid(Dfun.D_sup)
    y = grid.y
    t = np.clip(y, -1.0, 1.0)
    inside = np.abs(y) < 1.0
    if example_id == "degen_I":
        U, dU = t, inside.astype(float)
    elif example_id == "degen_II":
        U = 1.5 * t - 0.5 * t ** 3
        dU = np.where(inside, 1.5 * (1 - t * t), 0.0)
    else:
        U = _y_tilde(t)
        # D(U) U' simplifies since U' = 2 / (3 (1 - U^2))
        Q = np.where(inside, (1.0 - U * U) * (5.0 - U * U) / 16.0, 0.0)
    if example_id != "degen_III":
        Q = np.where(inside, np.asarray(Dfun.D(U), float) * dU, 0.0)
    U[grid.mid] = 0.0
    return Profile(grid, U, Q, BoundaryPair([-1.0], [1.0]), flags={"oracle": example_id})
