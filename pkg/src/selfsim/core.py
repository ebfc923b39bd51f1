"""Shared types: grids, boundary data, the smoothed step interpolant, profiles,
constitutive maps and sampled certification of their monotonicity constants."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar


class SolverError(RuntimeError):
    """Raised when an iterative solver fails to reach its tolerance."""


class HypothesisError(ValueError):
    """Raised when certified constants violate a solver precondition."""


def _finite(arr, name):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [-L, L] with an odd number of nodes (y = 0 is a node)."""

    half_width: float
    n_points: int

    def __post_init__(self):
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ValueError("half_width must be positive and finite")
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise ValueError("n_points must be an odd integer >= 3")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    @property
    def y(self) -> np.ndarray:
        # built from the symmetric index so that y[mid] == 0.0 exactly
        k = np.arange(self.n_points) - (self.n_points - 1) // 2
        return k * self.h

    @property
    def mid(self) -> int:
        return (self.n_points - 1) // 2


def default_half_width(d_sup: float, a_up: float = 0.0) -> float:
    """Truncation width such that exp(-L^2 / (4 max(d_sup, a_up))) < 1e-12."""
    scale = max(float(d_sup), float(a_up))
    if scale <= 0:
        raise ValueError("need a positive diffusivity scale")
    return float(math.ceil(math.sqrt(4.0 * scale * 27.7)))


def default_grid(d_sup: float, a_up: float = 0.0, n_points: int = 2001) -> Grid:
    return Grid(default_half_width(d_sup, a_up), n_points)


@dataclass(frozen=True)
class BoundaryPair:
    """Limits U_- (y -> -inf) and U_+ (y -> +inf)."""

    U_minus: np.ndarray
    U_plus: np.ndarray

    def __init__(self, U_minus, U_plus):
        lo = np.atleast_1d(_finite(U_minus, "U_minus")).astype(float)
        hi = np.atleast_1d(_finite(U_plus, "U_plus")).astype(float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("U_minus and U_plus must be vectors of equal length")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "U_minus", lo)
        object.__setattr__(self, "U_plus", hi)

    @property
    def m(self) -> int:
        return self.U_minus.size

    @property
    def delta(self) -> float:
        return float(np.linalg.norm(self.U_plus - self.U_minus))

    def step(self, y) -> np.ndarray:
        """Piecewise constant limit function, midpoint value at y = 0; shape (n, m)."""
        y = np.asarray(y, dtype=float)
        s = np.sign(y)[:, None]
        return 0.5 * (1 - s) * self.U_minus + 0.5 * (1 + s) * self.U_plus


# odd quintic, C^2 at +-1
def _chi(t):
    t = np.clip(t, -1.0, 1.0)
    return t * (15.0 - t * t * (10.0 - 3.0 * t * t)) / 8.0


def _chi1(t):
    inside = np.abs(t) < 1.0
    return np.where(inside, 15.0 / 8.0 * (1.0 - t * t) ** 2, 0.0)


def _chi2(t):
    inside = np.abs(t) < 1.0
    return np.where(inside, -7.5 * t * (1.0 - t * t), 0.0)


@dataclass(frozen=True)
class SmoothInterpolant:
    """Odd saturating step chi with chi = +-1 for +-t >= 1, plus derivatives."""

    chi: Callable = _chi
    dchi: Callable = _chi1
    d2chi: Callable = _chi2


@dataclass(frozen=True)
class TildeU:
    """Smoothed step chi(y / sqrt(a_up)) between U_- and U_+.

    The transition occupies |y| < sqrt(a_up); outside it equals the step.
    """

    boundary: BoundaryPair
    a_up: float
    interp: SmoothInterpolant = field(default_factory=SmoothInterpolant)

    @property
    def width(self) -> float:
        return math.sqrt(self.a_up)

    def _jump(self):
        return self.boundary.U_plus - self.boundary.U_minus

    def __call__(self, y) -> np.ndarray:
        t = np.asarray(y, dtype=float) / self.width
        c = self.interp.chi(t)[:, None]
        b = self.boundary
        return 0.5 * (1 - c) * b.U_minus + 0.5 * (1 + c) * b.U_plus

    def d1(self, y) -> np.ndarray:
        s = self.width
        t = np.asarray(y, dtype=float) / s
        return 0.5 / s * self.interp.dchi(t)[:, None] * self._jump()

    def d2(self, y) -> np.ndarray:
        t = np.asarray(y, dtype=float) / self.width
        return 0.5 / self.a_up * self.interp.d2chi(t)[:, None] * self._jump()


def build_tilde_u(boundary: BoundaryPair, a_up: float,
                  chi: Optional[SmoothInterpolant] = None) -> TildeU:
    if not (a_up > 0 and math.isfinite(a_up)):
        raise ValueError("a_up must be positive and finite")
    return TildeU(boundary, float(a_up), chi or SmoothInterpolant())


@dataclass
class Profile:
    """Grid samples of a profile U (n, m) and its flux Q = (A(U))' (n, m)."""

    grid: Grid
    U: np.ndarray
    Q: np.ndarray
    boundary: BoundaryPair
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float).reshape(self.grid.n_points, -1)
        self.Q = np.asarray(self.Q, dtype=float).reshape(self.grid.n_points, -1)
        if self.U.shape[1] != self.boundary.m or self.Q.shape != self.U.shape:
            raise ValueError("profile arrays do not match grid/boundary dimensions")

    @property
    def y(self) -> np.ndarray:
        return self.grid.y

    @property
    def m(self) -> int:
        return self.U.shape[1]

    def boundary_mismatch(self) -> float:
        return float(max(np.abs(self.U[0] - self.boundary.U_minus).max(),
                         np.abs(self.U[-1] - self.boundary.U_plus).max()))


@dataclass(frozen=True)
class VectorFluxMap:
    """A: R^m -> R^m with Jacobian; constants as certified (None if unknown).

    ``A`` maps arrays of shape (..., m) to (..., m) and ``jacobian`` maps them
    to (..., m, m).
    """

    A: Callable
    jacobian: Callable
    a_lo: Optional[float] = None
    a_up: Optional[float] = None
    delta: Optional[float] = None
    name: str = "custom"

    def with_constants(self, report: "ConstantsReport") -> "VectorFluxMap":
        return VectorFluxMap(self.A, self.jacobian, report.a_lo, report.a_up,
                             report.delta, self.name)

    def regularized(self, eps: float) -> "VectorFluxMap":
        """A_eps(u) = A(u) + eps*u."""
        if eps == 0:
            return self
        A, J = self.A, self.jacobian

        def A_eps(u):
            return A(u) + eps * np.asarray(u, dtype=float)

        def J_eps(u):
            jac = np.array(J(u), dtype=float)
            return jac + eps * np.eye(jac.shape[-1])

        a_lo = None if self.a_lo is None else self.a_lo + eps
        a_up = None if self.a_up is None else self.a_up + eps
        delta = None
        if self.delta is not None:
            delta = self.delta / (1 + self.delta * eps) if self.delta > 0 else self.delta
        return VectorFluxMap(A_eps, J_eps, a_lo, a_up, delta, f"{self.name}+{eps:g}u")


def linear_flux_map(Amat, name="linear") -> VectorFluxMap:
    Amat = np.atleast_2d(np.asarray(Amat, dtype=float))
    m = Amat.shape[0]

    def jac(u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(Amat, u.shape[:-1] + (m, m)).copy()

    return VectorFluxMap(lambda u: np.asarray(u, dtype=float) @ Amat.T, jac, name=name)


@dataclass(frozen=True)
class ScalarDiffusivity:
    """D(u) >= 0 with its min/max over the interval [lo, hi].

    ``D`` must accept floats and numpy arrays. ``A`` (antiderivative of D) is
    optional and only needed by the evolution and vector solvers.
    """

    D: Callable
    D_star: float
    D_sup: float
    lo: float
    hi: float
    A: Optional[Callable] = None
    name: str = "custom"
    jit_ok: bool = True

    @classmethod
    def on_interval(cls, D, lo, hi, A=None, name="custom", samples=4001, jit_ok=True):
        lo, hi = float(lo), float(hi)
        if hi < lo:
            raise ValueError("interval must satisfy lo <= hi")
        u = np.linspace(lo, hi, samples)
        vals = np.asarray(D(u), dtype=float) * np.ones_like(u)
        if not np.all(np.isfinite(vals)):
            raise ValueError("D is not finite on the interval")
        if vals.min() < 0:
            raise ValueError(f"D is negative on [{lo}, {hi}] (min {vals.min():.3e})")
        d_star, d_sup = float(vals.min()), float(vals.max())
        if hi > lo:
            # polish the sampled extrema; sampling alone can miss the peak
            du = (hi - lo) / (samples - 1)
            for sign, idx in ((1.0, int(vals.argmin())), (-1.0, int(vals.argmax()))):
                a, b = max(lo, u[idx] - du), min(hi, u[idx] + du)
                if b > a:
                    res = minimize_scalar(lambda s: sign * float(D(s)), bounds=(a, b),
                                          method="bounded", options={"xatol": 1e-13})
                    val = float(D(res.x))
                    if sign > 0:
                        d_star = min(d_star, val)
                    else:
                        d_sup = max(d_sup, val)
        if d_star < 0:
            raise ValueError("D is negative on the interval")
        return cls(D, max(d_star, 0.0), d_sup, lo, hi, A, name, jit_ok)

    def __call__(self, u):
        return self.D(u)

    def antiderivative(self, u):
        """A(u) = int_lo^u D; closed form when given, else adaptive quadrature."""
        if self.A is not None:
            return self.A(u)
        from scipy.integrate import quad
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.array([quad(self.D, self.lo, x, limit=200)[0] for x in u])


@dataclass(frozen=True)
class ConstantsReport:
    """Sampled estimates of the monotonicity constants over a box."""

    a_lo: float
    a_up: float
    delta: float
    n_samples: int
    box: tuple
    sampled: bool = True

    def as_tuple(self):
        return self.a_lo, self.a_up, self.delta

    def hypothesis_ok(self) -> bool:
        return self.a_lo + self.delta > 0


def _pointwise_constants(J, tol=1e-12):
    J = np.atleast_2d(np.asarray(J, dtype=float))
    if not np.all(np.isfinite(J)):
        raise ValueError("non-finite Jacobian entry")
    S = 0.5 * (J + J.T)
    lam_min = float(np.linalg.eigvalsh(S)[0])
    sv = np.linalg.svd(J, compute_uv=False)
    norm = float(sv[0])
    if norm == 0.0:
        return lam_min, norm, 0.0
    if sv[-1] <= tol * norm:
        # a direction with DA v = 0 gives 0/0; report 0 unless S is indefinite
        return lam_min, norm, 0.0 if lam_min >= -tol * norm else -math.inf
    from scipy.linalg import eigh
    delta = float(eigh(S, J.T @ J, eigvals_only=True)[0])
    return lam_min, norm, delta


def certify_constants(A, box: Sequence[Sequence[float]], sample_count: int = 17) -> ConstantsReport:
    """Estimate (a_lo, a_up, delta) for DA on an axis-aligned box.

    ``A`` is a VectorFluxMap or a Jacobian callable. ``box`` is a sequence of
    (low, high) pairs, one per coordinate. Samples form a tensor grid with
    ``sample_count`` points per axis (corners included), so a_lo and delta are
    upper estimates of the true infima and a_up a lower estimate of the supremum.
    """
    jac = A.jacobian if hasattr(A, "jacobian") else A
    box = [tuple(map(float, b)) for b in box]
    if not box:
        raise ValueError("empty box")
    for lo, hi in box:
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise ValueError(f"invalid box side {(lo, hi)}")
    axes = [np.linspace(lo, hi, sample_count) if hi > lo else np.array([lo]) for lo, hi in box]
    a_lo, a_up, delta = math.inf, 0.0, math.inf
    n = 0
    for pt in itertools.product(*axes):
        lam, norm, dl = _pointwise_constants(jac(np.array(pt)))
        a_lo, a_up, delta = min(a_lo, lam), max(a_up, norm), min(delta, dl)
        n += 1
    return ConstantsReport(a_lo, a_up, delta, n, tuple(box))


def hull_box(boundary: BoundaryPair, pad: float = 0.0, floor: Optional[float] = None):
    """Axis-aligned hull of the boundary values, padded by ``pad`` * Delta."""
    lo = np.minimum(boundary.U_minus, boundary.U_plus) - pad * boundary.delta
    hi = np.maximum(boundary.U_minus, boundary.U_plus) + pad * boundary.delta
    if floor is not None:
        lo = np.maximum(lo, floor)
    return [(float(a), float(b)) for a, b in zip(lo, hi)]


def trapezoid(f, y, axis=0):
    return np.trapezoid(f, y, axis=axis) if hasattr(np, "trapezoid") else np.trapz(f, y, axis=axis)
