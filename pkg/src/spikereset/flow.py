"""Deterministic flow machinery for a fixed eps.

The flow solves ``eps * dx/dt = omega(x) = eps*f(x) + x*h(x)`` from ``x = 0``.
Everything is expressed through the two increasing integrals

    U(x) = int_0^x dy / omega(y)          (so that t = eps * U(x_t))
    V(x) = int_0^x h(y) / omega(y) dy     (so that survival = exp(-V(x_t)))

which diverge logarithmically at the attracting zero ``x_star`` of omega.
Both are tabulated once per context on an adaptive Gauss-Legendre panel grid
over ``[0, x_ref]`` with ``x_ref = x_star - eta_tail``; on ``(x_ref, x_star)``
a closed-form model (omega expanded to second order, h to first order around
``x_star``) is used.  The tail is parametrised by ``L = log(eta_tail / (x_star - x))``
so that arbitrarily deep excursions never underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, optimize

from .model import Model

__all__ = [
    "DEFAULT_BETA",
    "DomainError",
    "BracketError",
    "QuadratureError",
    "FlowContext",
    "ExpansionTerms",
    "CycleTable",
    "gamma",
    "max_valid_eps",
]

DEFAULT_BETA = 0.49
GL_ORDER = 20
_ROUND = 16 * np.finfo(float).eps
_GL_X, _GL_W = leggauss(GL_ORDER)


class DomainError(ValueError):
    pass


class BracketError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExpansionTerms:
    leading_log: float
    constant: float
    integral_correction: float
    log_x: float
    remainder_bound: float

    @property
    def total(self) -> float:
        return self.leading_log + self.constant + self.integral_correction + self.log_x


@dataclass(frozen=True)
class CycleTable:
    """Arrays consumed by the compiled cycle sampler.

    Nodes are indexed by the cumulative hazard ``E = V(x)``; ``x`` and the
    elapsed time ``t = eps*U(x)`` are cubic-Hermite interpolated in ``E`` using
    the exact slopes ``dx/dE = omega/h`` and ``dt/dE = eps/h``.
    """

    E: np.ndarray
    x: np.ndarray
    t: np.ndarray
    dx: np.ndarray
    dt: np.ndarray
    E_star: float       # V(y_star): cycles with E > E_star cross y_star
    T_star: float
    x_star: float
    eta: float
    tail: np.ndarray    # [a, b, hstar, k, eps]
    bucket: np.ndarray  # panel index at each of len(bucket)-1 equal E-steps on [0, E[-1]]


def _gl_panels(fn, lo, hi):
    """Gauss-Legendre integral of ``fn`` over each ``[lo_i, hi_i]`` (vectorised)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[..., None] + half[..., None] * _GL_X
    return half * (fn(pts) @ _GL_W)


def _phi(u, a, b):
    # log1p(b*u/a)/b, continuous in b -> 0
    r = b * u / a
    if abs(r) < 1e-8:
        return (u / a) * (1.0 - 0.5 * r)
    return math.log1p(r) / b


class FlowContext:
    """All eps-specific deterministic quantities of the flow.

    Immutable after construction; lazily computed attributes are pure
    functions of the constructor arguments.
    """

    def __init__(self, model: Model, eps: float, beta: float = DEFAULT_BETA,
                 quad_tol: float = 1e-10, root_tol: float = 1e-12):
        if not eps > 0:
            raise DomainError(f"eps must be positive, got {eps}")
        if not 0 < beta < 0.5:
            raise DomainError(f"beta must lie in (0, 1/2), got {beta}")
        self.model = model
        self.eps = float(eps)
        self.beta = float(beta)
        self.quad_tol = float(quad_tol)
        self.root_tol = float(root_tol)
        self.x_star = self._find_x_star()
        self.y_star = 1.0 - self.eps ** self.beta
        if not self.y_star < self.x_star:
            raise DomainError(
                f"y_star={self.y_star:.6g} >= x_star={self.x_star:.6g}: eps={eps} is above "
                f"the admissible threshold {max_valid_eps(model, beta):.3g} for beta={beta}")
        self.eta_tail = max(1e-12, 1e-3 * (self.x_star - self.y_star))
        self.x_ref = self.x_star - self.eta_tail
        self._build_tail()
        self._build_table()
        self.T_star = self.eps * self.U(self.y_star)

    # ------------------------------------------------------------------ basics
    def omega(self, x):
        x_arr = np.asarray(x, dtype=float)
        if np.any((x_arr < 0) | (x_arr > 1)):
            raise DomainError("omega is defined on [0, 1]")
        return self._omega(x)

    def _omega(self, x):
        m = self.model
        return self.eps * m.f(x) + x * m.h(x)

    def _domega(self, x):
        m = self.model
        return self.eps * m.fprime(x) + m.h(x) + x * m.hprime(x)

    def _d2omega(self, x):
        m = self.model
        return self.eps * m.fsecond(x) + 2.0 * m.hprime(x) + x * m.hsecond(x)

    def _find_x_star(self) -> float:
        if not self._omega(0.0) > 0:
            raise BracketError(f"omega(0) = {self._omega(0.0)} <= 0")
        grid = np.linspace(0.0, 1.0, 4097)
        w = self._omega(grid)
        neg = np.flatnonzero(w <= 0)
        if neg.size == 0:
            raise BracketError("omega has no sign change on [0, 1]")
        j = neg[0]
        if w[j] == 0:
            return float(grid[j])
        lo, hi = float(grid[j - 1]), float(grid[j])
        root = optimize.brentq(self._omega, lo, hi, xtol=self.root_tol * 1e-2, rtol=4 * np.finfo(float).eps)
        d = float(self._domega(root))
        if d != 0:
            polished = root - float(self._omega(root)) / d
            if lo < polished < hi and abs(self._omega(polished)) <= abs(self._omega(root)):
                root = polished
        return float(root)

    # ------------------------------------------------------------------- tail
    def _build_tail(self):
        xs = self.x_star
        a = -float(self._domega(xs))
        if not a > 0:
            raise BracketError(f"omega'(x_star) = {-a} is not negative")
        b = 0.5 * float(self._d2omega(xs))
        hstar = float(self.model.h(xs))
        c = -float(self.model.hprime(xs))
        self._tail_a, self._tail_b = a, b
        self._tail_hstar = hstar
        self._tail_k = c - hstar * b / a
        self._phi_eta = _phi(self.eta_tail, a, b)

    def _tail_UV(self, L: float):
        """Increments of (U, V) from x_ref to the point x_star - eta*exp(-L)."""
        a, b = self._tail_a, self._tail_b
        u = self.eta_tail * math.exp(-L)
        dphi = self._phi_eta - _phi(u, a, b)
        dU = L / a - (b / a) * dphi
        dV = (self._tail_hstar / a) * L + self._tail_k * dphi
        return dU, dV

    def _tail_x(self, L: float) -> float:
        x = self.x_star - self.eta_tail * math.exp(-L)
        return min(x, math.nextafter(self.x_star, 0.0))

    def _tail_solve(self, target: float, which: int) -> float:
        """Find L >= 0 with (dU, dV)[which](L) = target (both increasing in L)."""
        if target <= 0:
            return 0.0
        a = self._tail_a
        slope = 1.0 / a if which == 0 else self._tail_hstar / a
        g = lambda L: self._tail_UV(L)[which] - target
        # the bounded log1p term changes the value by at most O(eta)
        lo, hi = 0.0, 1.0
        if slope > 0:
            hi = max(1.0, 2.0 * (target + abs(self._tail_k * self._phi_eta) + abs(self._tail_b * self._phi_eta / a)) / slope)
        while g(hi) < 0:
            hi *= 2.0
            if hi > 1e300:
                return math.inf
        return optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-15)

    # ------------------------------------------------------------------ table
    def _integrands(self, pts):
        w = self._omega(pts)
        return 1.0 / w, self.model.h(pts) / w

    def _initial_nodes(self) -> np.ndarray:
        m = self.model
        scale = self.eps * m.f0 / m.h0
        left = scale * np.geomspace(1e-3, 1e3, 61)
        mid = np.linspace(0.0, self.x_ref, 65)
        right = self.x_star - self.eta_tail * np.geomspace(1.0, max(2.0, self.x_star / self.eta_tail), 61)
        nodes = np.concatenate([[0.0, self.y_star, self.x_ref], left, mid, right])
        nodes = nodes[(nodes >= 0) & (nodes <= self.x_ref)]
        return np.unique(nodes)

    def _build_table(self):
        nodes = self._initial_nodes()
        panel_rtol = min(1e-13, self.quad_tol * 1e-3)
        eps = self.eps
        for _ in range(80):
            lo, hi = nodes[:-1], nodes[1:]
            mid = 0.5 * (lo + hi)
            iu_w = _gl_panels(lambda p: self._integrands(p)[0], lo, hi)
            iv_w = _gl_panels(lambda p: self._integrands(p)[1], lo, hi)
            iu_l = _gl_panels(lambda p: self._integrands(p)[0], lo, mid)
            iv_l = _gl_panels(lambda p: self._integrands(p)[1], lo, mid)
            iu_r = _gl_panels(lambda p: self._integrands(p)[0], mid, hi)
            iv_r = _gl_panels(lambda p: self._integrands(p)[1], mid, hi)
            iu, iv = iu_l + iu_r, iv_l + iv_r
            U = np.concatenate([[0.0], np.cumsum(iu)])
            V = np.concatenate([[0.0], np.cumsum(iv)])
            # floors: rounding of the running sums, not of the panel values
            bad = np.abs(iu - iu_w) > panel_rtol * np.abs(iu) + _ROUND * U[1:]
            bad |= np.abs(iv - iv_w) > panel_rtol * np.abs(iv) + _ROUND * V[1:]

            # Hermite check of x(E), t(E) at each panel's x-midpoint
            w_n = self._omega(nodes)
            h_n = self.model.h(nodes)
            dx = w_n / h_n
            dt = eps / h_n
            Em = V[:-1] + iv_l
            xm_h = _hermite(Em, V[:-1], V[1:], lo, hi, dx[:-1], dx[1:])
            tm_h = _hermite(Em, V[:-1], V[1:], eps * U[:-1], eps * U[1:], dt[:-1], dt[1:])
            tm = eps * (U[:-1] + iu_l)
            e_floor = _ROUND * V[1:]
            bad |= np.abs(xm_h - mid) > 1e-12 * mid + e_floor * dx[1:] + _ROUND * mid
            bad |= np.abs(tm_h - tm) > 1e-11 * tm + e_floor * dt[1:]
            if not bad.any():
                break
            nodes = np.unique(np.concatenate([nodes, mid[bad]]))
        else:
            raise QuadratureError(f"panel refinement did not converge for eps={eps}")
        self._nodes = nodes
        self._U = U
        self._V = V
        self._dx = dx
        self._dt = dt
        self.U_ref = float(U[-1])
        self.V_ref = float(V[-1])

    # ------------------------------------------------------------- U and V
    def _partial(self, x, which):
        """Integral from the panel node at or below x, plus the node value."""
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self._nodes, x, side="right") - 1, 0, len(self._nodes) - 2)
        base = (self._U if which == 0 else self._V)[idx]
        part = _gl_panels(lambda p: self._integrands(p)[which], self._nodes[idx], x)
        return base + part

    def _UV(self, x, which):
        x_arr = np.asarray(x, dtype=float)
        scalar = x_arr.ndim == 0
        x_arr = np.atleast_1d(x_arr)
        if np.any(x_arr < 0) or np.any(x_arr >= self.x_star):
            raise DomainError(f"argument must lie in [0, x_star={self.x_star!r})")
        out = np.empty_like(x_arr)
        inner = x_arr <= self.x_ref
        if inner.any():
            out[inner] = self._partial(x_arr[inner], which)
        for i in np.flatnonzero(~inner):
            L = math.log(self.eta_tail / (self.x_star - x_arr[i]))
            out[i] = (self.U_ref, self.V_ref)[which] + self._tail_UV(L)[which]
        return float(out[0]) if scalar else out

    def U(self, x):
        """Time integral ``int_0^x dy/omega(y)`` on ``[0, x_star)``."""
        return self._UV(x, 0)

    def V(self, x):
        """Cumulative hazard ``int_0^x h(y)/omega(y) dy`` on ``[0, x_star)``."""
        return self._UV(x, 1)

    def T_c(self, c: float) -> float:
        """Hitting time of level ``c`` by the flow started at 0."""
        if not 0 < c < self.x_star:
            raise DomainError(f"c must lie in (0, x_star={self.x_star!r})")
        return self.eps * self.U(c)

    def _invert(self, target: float, which: int):
        """Return (x, L) where L is the tail depth (None below x_ref)."""
        vals = self._U if which == 0 else self._V
        if target <= 0:
            return 0.0, None
        ref = vals[-1]
        if target > ref:
            L = self._tail_solve(target - ref, which)
            return self._tail_x(L), L
        i = int(np.clip(np.searchsorted(vals, target, side="right") - 1, 0, len(vals) - 2))
        lo, hi = self._nodes[i], self._nodes[i + 1]
        if target == vals[i]:
            return float(lo), None
        g = lambda x: float(self._partial(x, which)) - target
        return optimize.brentq(g, lo, hi, xtol=self.root_tol * 1e-2 * min(1.0, hi), rtol=4 * np.finfo(float).eps), None

    def flow_at_time(self, t: float) -> float:
        """Position of the flow at time t (solves ``eps*U(x) = t``)."""
        if t < 0:
            raise DomainError("t must be non-negative")
        return self._invert(t / self.eps, 0)[0]

    def inverse_V(self, E: float, return_depth: bool = False):
        """Position where the cumulative hazard reaches E.

        Beyond ``x_ref`` the distance to ``x_star`` quickly drops below float
        resolution; with ``return_depth=True`` the tail depth
        ``L = log(eta_tail / (x_star - x))`` is returned as well (None when
        the point is resolved by the panel table).
        """
        if E < 0:
            raise DomainError("E must be non-negative")
        x, L = self._invert(E, 1)
        return (x, L) if return_depth else x

    def UV_at_depth(self, L: float):
        """(U, V) at tail depth L >= 0, i.e. at ``x_star - eta_tail*exp(-L)``."""
        if L < 0:
            raise DomainError("tail depth must be non-negative")
        dU, dV = self._tail_UV(L)
        return self.U_ref + dU, self.V_ref + dV

    def survival_mu(self, t: float) -> float:
        """P(cycle duration > t) = exp(-V(x_t))."""
        if t < 0:
            raise DomainError("t must be non-negative")
        x, L = self._invert(t / self.eps, 0)
        if L is not None:
            return math.exp(-self.UV_at_depth(L)[1])
        return math.exp(-self.V(x))

    # ------------------------------------------------------------- sampling
    @cached_property
    def cycle_table(self) -> CycleTable:
        edges = np.linspace(0.0, self._V[-1], 4 * len(self._V) + 1)
        bucket = np.clip(np.searchsorted(self._V, edges, side="right") - 1, 0, len(self._V) - 2)
        return CycleTable(
            E=np.ascontiguousarray(self._V),
            x=np.ascontiguousarray(self._nodes),
            t=np.ascontiguousarray(self.eps * self._U),
            dx=np.ascontiguousarray(self._dx),
            dt=np.ascontiguousarray(self._dt),
            E_star=float(self.V(self.y_star)),
            T_star=self.T_star,
            x_star=self.x_star,
            eta=self.eta_tail,
            tail=np.array([self._tail_a, self._tail_b, self._tail_hstar, self._tail_k, self.eps]),
            bucket=bucket.astype(np.int64),
        )

    @property
    def panel_nodes(self) -> np.ndarray:
        """Breakpoints of the adaptive quadrature table on ``[0, x_ref]``."""
        v = self._nodes.view()
        v.flags.writeable = False
        return v

    @property
    def V_star(self) -> float:
        return self.cycle_table.E_star

    # ------------------------------------------------------------ expansions
    def frak_h(self, x: float) -> float:
        """``inf_{[0, x]} h`` on a dense grid plus the endpoint."""
        grid = np.append(np.linspace(0.0, x, 2001), x)
        return float(np.min(self.model.h(grid)))

    def U_expansion(self, x: float, alpha: float) -> ExpansionTerms:
        """Small-eps expansion of U(x) with its remainder envelope."""
        _check_expansion_args(x, alpha)
        m = self.model
        hx = self.frak_h(x)
        return ExpansionTerms(
            leading_log=-math.log(self.eps) / m.h0,
            constant=math.log(m.h0 / m.f0) / m.h0,
            integral_correction=_gamma_integral(m, x),
            log_x=math.log(x) / m.h0,
            remainder_bound=self.eps ** (0.5 - alpha) / hx + self.eps ** (2 * alpha),
        )

    def V_expansion(self, x: float, alpha: float) -> ExpansionTerms:
        """Small-eps expansion of V(x) with its remainder envelope."""
        _check_expansion_args(x, alpha)
        m = self.model
        hx = self.frak_h(x)
        return ExpansionTerms(
            leading_log=-math.log(self.eps),
            constant=math.log(m.h0 / m.f0),
            integral_correction=0.0,
            log_x=math.log(x),
            remainder_bound=self.eps ** (0.5 - alpha) / hx + self.eps ** (2 * alpha) * hx,
        )

    def summary(self) -> dict:
        return {
            "eps": self.eps, "beta": self.beta, "x_star": self.x_star, "y_star": self.y_star,
            "T_star": self.T_star, "V_star": self.V_star, "eta_tail": self.eta_tail,
            "panels": len(self._nodes) - 1,
        }


def _check_expansion_args(x, alpha):
    if not 0 < x < 1:
        raise DomainError("x must lie in (0, 1)")
    if not 0 < alpha < 0.5:
        raise DomainError("alpha must lie in (0, 1/2)")


def _hermite(E, E0, E1, y0, y1, m0, m1):
    h = E1 - E0
    s = (E - E0) / h
    s2, s3 = s * s, s * s * s
    return ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * m0
            + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * m1)


def _gamma_integrand(m: Model, y):
    # (h0 - h(y)) / (y h(y) h0); removable at 0 with limit -h'(0)/h0^2
    if y == 0.0:
        return -float(m.hprime(0.0)) / m.h0 ** 2
    hy = float(m.h(y))
    return (m.h0 - hy) / (y * hy * m.h0)


def _gamma_integral(m: Model, c: float, tol: float = 1e-12) -> float:
    val, err = integrate.quad(lambda y: _gamma_integrand(m, y), 0.0, c, epsabs=0.0, epsrel=tol, limit=200)
    if not np.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise QuadratureError(f"gamma integral did not converge at c={c} (err={err:.3g})")
    return float(val)


def gamma(m: Model, c: float) -> float:
    """Order-eps constant in the hitting time: T_c = -(eps/h0) log eps + gamma(c) eps + o(eps)."""
    if not 0 < c < 1:
        raise DomainError("c must lie in (0, 1)")
    return math.log(m.h0 / m.f0) / m.h0 + _gamma_integral(m, c) + math.log(c) / m.h0


def max_valid_eps(m: Model, beta: float = DEFAULT_BETA) -> float:
    """Upper end of the range (0, eps_max) on which ``1 - eps**beta < x_star``."""
    def gap(log_eps):
        eps = math.exp(log_eps)
        w = lambda x: eps * m.f(x) + x * m.h(x)
        grid = np.linspace(0.0, 1.0, 4097)
        vals = w(grid)
        j = np.flatnonzero(vals <= 0)
        if j.size == 0 or vals[0] <= 0:
            return -1.0
        xs = optimize.brentq(w, grid[j[0] - 1], grid[j[0]]) if vals[j[0]] != 0 else grid[j[0]]
        return xs - (1.0 - eps ** beta)

    # the admissible set starts at eps -> 0 but need not be an interval, so
    # scan upward for the first failure before bisecting
    logs = np.linspace(math.log(1e-12), 0.0, 241)
    if gap(logs[0]) <= 0:
        return 0.0
    bad = next((i for i, le in enumerate(logs) if gap(le) <= 0), None)
    if bad is None:
        return 1.0
    lo, hi = logs[bad - 1], logs[bad]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    return math.exp(lo)
