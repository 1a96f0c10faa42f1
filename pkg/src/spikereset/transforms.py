"""Laplace-domain quantities of the renewal structure and their small-eps limits.

With ``w(x) = exp(-sigma*eps*U(x) - V(x))`` and ``omega = eps*f + x*h``:

    D = int_a^b' w h/omega dx,        b' = min(b, y_star)
    C = int_0^y_star w h/omega dx - D
    E = eps * int_0^y_star w/omega dx

All three are x-domain integrals over the panels of the flow table, split at
``a`` and ``b'``, so the boundary layer at x = 0 is already resolved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .flow import FlowContext, QuadratureError
from .model import Model

__all__ = [
    "TransformValues",
    "LimitZ",
    "OutsideRadius",
    "cde",
    "Z_eps",
    "Z_eps_error",
    "Z_limit",
    "radius",
    "limit_z",
    "P_nj_hat",
    "P_nj_limit",
    "limit_cde_over_eps",
]

_HI_X, _HI_W = leggauss(20)
_LO_X, _LO_W = leggauss(12)


class OutsideRadius(ValueError):
    pass


@dataclass(frozen=True)
class TransformValues:
    C: float
    D: float
    E: float
    sigma: float
    a: float
    b: float
    err_est: float


@dataclass(frozen=True)
class LimitZ:
    sigma: float
    a: float
    b: float
    radius: float


def _check_window(a: float, b: float):
    if not (0 < a <= b <= 1):
        raise ValueError(f"need 0 < a <= b <= 1, got a={a}, b={b}")


def _panel_sums(ctx: FlowContext, sigma: float, lo: np.ndarray, hi: np.ndarray):
    """Per-panel integrals of w*h/omega and eps*w/omega, plus a crude error bound."""
    out = []
    for X, W in ((_HI_X, _HI_W), (_LO_X, _LO_W)):
        half = 0.5 * (hi - lo)
        pts = (0.5 * (hi + lo))[:, None] + half[:, None] * X
        flat = pts.ravel()
        U = ctx.U(flat)
        V = ctx.V(flat)
        w = np.exp(-sigma * ctx.eps * U - V)
        om = ctx.eps * ctx.model.f(flat) + flat * ctx.model.h(flat)
        g = (w * ctx.model.h(flat) / om).reshape(pts.shape) @ W * half
        k = (ctx.eps * w / om).reshape(pts.shape) @ W * half
        out.append((g, k))
    (g, k), (g_lo, k_lo) = out
    # rule difference plus a rounding floor for summing O(1) panel values
    floor = 8 * np.finfo(float).eps * (float(np.sum(np.abs(g))) + float(np.sum(np.abs(k))))
    err = max(float(np.sum(np.abs(g - g_lo))), float(np.sum(np.abs(k - k_lo)))) + floor
    return g, k, err


def cde(ctx: FlowContext, sigma: float, a: float, b: float) -> TransformValues:
    """C, D and E for the window [a, b] at Laplace variable sigma."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    _check_window(a, b)
    y = ctx.y_star
    bp = min(b, y)
    nodes = ctx.panel_nodes
    cuts = [c for c in (a, bp) if 0 < c < y]
    grid = np.unique(np.concatenate([nodes[nodes < y], cuts, [y]]))
    lo, hi = grid[:-1], grid[1:]
    g, k, err = _panel_sums(ctx, float(sigma), lo, hi)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(k))):
        raise QuadratureError("non-finite integrand values")
    inside = (lo >= a) & (hi <= bp) if a < bp else np.zeros(len(lo), dtype=bool)
    D = float(np.sum(g[inside]))
    C = float(np.sum(g[~inside]))
    E = float(np.sum(k))
    return TransformValues(C=C, D=D, E=E, sigma=float(sigma), a=float(a), b=float(b), err_est=err)


def Z_eps(ctx: FlowContext, z: float, sigma: float, a: float, b: float,
          values: TransformValues | None = None) -> float:
    """Generating function E / (1 - C - z*D) at finite eps."""
    v = values if values is not None else cde(ctx, sigma, a, b)
    den = 1.0 - v.C - z * v.D
    if not den > 0:
        raise OutsideRadius(f"1 - C - z*D = {den:.3e} <= 0 (z={z})")
    return v.E / den


def Z_eps_error(values: TransformValues, z: float) -> float:
    """First-order propagation of ``values.err_est`` into Z_eps.

    The denominator 1 - C - z*D can be O(eps) while C and D are O(1), so the
    relative error of Z is amplified accordingly.
    """
    den = 1.0 - values.C - z * values.D
    if not den > 0:
        raise OutsideRadius("outside the convergence region")
    e = values.err_est
    return e / den + values.E * (e + abs(z) * e) / den ** 2


def _B(m: Model, a: float, b: float) -> float:
    return m.f0 * (1.0 / a - 1.0 / b)


def radius(m: Model, sigma: float, a: float, b: float) -> float:
    """Convergence radius of the limit generating function (inf when a = b)."""
    _check_window(a, b)
    B = _B(m, a, b)
    return math.inf if B == 0 else 1.0 + (sigma + m.f0) / B


def limit_z(m: Model, sigma: float, a: float, b: float) -> LimitZ:
    return LimitZ(float(sigma), float(a), float(b), radius(m, sigma, a, b))


def Z_limit(m: Model, z: float, sigma: float, a: float, b: float) -> float:
    """1 / (sigma + f0 + (1 - z) f0 (1/a - 1/b)) inside the disc of convergence."""
    if not abs(z) < radius(m, sigma, a, b):
        raise OutsideRadius(f"|z|={abs(z)} is not below the radius {radius(m, sigma, a, b)}")
    return 1.0 / (sigma + m.f0 + (1.0 - z) * _B(m, a, b))


def P_nj_hat(ctx: FlowContext, n: int, sigma: float, a: float, b: float,
             values: TransformValues | None = None) -> float:
    """Coefficient of z**n in Z_eps: D**n E / (1 - C)**(n + 1)."""
    if n < 0 or int(n) != n:
        raise ValueError("n must be a non-negative integer")
    v = values if values is not None else cde(ctx, sigma, a, b)
    if not v.C < 1:
        raise OutsideRadius("C >= 1: series does not converge")
    return v.D ** n * v.E / (1.0 - v.C) ** (n + 1)


def P_nj_limit(m: Model, n: int, sigma: float, a: float, b: float) -> float:
    """Taylor coefficient of Z_limit at z = 0: B**n / (A + B)**(n + 1)."""
    A = sigma + m.f0
    B = _B(m, a, b)
    return B ** n / (A + B) ** (n + 1)


def limit_cde_over_eps(m: Model, sigma: float, a: float, b: float) -> dict:
    """eps -> 0 limits of E/eps, D/eps and (1 - C)/eps."""
    B = _B(m, a, b)
    return {"E": 1.0 / m.h0, "D": B / m.h0, "1-C": (sigma + m.f0 + B) / m.h0}


def _truncated_first_moment(ctx: FlowContext) -> float:
    """eps * int_0^y_star (h/omega) U exp(-V) dx, the mean of a cycle length
    restricted to cycles that stay below y_star."""
    y = ctx.y_star
    nodes = ctx.panel_nodes
    grid = np.unique(np.concatenate([nodes[nodes < y], [y]]))
    lo, hi = grid[:-1], grid[1:]
    half = 0.5 * (hi - lo)
    pts = (0.5 * (hi + lo))[:, None] + half[:, None] * _HI_X
    flat = pts.ravel()
    m = ctx.model
    vals = m.h(flat) / (ctx.eps * m.f(flat) + flat * m.h(flat)) * ctx.U(flat) * np.exp(-ctx.V(flat))
    return float(ctx.eps * np.sum(vals.reshape(pts.shape) @ _HI_W * half))
