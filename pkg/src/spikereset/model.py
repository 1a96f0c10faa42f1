"""Coefficient pair (f, h) of the resetting PDMP.

The drift of the flow is ``eps*f(x) + x*h(x)`` and ``h(x)/eps`` is the reset
hazard.  Admissible pairs satisfy ``f(1) < 0 < f(0)``, ``h(1) = 0``,
``h'(1) < 0`` and ``h > 0`` on ``[0, 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial

__all__ = [
    "Model",
    "ValidationReport",
    "UnknownFamily",
    "InvalidParams",
    "FAMILIES",
    "make_builtin_model",
    "validate_model",
    "model_from_config",
]

Func = Callable[[np.ndarray], np.ndarray]

H1_ZERO_TOL = 1e-12
FD_STEP = 1e-6


class UnknownFamily(ValueError):
    pass


class InvalidParams(ValueError):
    pass


def _central_diff(fn: Func, x: float, step: float) -> float:
    return float((fn(x + step) - fn(x - step)) / (2.0 * step))


@dataclass(frozen=True)
class Model:
    """Immutable coefficient pair with cached endpoint values.

    ``df``, ``dh``, ``d2f``, ``d2h`` are optional analytic derivatives; when
    missing, central finite differences are used.
    """

    f: Func
    h: Func
    label: str = "custom"
    df: Optional[Func] = None
    dh: Optional[Func] = None
    d2f: Optional[Func] = None
    d2h: Optional[Func] = None
    family: Optional[str] = None
    params: tuple = ()
    f0: float = field(init=False)
    f1: float = field(init=False)
    h0: float = field(init=False)
    h1prime: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "f0", float(self.f(0.0)))
        object.__setattr__(self, "f1", float(self.f(1.0)))
        object.__setattr__(self, "h0", float(self.h(0.0)))
        if self.dh is not None:
            h1p = float(self.dh(1.0))
        else:
            # one-sided near 1 is avoided: f and h are C^2 on a neighbourhood
            h1p = _central_diff(self.h, 1.0, FD_STEP)
        object.__setattr__(self, "h1prime", h1p)

    def fprime(self, x):
        if self.df is not None:
            return self.df(x)
        return _central_diff(self.f, x, 1e-7)

    def hprime(self, x):
        if self.dh is not None:
            return self.dh(x)
        return _central_diff(self.h, x, 1e-7)

    def fsecond(self, x):
        if self.d2f is not None:
            return self.d2f(x)
        s = 1e-4
        return float((self.f(x + s) - 2.0 * self.f(x) + self.f(x - s)) / s**2)

    def hsecond(self, x):
        if self.d2h is not None:
            return self.d2h(x)
        s = 1e-4
        return float((self.h(x + s) - 2.0 * self.h(x) + self.h(x - s)) / s**2)

    def describe(self) -> dict:
        return {"family": self.family, "params": list(self.params), "label": self.label}


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0


def _poly_model(fp: Polynomial, hp: Polynomial, label: str, family: str, params) -> Model:
    dfp, dhp = fp.deriv(), hp.deriv()
    return Model(
        f=fp, h=hp, label=label,
        df=dfp, dh=dhp, d2f=dfp.deriv(), d2h=dhp.deriv(),
        family=family, params=tuple(float(p) for p in params),
    )


def _linear(params: Sequence[float]) -> Model:
    if len(params) != 3:
        raise InvalidParams("linear family takes (f0, f1, h0)")
    f0, f1, h0 = params
    fp = Polynomial([f0, f1 - f0])
    hp = Polynomial([h0, -h0])
    return _poly_model(fp, hp, f"linear{tuple(params)}", "linear", params)


def _quadratic_h(params: Sequence[float]) -> Model:
    # h(x) = h0 (1 - x)(1 + k x), positive on [0, 1) iff k > -1
    if len(params) != 4:
        raise InvalidParams("quadratic-h family takes (f0, f1, h0, k)")
    f0, f1, h0, k = params
    if k <= -1.0:
        raise InvalidParams(f"quadratic-h needs k > -1, got {k}")
    fp = Polynomial([f0, f1 - f0])
    hp = h0 * Polynomial([1.0, -1.0]) * Polynomial([1.0, k])
    return _poly_model(fp, hp, f"quadratic-h{tuple(params)}", "quadratic-h", params)


def _custom_poly(params: Sequence[float]) -> Model:
    # params = [n_f, f coefficients (n_f of them, increasing powers), h coefficients...]
    if len(params) < 3:
        raise InvalidParams("custom-poly takes [n_f, f coeffs..., h coeffs...]")
    n_f = params[0]
    if n_f != int(n_f) or n_f < 1 or len(params) < 2 + int(n_f):
        raise InvalidParams(f"bad coefficient count n_f={n_f}")
    n_f = int(n_f)
    fp = Polynomial(list(params[1:1 + n_f]))
    hp = Polynomial(list(params[1 + n_f:]))
    return _poly_model(fp, hp, f"custom-poly{tuple(params)}", "custom-poly", params)


FAMILIES = {
    "linear": _linear,
    "quadratic-h": _quadratic_h,
    "custom-poly": _custom_poly,
}


def make_builtin_model(family: str = "linear", params: Sequence[float] = (1.0, -1.0, 1.0)) -> Model:
    """Build a model from a named parametric family.

    ``linear`` with ``(f0, f1, h0)`` gives ``f(x) = f0(1-x) + f1 x`` and
    ``h(x) = h0(1-x)``.
    """
    try:
        builder = FAMILIES[family]
    except KeyError:
        raise UnknownFamily(f"unknown model family {family!r}; known: {sorted(FAMILIES)}") from None
    params = [float(p) for p in params]
    if not all(np.isfinite(params)):
        raise InvalidParams("parameters must be finite")
    model = builder(params)
    report = validate_model(model, 1000)
    if not report.ok:
        raise InvalidParams(f"{family}{tuple(params)} violates the admissibility conditions: "
                            f"{[v[0] for v in report.violations]}")
    return model


def validate_model(m: Model, grid_n: int = 1000) -> ValidationReport:
    """Check the admissibility conditions on a uniform grid plus endpoints."""
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    violations = []
    if not m.f0 > 0:
        violations.append(("f(0)>0", 0.0, m.f0))
    if not m.f1 < 0:
        violations.append(("f(1)<0", 1.0, m.f1))
    h1 = float(m.h(1.0))
    if abs(h1) > H1_ZERO_TOL:
        violations.append(("h(1)=0", 1.0, h1))
    if abs(m.h1prime) <= 1e-9:
        violations.append(("h'(1)!=0", 1.0, m.h1prime))
    elif m.h1prime > 0:
        violations.append(("h'(1)<0", 1.0, m.h1prime))
    xs = np.linspace(0.0, 1.0, grid_n + 1)[:-1]
    hs = np.asarray(m.h(xs), dtype=float)
    bad = np.flatnonzero(~(hs > 0))
    if bad.size:
        i = bad[0]
        violations.append(("h(x)>0", float(xs[i]), float(hs[i])))
    return ValidationReport(tuple(violations))


def model_from_config(spec: dict) -> Model:
    """Build a model from the ``{"family": ..., "params": [...]}`` config block."""
    return make_builtin_model(spec.get("family", "linear"), spec.get("params", (1.0, -1.0, 1.0)))
