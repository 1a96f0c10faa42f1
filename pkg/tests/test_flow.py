import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from spikereset.flow import BracketError, DomainError, FlowContext, gamma, max_valid_eps
from spikereset.model import Model, make_builtin_model


def _roots(eps):
    # omega = eps(1 - 2x) + x(1 - x) = -(x - r1)(x - r2) for the default linear model
    b = 1 - 2 * eps
    d = math.sqrt(b * b + 4 * eps)
    return (b - d) / 2, (b + d) / 2


def closed_U(eps, x):
    r1, r2 = _roots(eps)
    return (math.log((x - r1) / -r1) - math.log((r2 - x) / r2)) / (r2 - r1)


def closed_V(eps, x):
    r1, r2 = _roots(eps)
    A = (1 - r1) / (r2 - r1)
    B = (1 - r2) / (r2 - r1)
    return A * math.log((x - r1) / -r1) - B * math.log((r2 - x) / r2)


def simpson(fn, a, b, n=1_000_000):
    x = np.linspace(a, b, n + 1)
    return integrate.simpson(fn(x), x=x)


def test_omega_values(ctx2):
    assert ctx2.omega(0.0) == pytest.approx(0.01)
    assert ctx2.omega(1.0) == pytest.approx(-0.01)
    assert ctx2.omega(0.5) == pytest.approx(0.25)
    with pytest.raises(DomainError):
        ctx2.omega(1.5)


def test_x_star_closed_form(ctx2):
    assert ctx2.x_star == pytest.approx(_roots(0.01)[1], abs=1e-13)
    assert ctx2.x_star == pytest.approx(0.990100, abs=1e-6)


def test_x_star_asymptotics(linear):
    # (1 - x_star)/eps tends to |f(1)|/|h'(1)| = 1
    vals = [(1 - FlowContext(linear, e).x_star) / e for e in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)]
    assert abs(vals[-1] - 1) < 1e-5
    assert all(abs(b - 1) < abs(a - 1) for a, b in zip(vals, vals[1:]))


def test_bracket_error_when_omega0_nonpositive():
    m = Model(f=lambda x: -1.0 + 0 * np.asarray(x), h=lambda x: 1 - np.asarray(x))
    with pytest.raises(BracketError):
        FlowContext(m, 1e-2)


def test_domain_error_when_y_star_exceeds_x_star():
    # |f(1)| large pushes x_star ~ 1 - 20 eps below y_star = 1 - eps**0.49 at eps = 0.01
    m = make_builtin_model("linear", (1.0, -20.0, 1.0))
    with pytest.raises(DomainError, match="eps"):
        FlowContext(m, 1e-2)
    limit = max_valid_eps(m)
    assert 0 < limit < 1e-2
    FlowContext(m, limit / 2)


@pytest.mark.parametrize("x", [1e-6, 0.01, 0.3, 0.5, 0.9, 0.98])
def test_U_V_against_closed_form(ctx2, x):
    assert ctx2.U(x) == pytest.approx(closed_U(0.01, x), rel=1e-12)
    assert ctx2.V(x) == pytest.approx(closed_V(0.01, x), rel=1e-12)


def test_U_V_against_simpson_oracle(ctx2):
    w = lambda y: 0.01 * (1 - 2 * y) + y * (1 - y)
    u = simpson(lambda y: 1 / w(y), 0.0, 0.5)
    v = simpson(lambda y: (1 - y) / w(y), 0.0, 0.5)
    assert ctx2.U(0.5) == pytest.approx(u, rel=1e-8)
    assert ctx2.V(0.5) == pytest.approx(v, rel=1e-8)


def test_U_V_nonlinear_family_simpson():
    m = make_builtin_model("quadratic-h", [1.5, -0.7, 2.0, 0.8])
    c = FlowContext(m, 1e-3)
    w = lambda y: 1e-3 * m.f(y) + y * m.h(y)
    assert c.U(0.6) == pytest.approx(simpson(lambda y: 1 / w(y), 0, 0.6), rel=1e-8)
    assert c.V(0.6) == pytest.approx(simpson(lambda y: m.h(y) / w(y), 0, 0.6), rel=1e-8)


def test_zero_and_domain(ctx2):
    assert ctx2.U(0.0) == 0.0 and ctx2.V(0.0) == 0.0
    with pytest.raises(DomainError):
        ctx2.U(ctx2.x_star)
    with pytest.raises(DomainError):
        ctx2.V(1.0)


def test_V_diverges_toward_x_star(ctx2):
    xs = ctx2.x_star - np.geomspace(1e-3, 1e-14, 30)
    v = ctx2.V(xs)
    assert np.all(np.diff(v) > 0)
    assert v[-1] > ctx2.V(ctx2.y_star) + 10 * ctx2.model.h(ctx2.x_star) / 1.0


@pytest.mark.parametrize("gap", [1e-7, 1e-9, 1e-30, 1e-300])
def test_tail_matches_closed_form(ctx2, gap):
    # the tail model is exact for a quadratic omega; compare in depth
    # coordinates so the oracle does not lose digits in x_star - x
    r1, r2 = _roots(0.01)
    L = math.log(ctx2.eta_tail / gap)
    U, V = ctx2.UV_at_depth(L)
    x = r2 - gap
    A = (1 - r1) / (r2 - r1)
    B = (1 - r2) / (r2 - r1)
    U_ref = (math.log((x - r1) / -r1) - math.log(gap / r2)) / (r2 - r1)
    V_ref = A * math.log((x - r1) / -r1) - B * math.log(gap / r2)
    assert U == pytest.approx(U_ref, rel=1e-11)
    assert V == pytest.approx(V_ref, rel=1e-11)


def test_T_star_definition(linear):
    c = FlowContext(linear, 1e-2, beta=0.25)
    assert c.T_star == pytest.approx(c.eps * c.U(c.y_star), rel=1e-15)
    assert c.flow_at_time(c.T_star) == pytest.approx(c.y_star, abs=1e-12)


def test_flow_at_time_round_trip(ctx2):
    assert ctx2.flow_at_time(0.0) == 0.0
    assert ctx2.flow_at_time(0.01 * ctx2.U(0.3)) == pytest.approx(0.3, abs=1e-12)
    assert ctx2.flow_at_time(1e3) < ctx2.x_star


def test_inverse_V_examples(ctx2):
    assert ctx2.inverse_V(0.0) == 0.0
    assert ctx2.inverse_V(ctx2.V(0.7)) == pytest.approx(0.7, abs=1e-12)
    x, L = ctx2.inverse_V(50.0, return_depth=True)
    assert ctx2.y_star < x < ctx2.x_star or x == np.nextafter(ctx2.x_star, 0)
    assert L is not None
    assert 49.99 <= ctx2.UV_at_depth(L)[1] <= 50.01


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 40.0))
def test_inverse_V_is_monotone_inverse(E):
    c = _CTX
    x, L = c.inverse_V(E, return_depth=True)
    v = c.UV_at_depth(L)[1] if L is not None else c.V(x)
    assert v == pytest.approx(E, rel=1e-11, abs=1e-12)


_CTX = FlowContext(make_builtin_model(), 1e-3)


def test_T_c(ctx2):
    assert ctx2.T_c(1e-9) < 1e-9
    with pytest.raises(DomainError):
        ctx2.T_c(ctx2.x_star)


def test_gamma_linear_closed_form(linear):
    for c in (0.1, 0.5, 0.8):
        assert gamma(linear, c) == pytest.approx(-math.log(1 - c) + math.log(c), abs=1e-10)
    assert gamma(linear, 0.5) == pytest.approx(0.0, abs=1e-12)
    assert gamma(linear, 1 - 1e-8) > gamma(linear, 1 - 1e-4) > gamma(linear, 0.9)


def test_T_c_second_order_term(linear):
    # (T_c + (eps/h0) log eps)/eps -> gamma(c)
    g = gamma(linear, 0.5)
    errs = []
    for e in (1e-2, 1e-3, 1e-4, 1e-5):
        c = FlowContext(linear, e)
        errs.append(abs((c.T_c(0.5) + e * math.log(e)) / e - g))
    assert errs[-1] < 1e-3
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_T_star_asymptotics(linear):
    # y_star = 1 - eps**beta adds beta*|log eps| to U, so the ratio tends to 1 + beta
    beta = 0.49
    r = [FlowContext(linear, e, beta).T_star / (-e * math.log(e)) for e in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)]
    assert all(abs(b - 1 - beta) < abs(a - 1 - beta) for a, b in zip(r, r[1:]))
    assert abs(r[-1] - 1 - beta) < 1e-4


def test_survival_composition(ctx2):
    assert ctx2.survival_mu(0.0) == 1.0
    t = ctx2.T_c(0.5)
    assert ctx2.survival_mu(t) == pytest.approx(math.exp(-ctx2.V(0.5)), rel=1e-10)


def test_survival_against_rk4(ctx2):
    # fixed-step RK4 on (x, cumulative hazard) in time
    eps = 0.01
    f = lambda y: np.array([(eps * (1 - 2 * y[0]) + y[0] * (1 - y[0])) / eps, (1 - y[0]) / eps])
    T = ctx2.T_star
    n = 200_000
    dt = T / n
    y = np.array([0.0, 0.0])
    checkpoints = {n // 4, n // 2, n}
    for k in range(1, n + 1):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if k in checkpoints:
            assert ctx2.survival_mu(k * dt) == pytest.approx(math.exp(-y[1]), rel=1e-6)


def test_lemma_exit_probability_scaling(linear):
    # exp(-V(y_star)) h0/(f0 eps) approaches 1/y_star, and exp(-V(y_star)) -> 0
    gaps = []
    for e in (1e-3, 1e-4, 1e-5, 1e-6):
        c = FlowContext(linear, e)
        gaps.append(abs(math.exp(-c.V_star) / e * c.y_star - 1))
        assert math.exp(-c.V_star) < 2 * e
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[0] < 0.011 and gaps[-1] < 1e-4


def test_expansion_terms(ctx4):
    ex = ctx4.U_expansion(0.5, 1 / 6)
    assert ex.leading_log == pytest.approx(-math.log(1e-4))
    assert ex.remainder_bound > 0
    assert abs(ctx4.U(0.5) - ex.total) <= ex.remainder_bound
    vx = ctx4.V_expansion(0.5, 1 / 6)
    assert abs(ctx4.V(0.5) - vx.total) <= vx.remainder_bound
    # frak_h is the running infimum of h, here h(x) itself
    far = FlowContext(ctx4.model, 1e-6).U_expansion(1 - 1e-3, 1 / 6)
    assert far.remainder_bound == pytest.approx(1e-6 ** (1 / 3) / 1e-3 + 1e-6 ** (1 / 3), rel=1e-6)
    with pytest.raises(DomainError):
        ctx4.U_expansion(1.2, 0.1)


def test_monotone_on_grid(ctx3):
    xs = np.linspace(0, ctx3.x_star - 1e-12, 2000)
    assert np.all(np.diff(ctx3.U(xs)) > 0)
    assert np.all(np.diff(ctx3.V(xs)) > 0)
