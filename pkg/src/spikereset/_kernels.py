"""Compiled inner loops for the cycle sampler.

Each cycle of the renewal process is driven by one Exp(1) variate E: the reset
position is the point where the cumulative hazard V reaches E, and the cycle
length is the flow time to get there.  Both come from the Hermite table of
``FlowContext.cycle_table`` (E <= V(x_ref)) or from the closed-form tail.
"""

import math

import numpy as np
from numba import njit

STATUS_CHUNK = 0     # variates exhausted, call again
STATUS_HORIZON = 1   # next reset would fall after the horizon
STATUS_CROSS = 2     # first excursion above y_star completed (stop_on_cross)


@njit(cache=True, nogil=True)
def _phi(u, a, b):
    r = b * u / a
    if abs(r) < 1e-8:
        return (u / a) * (1.0 - 0.5 * r)
    return math.log1p(r) / b


@njit(cache=True, nogil=True)
def _tail_dV(L, eta, a, b, hstar, k, phi_eta):
    u = eta * math.exp(-L)
    return (hstar / a) * L + k * (phi_eta - _phi(u, a, b))


@njit(cache=True, nogil=True)
def _tail(W, t_ref, x_star, eta, tail):
    """Position and elapsed time for a hazard excess W = E - V(x_ref) > 0."""
    a, b, hstar, k, eps = tail[0], tail[1], tail[2], tail[3], tail[4]
    phi_eta = _phi(eta, a, b)
    lo = 0.0
    hi = 1.0
    while _tail_dV(hi, eta, a, b, hstar, k, phi_eta) < W:
        hi *= 2.0
    L = 0.5 * (lo + hi)
    for _ in range(200):
        g = _tail_dV(L, eta, a, b, hstar, k, phi_eta) - W
        if abs(g) <= 1e-15 * max(1.0, W):
            break
        if g > 0:
            hi = L
        else:
            lo = L
        u = eta * math.exp(-L)
        dg = hstar / a + k * u / (a + b * u)
        step = L - g / dg
        if lo < step < hi:
            L = step
        else:
            L = 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * max(1.0, L):
            break
    u = eta * math.exp(-L)
    x = x_star - u
    if x >= x_star:
        x = np.nextafter(x_star, 0.0)
    dU = L / a - (b / a) * (phi_eta - _phi(u, a, b))
    return x, t_ref + eps * dU


@njit(cache=True, nogil=True)
def cycle_from_E(E, tE, tx, tt, tdx, tdt, tidx, x_star, eta, tail):
    """(reset position, cycle duration) for one hazard variate E >= 0."""
    n = tE.shape[0]
    if E >= tE[n - 1]:
        if E == tE[n - 1]:
            return tx[n - 1], tt[n - 1]
        return _tail(E - tE[n - 1], tt[n - 1], x_star, eta, tail)
    nb = tidx.shape[0] - 1
    kb = int(E * (nb / tE[n - 1]))
    if kb >= nb:
        kb = nb - 1
    lo = tidx[kb]
    hi = min(tidx[kb + 1] + 1, n - 1)
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if tE[mid] <= E:
            lo = mid
        else:
            hi = mid
    i = lo
    h = tE[i + 1] - tE[i]
    s = (E - tE[i]) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    x = h00 * tx[i] + h10 * h * tdx[i] + h01 * tx[i + 1] + h11 * h * tdx[i + 1]
    t = h00 * tt[i] + h10 * h * tdt[i] + h01 * tt[i + 1] + h11 * h * tdt[i + 1]
    return x, t


@njit(cache=True, nogil=True)
def cycles_from_E(Es, tE, tx, tt, tdx, tdt, tidx, x_star, eta, tail):
    n = Es.shape[0]
    xs = np.empty(n)
    ts = np.empty(n)
    for j in range(n):
        xs[j], ts[j] = cycle_from_E(Es[j], tE, tx, tt, tdx, tdt, tidx, x_star, eta, tail)
    return xs, ts


@njit(cache=True, nogil=True)
def run_chunk(Es, t0, horizon, stop_on_cross, xmin, E_star, T_star,
              tE, tx, tt, tdx, tdt, tidx, x_star, eta, tail,
              out_t, out_x, ep_odd, ep_even):
    """Advance the renewal process from time t0 using the variates Es.

    Pre-spikes with position >= xmin are written to out_t/out_x; excursion
    epochs (y_star crossing time, following reset time) to ep_odd/ep_even.
    With stop_on_cross the crossing cycle's own pre-spike is not recorded.

    Returns (n_used, n_points, n_epochs, t_end, status).
    """
    t = t0
    n_pts = 0
    n_ep = 0
    n = Es.shape[0]
    for j in range(n):
        E = Es[j]
        x, dur = cycle_from_E(E, tE, tx, tt, tdx, tdt, tidx, x_star, eta, tail)
        tau = t + dur
        crosses = E > E_star
        if tau > horizon:
            if crosses and t + T_star <= horizon:
                ep_odd[n_ep] = t + T_star
                ep_even[n_ep] = tau
                n_ep += 1
            return j + 1, n_pts, n_ep, t, STATUS_HORIZON
        if crosses:
            ep_odd[n_ep] = t + T_star
            ep_even[n_ep] = tau
            n_ep += 1
            if stop_on_cross:
                return j + 1, n_pts, n_ep, tau, STATUS_CROSS
        if x >= xmin:
            out_t[n_pts] = tau
            out_x[n_pts] = x
            n_pts += 1
        t = tau
    return n, n_pts, n_ep, t, STATUS_CHUNK
