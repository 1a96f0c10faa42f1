"""Limit objects: the two-state chain and the decorated Poisson point process.

The chain starts in state 0, leaves it at rate f(0) and leaves state 1 at
rate |f(1)|.  While the chain sits in 0, pre-spike points arrive as a Poisson
process with intensity ``c * dt dx / x**2`` on ``[delta, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .flow import DomainError
from .model import Model
from .sampler import RngStream, TooFewAccepted, map_replicas

__all__ = [
    "BarChainPath",
    "LimitPattern",
    "sample_bar_chain",
    "sample_decorated_ppp",
    "lambda_star_mass",
    "limit_conditional_counts",
]


@dataclass
class BarChainPath:
    jump_times: np.ndarray
    horizon: float
    initial_state: int = 0

    def state_at(self, t):
        """State at time(s) t; the chain is right-continuous."""
        return (np.searchsorted(self.jump_times, t, side="right") % 2).astype(int)

    def time_in_zero(self) -> float:
        edges = np.concatenate([[0.0], self.jump_times, [self.horizon]])
        return float(np.sum(np.diff(edges)[0::2]))


@dataclass
class LimitPattern:
    points: np.ndarray      # (n, 2): time, position
    delta: float
    intensity_const: float
    chain: BarChainPath

    @property
    def horizon(self) -> float:
        return self.chain.horizon

    def __len__(self):
        return len(self.points)


def lambda_star_mass(a: float, b: float) -> float:
    """Mass of dx/x**2 on [a, b]."""
    if not (0 < a <= b <= 1):
        raise DomainError(f"need 0 < a <= b <= 1, got a={a}, b={b}")
    return 1.0 / a - 1.0 / b


def _gen(rng):
    return rng.generator() if isinstance(rng, RngStream) else rng


def sample_bar_chain(m: Model, rng, horizon: float) -> BarChainPath:
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    g = _gen(rng)
    rates = (m.f0, abs(m.f1))
    jumps, t, state = [], 0.0, 0
    while True:
        t += g.exponential(1.0 / rates[state])
        if t > horizon:
            break
        jumps.append(t)
        state ^= 1
    return BarChainPath(np.array(jumps, dtype=float), float(horizon))


def sample_decorated_ppp(m: Model, rng, horizon: float, delta: float,
                         intensity_const: Optional[float] = None,
                         chain: Optional[BarChainPath] = None) -> LimitPattern:
    """Decorated Poisson process on ``[0, horizon] x [delta, 1]``.

    ``intensity_const`` defaults to f(0).  A chain path may be supplied;
    otherwise one is drawn first from the same stream.
    """
    if not (0 < delta <= 1):
        raise ValueError("delta must lie in (0, 1]")
    c = m.f0 if intensity_const is None else float(intensity_const)
    if not c > 0:
        raise ValueError("intensity_const must be positive")
    g = _gen(rng)
    if chain is None:
        chain = sample_bar_chain(m, g, horizon)
    span = 1.0 / delta - 1.0
    n = g.poisson(c * horizon * span)
    ts = g.uniform(0.0, horizon, n)
    xs = 1.0 / (1.0 / delta - g.uniform(0.0, 1.0, n) * span)
    keep = chain.state_at(ts) == 0
    order = np.argsort(ts[keep], kind="stable")
    pts = np.column_stack([ts[keep][order], xs[keep][order]])
    return LimitPattern(pts, float(delta), c, chain)


def limit_conditional_counts(m: Model, seed: int, t: float, rects: Sequence, accepted: int,
                             intensity_const: Optional[float] = None, threads: Optional[int] = None,
                             block: int = 4096, min_accepted: int = 100):
    """Rectangle counts of the limit pattern given no chain jump before t.

    Rejection on the chain, mirroring the finite-eps conditional sampler.
    Returns ``(counts, attempted)``.
    """
    rects = [((float(s1), float(s2)), (float(a), float(b))) for (s1, s2), (a, b) in rects]
    delta = min(a for _, (a, _) in rects)

    def one(i):
        g = RngStream(seed, i).generator()
        chain = sample_bar_chain(m, g, t)
        if len(chain.jump_times):
            return None
        p = sample_decorated_ppp(m, g, t, delta, intensity_const, chain)
        tt, xx = p.points[:, 0], p.points[:, 1]
        return [int(np.count_nonzero((tt > s1) & (tt <= s2) & (xx >= a) & (xx <= b)))
                for (s1, s2), (a, b) in rects]

    rows, attempted = [], 0
    while len(rows) < accepted:
        res = map_replicas(one, range(attempted, attempted + block), threads)
        for r in res:
            attempted += 1
            if r is not None:
                rows.append(r)
                if len(rows) == accepted:
                    break
    if len(rows) < min_accepted:
        raise TooFewAccepted(f"only {len(rows)} accepted")
    return np.array(rows, dtype=np.int64).reshape(len(rows), len(rects)), attempted
