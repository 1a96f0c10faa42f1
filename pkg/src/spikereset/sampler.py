"""Exact simulation of the resetting PDMP and of its pre-spike point process.

Cycle durations are drawn by hazard inversion: with E ~ Exp(1) the reset
happens where the cumulative hazard V first reaches E, so no time stepping is
involved anywhere.  A cycle crosses ``y_star`` (an excursion, i.e. a jump of
the effective two-state chain) exactly when ``E > V(y_star)``.

Every replica owns an independent counter-based stream keyed by
``(seed, replica index)``, so results do not depend on how replicas are
scheduled across threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .flow import FlowContext

__all__ = [
    "RngStream",
    "PointPattern",
    "ReplicaWindow",
    "ConditionalCounts",
    "TooFewAccepted",
    "sample_cycle",
    "sample_cycles",
    "simulate",
    "sample_e1_e2",
    "run_windows",
    "conditional_counts",
    "simulate_trajectory",
    "map_replicas",
]

_MAX_CHUNK = 1 << 18


class TooFewAccepted(RuntimeError):
    pass


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream (Philox keyed by seed and stream id)."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


@dataclass
class PointPattern:
    points: np.ndarray          # (n, 2): reset time, pre-reset position
    jump_epochs: np.ndarray     # (m, 2): y_star crossing time, following reset
    horizon: float
    eps: float
    seed: int
    stream_id: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def positions(self) -> np.ndarray:
        return self.points[:, 1]

    def __len__(self):
        return len(self.points)


@dataclass
class ReplicaWindow:
    """Outcome of one replica run up to min(horizon, first crossing of y_star)."""

    e1: float                   # inf if no crossing before the horizon
    times: np.ndarray
    positions: np.ndarray


@dataclass
class ConditionalCounts:
    counts: np.ndarray          # (accepted, n_rects)
    rects: list
    t: float
    attempted: int
    accepted: int
    windows: list = field(repr=False, default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempted if self.attempted else float("nan")


def _table_args(ctx: FlowContext):
    tb = ctx.cycle_table
    return tb.E, tb.x, tb.t, tb.dx, tb.dt, tb.bucket, tb.x_star, tb.eta, tb.tail


def sample_cycles(ctx: FlowContext, rng: RngStream | np.random.Generator, n: int):
    """n independent (pre-spike position, cycle duration) pairs."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    Es = gen.standard_exponential(n)
    return K.cycles_from_E(Es, *_table_args(ctx))


def sample_cycle(ctx: FlowContext, rng: RngStream | np.random.Generator, exponential: Optional[float] = None):
    """One exact draw of (pre-spike position z, cycle duration).

    Uses the quadrature route directly (inverse of V, then eps*U); the
    batched samplers use the interpolation table instead.
    """
    if exponential is None:
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        exponential = float(gen.standard_exponential())
    z, L = ctx.inverse_V(exponential, return_depth=True)
    if L is not None:
        return z, ctx.eps * ctx.UV_at_depth(L)[0]
    return z, ctx.eps * ctx.U(z)


def _chunk_size(ctx: FlowContext, horizon: float) -> int:
    if math.isfinite(horizon):
        est = 1.25 * horizon * ctx.model.h0 / ctx.eps
    else:
        est = 1.25 * math.exp(min(ctx.V_star, 40.0))
    return int(min(_MAX_CHUNK, max(256, est + 256)))


def _drive(ctx: FlowContext, stream: RngStream, horizon: float, stop_on_cross: bool, xmin: float,
           first_exponential: Optional[float] = None):
    gen = stream.generator()
    tb = ctx.cycle_table
    args = _table_args(ctx)
    chunk = _chunk_size(ctx, horizon)
    t = 0.0
    pts_t, pts_x, eo, ee = [], [], [], []
    first = True
    while True:
        Es = gen.standard_exponential(chunk)
        if first and first_exponential is not None:
            Es[0] = first_exponential
        first = False
        out_t = np.empty(chunk)
        out_x = np.empty(chunk)
        ep_o = np.empty(chunk)
        ep_e = np.empty(chunk)
        _, n_pts, n_ep, t, status = K.run_chunk(
            Es, t, horizon, stop_on_cross, xmin, tb.E_star, tb.T_star, *args, out_t, out_x, ep_o, ep_e)
        pts_t.append(out_t[:n_pts])
        pts_x.append(out_x[:n_pts])
        eo.append(ep_o[:n_ep])
        ee.append(ep_e[:n_ep])
        if status != K.STATUS_CHUNK:
            break
    return (np.concatenate(pts_t), np.concatenate(pts_x), np.concatenate(eo), np.concatenate(ee), t, status)


def default_threads() -> int:
    return os.cpu_count() or 1


def map_replicas(fn: Callable[[int], object], ids: Sequence[int], threads: Optional[int] = None,
                 block: int = 256) -> list:
    """Apply fn to each replica id; the output order follows ``ids``."""
    ids = list(ids)
    threads = threads or default_threads()
    if threads <= 1 or len(ids) <= block:
        return [fn(i) for i in ids]
    blocks = [ids[k:k + block] for k in range(0, len(ids), block)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(lambda b: [fn(i) for i in b], blocks)
        return [r for part in parts for r in part]


def simulate(ctx: FlowContext, rng: RngStream, horizon: float) -> PointPattern:
    """All pre-spikes and excursion epochs of one path on ``[0, horizon]``.

    Excursion pairs whose reset falls after the horizon keep their true
    reset time.
    """
    if not horizon >= 0:
        raise ValueError("horizon must be non-negative")
    if horizon == 0:
        return PointPattern(np.empty((0, 2)), np.empty((0, 2)), 0.0, ctx.eps, rng.seed, rng.stream_id)
    pt, px, eo, ee, _, _ = _drive(ctx, rng, horizon, False, 0.0)
    return PointPattern(np.column_stack([pt, px]), np.column_stack([eo, ee]), float(horizon),
                        ctx.eps, rng.seed, rng.stream_id)


def _e1_e2_one(ctx: FlowContext, stream: RngStream, first_exponential=None):
    _, _, eo, ee, _, status = _drive(ctx, stream, math.inf, True, math.inf, first_exponential)
    return eo[0], ee[0]


def sample_e1_e2(ctx: FlowContext, seed: int, replicas: int, threads: Optional[int] = None,
                 first_exponential: Optional[float] = None) -> np.ndarray:
    """(e1, e2) for each replica: first y_star crossing and the reset ending it.

    ``first_exponential`` overrides the first hazard variate of every replica
    (test hook).
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    out = map_replicas(lambda i: _e1_e2_one(ctx, RngStream(seed, i), first_exponential),
                       range(replicas), threads)
    return np.array(out, dtype=float).reshape(-1, 2)


def _window_one(ctx: FlowContext, stream: RngStream, horizon: float, xmin: float) -> ReplicaWindow:
    pt, px, eo, _, _, _ = _drive(ctx, stream, horizon, True, xmin)
    e1 = eo[0] if len(eo) else math.inf
    return ReplicaWindow(e1, pt, px)


def run_windows(ctx: FlowContext, seed: int, horizon: float, xmin: float, ids: Sequence[int],
                threads: Optional[int] = None) -> list:
    """Pre-spikes with position >= xmin observed before min(horizon, e1)."""
    return map_replicas(lambda i: _window_one(ctx, RngStream(seed, i), horizon, xmin), ids, threads)


def _count(times, positions, s1, s2, a, b) -> int:
    return int(np.count_nonzero((times > s1) & (times <= s2) & (positions >= a) & (positions <= b)))


def conditional_counts(ctx: FlowContext, seed: int, t: float, rects: Sequence, replicas: Optional[int] = None,
                       accepted: Optional[int] = None, threads: Optional[int] = None,
                       block: int = 4096, min_accepted: int = 100) -> ConditionalCounts:
    """Rectangle counts on replicas without a jump before t (rejection on e1 >= t).

    ``rects`` holds ``((s1, s2), (a, b))`` windows.  Give either the number
    of attempted ``replicas`` or a target number of ``accepted`` ones; in the
    latter case replicas are drawn in stream order and the first
    ``accepted`` successes are kept.
    """
    rects = [((float(s1), float(s2)), (float(a), float(b))) for (s1, s2), (a, b) in rects]
    for (s1, s2), (a, b) in rects:
        if not (0 <= s1 <= s2 <= t):
            raise ValueError(f"time window ({s1}, {s2}] must lie in [0, {t}]")
        if not (0 < a <= b <= 1):
            raise ValueError(f"space window [{a}, {b}] must lie in (0, 1]")
    if (replicas is None) == (accepted is None):
        raise ValueError("give exactly one of replicas / accepted")
    xmin = min(a for _, (a, _) in rects) if rects else 1.0
    kept, attempted = [], 0
    target = accepted
    while True:
        n = replicas if replicas is not None else block
        ids = range(attempted, attempted + n)
        wins = run_windows(ctx, seed, t, xmin, ids, threads)
        for w in wins:
            attempted += 1
            if w.e1 >= t:
                kept.append(w)
                if target is not None and len(kept) == target:
                    break
        if replicas is not None or len(kept) == target:
            break
    if len(kept) < min_accepted:
        raise TooFewAccepted(f"only {len(kept)} of {attempted} replicas had no jump before t={t}")
    counts = np.array([[_count(w.times, w.positions, s1, s2, a, b) for (s1, s2), (a, b) in rects]
                       for w in kept], dtype=np.int64).reshape(len(kept), len(rects))
    return ConditionalCounts(counts, rects, float(t), attempted, len(kept), kept)


def simulate_trajectory(ctx: FlowContext, rng: RngStream, horizon: float, grid_n: int) -> np.ndarray:
    """X_t on a uniform time grid (right-continuous at resets); plotting only."""
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    if horizon <= 0:
        return np.array([[0.0, 0.0]])
    pat = simulate(ctx, rng, horizon)
    starts = np.concatenate([[0.0], pat.times])
    grid = np.linspace(0.0, horizon, grid_n)
    idx = np.searchsorted(starts, grid, side="right") - 1
    xs = np.array([ctx.flow_at_time(float(g - starts[i])) for g, i in zip(grid, idx)])
    return np.column_stack([grid, xs])
