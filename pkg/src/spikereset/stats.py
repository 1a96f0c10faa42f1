"""Goodness-of-fit, independence and convergence checks used by the verify suites."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as st

from .config import ConfigError

__all__ = [
    "TestReport",
    "PhiTarget",
    "EmptySample",
    "SweepSpec",
    "P_THRESHOLD",
    "ks_test",
    "poisson_gof",
    "count_in_rect",
    "empirical_laplace",
    "independence_test",
    "phi_target",
    "phi_empirical",
    "convergence_sweep",
    "mean_within",
    "two_sample_chi2",
]

P_THRESHOLD = 0.01


class EmptySample(ValueError):
    pass


@dataclass
class TestReport:
    __test__ = False  # not a pytest class

    name: str
    statistic: float
    threshold_or_pvalue: float
    passed: bool
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "statistic": _jsonable(self.statistic),
                "threshold_or_pvalue": _jsonable(self.threshold_or_pvalue),
                "pass": bool(self.passed), "meta": _jsonable(self.meta)}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass(frozen=True)
class PhiTarget:
    n: int
    f0: float
    mass: float     # f0 * (1/a - 1/b)


def ks_test(samples: Sequence[float], cdf: Callable, name: str = "ks", meta: dict | None = None) -> TestReport:
    """One-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise EmptySample("ks_test needs at least one sample")
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    D = float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
    p = float(st.kstwobign.sf(math.sqrt(n) * D))
    return TestReport(name, D, p, p >= P_THRESHOLD, dict(meta or {}, n=n))


def _pooled_bins(counts: np.ndarray, mean: float):
    """Observed/expected over consecutive bins merged until expected >= 5."""
    n = len(counts)
    kmax = int(max(counts.max(), mean + 10 * math.sqrt(mean) + 10))
    probs = st.poisson.pmf(np.arange(kmax + 1), mean)
    probs[-1] += st.poisson.sf(kmax, mean)
    obs = np.bincount(counts, minlength=kmax + 1)[: kmax + 1].astype(float)
    exp = probs * n
    o_bins, e_bins, o_acc, e_acc = [], [], 0.0, 0.0
    for o, e in zip(obs, exp):
        o_acc += o
        e_acc += e
        if e_acc >= 5:
            o_bins.append(o_acc)
            e_bins.append(e_acc)
            o_acc = e_acc = 0.0
    if e_bins:
        o_bins[-1] += o_acc
        e_bins[-1] += e_acc
    return np.array(o_bins), np.array(e_bins)


def poisson_gof(counts: Sequence[int], mean: float, name: str = "poisson_gof",
                meta: dict | None = None) -> TestReport:
    """Chi-square against Poisson(mean) on pooled bins, plus a dispersion test.

    The reported statistic is the chi-square value.  The p-value is the
    Bonferroni combination ``min(1, 2 * min(p_chi2, p_dispersion))`` so the
    joint test keeps its nominal size.
    """
    if mean < 0:
        raise ValueError("mean must be non-negative")
    c = np.asarray(counts, dtype=np.int64)
    n = len(c)
    meta = dict(meta or {})
    if mean == 0:
        ok = bool(np.all(c == 0))
        return TestReport(name, float(np.sum(c)), 1.0 if ok else 0.0, ok, dict(meta, n=n))
    o, e = _pooled_bins(c, mean)
    if len(o) >= 2:
        chi2 = float(np.sum((o - e) ** 2 / e))
        p_chi = float(st.chi2.sf(chi2, len(o) - 1))
    else:
        chi2, p_chi = 0.0, 1.0
    if n >= 2:
        disp = float((n - 1) * np.var(c, ddof=1) / mean)
        p_disp = float(2 * min(st.chi2.sf(disp, n - 1), st.chi2.cdf(disp, n - 1)))
    else:
        disp, p_disp = float("nan"), 1.0
    p = min(1.0, 2.0 * min(p_chi, p_disp))
    meta.update(n=n, bins=len(o), p_chi2=p_chi, p_dispersion=p_disp,
                sample_mean=float(c.mean()) if n else float("nan"),
                dispersion_index=float(np.var(c, ddof=1) / c.mean()) if n > 1 and c.mean() > 0 else float("nan"))
    return TestReport(name, chi2, p, p >= P_THRESHOLD, meta)


def count_in_rect(p, s1: float, s2: float, a: float, b: float) -> int:
    """Points with s1 < t <= s2 and a <= x <= b."""
    if s1 > s2 or a > b:
        raise ValueError("need s1 <= s2 and a <= b")
    pts = np.asarray(p.points, dtype=float).reshape(-1, 2)
    t, x = pts[:, 0], pts[:, 1]
    return int(np.count_nonzero((t > s1) & (t <= s2) & (x >= a) & (x <= b)))


def empirical_laplace(samples: Sequence[float], sigma: float) -> float:
    """Mean of (1 - exp(-sigma s)) / sigma, estimating int exp(-sigma t) P(S >= t) dt."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    s = np.asarray(samples, dtype=float)
    return float(np.mean(-np.expm1(-sigma * s) / sigma))


def independence_test(count_pairs, coincident: int = 0, name: str = "independence",
                      meta: dict | None = None) -> TestReport:
    """Pearson correlation z-test (z = r sqrt(n)); pass iff |z| < 3 and no
    coincident timestamps were seen between the paired rectangles."""
    pairs = np.asarray(count_pairs, dtype=float).reshape(-1, 2)
    n = len(pairs)
    if n < 2:
        raise EmptySample("independence_test needs pairs")
    x, y = pairs[:, 0], pairs[:, 1]
    if np.std(x) == 0 or np.std(y) == 0:
        r = 0.0
    else:
        r = float(np.corrcoef(x, y)[0, 1])
    z = r * math.sqrt(n)
    ok = abs(z) < 3 and coincident == 0
    return TestReport(name, z, 3.0, ok, dict(meta or {}, n=n, r=r, coincident=int(coincident)))


def phi_target(pt: PhiTarget, r: float) -> float:
    """exp(-r f0) exp(-r mass) (r mass)^n / n!."""
    if r < 0:
        raise ValueError("r must be non-negative")
    lam = r * pt.mass
    return math.exp(-r * pt.f0) * float(st.poisson.pmf(pt.n, lam)) if lam > 0 else \
        math.exp(-r * pt.f0) * (1.0 if pt.n == 0 else 0.0)


def phi_empirical(ctx, seed: int, n: int, r: float, a: float, b: float, replicas: int,
                  threads: int | None = None) -> tuple[float, float]:
    """Monte Carlo estimate of P(e1 >= r, N_(0,r]([a, b]) = n) and its standard error."""
    from .sampler import run_windows

    wins = run_windows(ctx, seed, r, a, range(replicas), threads)
    hits = 0
    for w in wins:
        if w.e1 >= r:
            k = int(np.count_nonzero((w.times > 0) & (w.times <= r) & (w.positions >= a) & (w.positions <= b)))
            hits += k == n
    p = hits / replicas
    return p, math.sqrt(p * (1 - p) / replicas)


def mean_within(samples, target: float, k: float = 3.0, name: str = "mean") -> TestReport:
    s = np.asarray(samples, dtype=float)
    se = float(np.std(s, ddof=1) / math.sqrt(len(s)))
    z = (float(s.mean()) - target) / se if se > 0 else (0.0 if s.mean() == target else math.inf)
    return TestReport(name, z, k, abs(z) <= k, {"mean": float(s.mean()), "se": se, "target": target})


def two_sample_chi2(x: Sequence[int], y: Sequence[int], name: str = "two_sample_chi2",
                    meta: dict | None = None) -> TestReport:
    """Chi-square homogeneity test between two count samples (categories
    merged from the top until every expected cell is at least 5)."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    kmax = int(max(x.max(initial=0), y.max(initial=0)))
    tab = np.vstack([np.bincount(x, minlength=kmax + 1), np.bincount(y, minlength=kmax + 1)]).astype(float)
    while tab.shape[1] > 1:
        exp = tab.sum(1, keepdims=True) * tab.sum(0, keepdims=True) / tab.sum()
        if exp[:, -1].min() >= 5:
            break
        tab[:, -2] += tab[:, -1]
        tab = tab[:, :-1]
    if tab.shape[1] < 2:
        return TestReport(name, 0.0, 1.0, True, dict(meta or {}, categories=1))
    chi2, p, dof, _ = st.chi2_contingency(tab, correction=False)
    return TestReport(name, float(chi2), float(p), p >= P_THRESHOLD,
                      dict(meta or {}, categories=int(tab.shape[1]), dof=int(dof),
                           mean_x=float(x.mean()), mean_y=float(y.mean())))


@dataclass
class SweepSpec:
    """A named discrepancy measured at each eps.

    ``measure(eps)`` returns ``(value, standard_error)``; use 0 for the error
    of deterministic quantities.
    """

    name: str
    eps: Sequence[float]
    measure: Callable[[float], tuple]
    tolerance: float


def convergence_sweep(spec: SweepSpec) -> list:
    """Per-eps reports plus a summary that passes iff the discrepancy is
    weakly decreasing (one inversion allowed when within 2 standard errors)
    and the final value is below the tolerance."""
    eps = list(spec.eps)
    if len(eps) < 3:
        raise ConfigError("a convergence sweep needs at least 3 eps values")
    if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
        raise ConfigError("eps list must be strictly decreasing")
    vals, errs, reports = [], [], []
    for e in eps:
        v, se = spec.measure(e)
        vals.append(float(v))
        errs.append(float(se))
        reports.append(TestReport(f"{spec.name}[eps={e:g}]", float(v), spec.tolerance,
                                  float(v) <= spec.tolerance, {"eps": e, "se": float(se)}))
    inversions = bad = 0
    for i in range(len(vals) - 1):
        if vals[i + 1] > vals[i]:
            inversions += 1
            if vals[i + 1] - vals[i] > 2 * math.hypot(errs[i], errs[i + 1]):
                bad += 1
    ok = bad == 0 and inversions <= 1 and vals[-1] <= spec.tolerance
    reports.append(TestReport(spec.name, vals[-1], spec.tolerance, ok,
                              {"eps": eps, "values": vals, "se": errs, "inversions": inversions}))
    return reports
