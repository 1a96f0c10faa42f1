import math

import numpy as np
import pytest
from scipy import stats

from spikereset.flow import FlowContext
from spikereset.model import make_builtin_model
from spikereset.sampler import (RngStream, TooFewAccepted, conditional_counts, map_replicas, run_windows,
                                sample_cycle, sample_cycles, sample_e1_e2, simulate, simulate_trajectory)
from spikereset.transforms import _truncated_first_moment


def test_streams_reproducible_and_distinct():
    a = RngStream(5, 0).generator().random(4)
    b = RngStream(5, 0).generator().random(4)
    c = RngStream(5, 1).generator().random(4)
    d = RngStream(6, 0).generator().random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


@pytest.mark.parametrize("eps", [1e-2, 1e-4])
def test_table_sampler_matches_exact_inversion(eps):
    ctx = FlowContext(make_builtin_model(), eps)
    g = np.random.default_rng(3)
    Es = np.concatenate([[0.0, 1e-12, ctx.V_star, ctx.V_star + 1e-9, 30.0], g.exponential(2.0, 300)])
    from spikereset import _kernels as K
    from spikereset.sampler import _table_args
    xs, ts = K.cycles_from_E(Es, *_table_args(ctx))
    for E, x, t in zip(Es, xs, ts):
        z, dur = sample_cycle(ctx, None, exponential=float(E))
        assert x == pytest.approx(z, abs=1e-11)
        assert t == pytest.approx(dur, rel=1e-9, abs=1e-300)


def test_cycle_duration_law(ctx2):
    # P(duration > t) = survival_mu(t); P(position > x) = exp(-V(x))
    x, t = sample_cycles(ctx2, RngStream(11), 20_000)
    ks_t = stats.kstest(t, lambda s: np.array([1 - ctx2.survival_mu(float(v)) for v in np.atleast_1d(s)]))
    assert ks_t.pvalue > 0.01
    grid = np.linspace(0.05, 0.95, 10)
    emp = np.array([(x > g).mean() for g in grid])
    np.testing.assert_allclose(emp, np.exp(-ctx2.V(grid)), atol=4 * math.sqrt(0.25 / 20_000))


def test_excursion_hook(ctx2):
    E = ctx2.V_star + 0.7
    pairs = sample_e1_e2(ctx2, 1, 3, threads=1, first_exponential=E)
    assert np.allclose(pairs[:, 0], ctx2.T_star)
    z, dur = sample_cycle(ctx2, None, exponential=E)
    assert np.allclose(pairs[:, 1], dur, rtol=1e-9)


def test_mean_e1_against_quadrature(ctx2):
    # E[e1] = E[duration; no crossing] / P(crossing) + T_star
    p = math.exp(-ctx2.V_star)
    mean = _truncated_first_moment(ctx2) / p + ctx2.T_star
    e1 = sample_e1_e2(ctx2, 2, 4000)[:, 0]
    se = e1.std(ddof=1) / math.sqrt(len(e1))
    assert abs(e1.mean() - mean) < 4 * se


def test_thread_count_does_not_change_results(ctx3):
    a = sample_e1_e2(ctx3, 9, 600, threads=1)
    b = sample_e1_e2(ctx3, 9, 600, threads=4)
    np.testing.assert_array_equal(a, b)


def test_map_replicas_preserves_order():
    assert map_replicas(lambda i: i * i, range(1000), threads=3, block=7) == [i * i for i in range(1000)]


def test_simulate_structure(ctx3):
    pat = simulate(ctx3, RngStream(4), 20.0)
    t = pat.times
    assert np.all(np.diff(t) > 0) and t[-1] <= 20.0
    assert np.all((pat.positions > 0) & (pat.positions < ctx3.x_star))
    assert len(pat.jump_epochs) > 0
    eo, ee = pat.jump_epochs[:, 0], pat.jump_epochs[:, 1]
    assert np.all(ee > eo)
    # every excursion ends with a reset from above y_star
    inside = ee <= 20.0
    ends = np.searchsorted(t, ee[inside])
    assert np.all(pat.positions[ends] > ctx3.y_star)
    assert np.all(t[ends] == ee[inside])


def test_simulate_zero_horizon(ctx3):
    pat = simulate(ctx3, RngStream(1), 0.0)
    assert len(pat) == 0 and pat.jump_epochs.shape == (0, 2)
    with pytest.raises(ValueError):
        simulate(ctx3, RngStream(1), -1.0)


def test_simulate_reproducible(ctx3):
    a = simulate(ctx3, RngStream(8, 2), 5.0)
    b = simulate(ctx3, RngStream(8, 2), 5.0)
    np.testing.assert_array_equal(a.points, b.points)


def test_windows_stop_at_first_excursion(ctx3):
    wins = run_windows(ctx3, 3, 5.0, 0.0, range(200))
    for w in wins:
        limit = min(w.e1, 5.0)
        assert np.all(w.times <= limit)
        assert np.all(w.positions <= ctx3.y_star)


def test_conditional_counts(ctx3):
    rects = [((0.0, 1.0), (0.5, 1.0)), ((1.0, 2.0), (0.5, 1.0))]
    cc = conditional_counts(ctx3, 1, 2.0, rects, accepted=300)
    assert cc.counts.shape == (300, 2) and cc.accepted == 300
    # acceptance rate near P(e1 >= 2) ~ exp(-2 f0 / y_star)
    rate = math.exp(-2 / ctx3.y_star)
    se = math.sqrt(rate * (1 - rate) / cc.attempted)
    assert abs(cc.acceptance_rate - rate) < 4 * se
    again = conditional_counts(ctx3, 1, 2.0, rects, accepted=300, threads=2)
    np.testing.assert_array_equal(cc.counts, again.counts)


def test_conditional_counts_errors(ctx3):
    with pytest.raises(TooFewAccepted):
        conditional_counts(ctx3, 1, 3.0, [((0.0, 1.0), (0.5, 1.0))], replicas=50)
    with pytest.raises(ValueError):
        conditional_counts(ctx3, 1, 1.0, [((0.0, 2.0), (0.5, 1.0))], replicas=50)
    with pytest.raises(ValueError):
        conditional_counts(ctx3, 1, 1.0, [((0.0, 1.0), (0.5, 1.0))])


def test_trajectory(ctx2):
    tr = simulate_trajectory(ctx2, RngStream(2), 1.0, 500)
    assert tr.shape == (500, 2)
    assert tr[0, 1] == 0.0
    assert np.all((tr[:, 1] >= 0) & (tr[:, 1] < ctx2.x_star))
    # between resets the path follows the flow, so it only drops at resets
    pat = simulate(ctx2, RngStream(2), 1.0)
    drops = np.flatnonzero(np.diff(tr[:, 1]) < 0)
    for k in drops:
        assert np.any((pat.times > tr[k, 0]) & (pat.times <= tr[k + 1, 0]))
    assert simulate_trajectory(ctx2, RngStream(2), 0.0, 10).shape == (1, 2)
