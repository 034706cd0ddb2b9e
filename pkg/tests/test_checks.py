from __future__ import annotations

import math
from collections import Counter
from itertools import product

import pytest
from hypothesis import given, strategies as st

from beaconbft.simnet import Scenario, fairness_report, simulate
from beaconbft.simnet.checks import (
    CorruptionTimeline,
    maximal_streaks,
    streak_checks,
    streak_windows,
    view_records,
    window_count_moments,
)


def exact_moments(p: float, d: int, views: int) -> tuple[float, float]:
    """Mean and sd of the window count over every flag sequence, weighted by probability."""
    mean = second = 0.0
    for flags in product((False, True), repeat=views):
        k = sum(flags)
        w = p**k * (1 - p) ** (views - k)
        c = streak_windows(flags, d)
        mean += w * c
        second += w * c * c
    return mean, math.sqrt(second - mean * mean)


@pytest.mark.parametrize("p", [1 / 3, 0.5, 0.2])
@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_window_moments_match_exhaustive_enumeration(p, d):
    views = 11
    mean, sd = window_count_moments(p, d, views)
    exp_mean, exp_sd = exact_moments(p, d, views)
    assert mean == pytest.approx(exp_mean, rel=1e-12)
    assert sd == pytest.approx(exp_sd, rel=1e-9)


def test_window_moments_for_too_short_a_run():
    assert window_count_moments(0.5, 5, 3) == (0.0, 0.0)


def test_streak_windows_by_hand():
    flags = [1, 1, 1, 0, 1, 1, 0, 0, 1]
    assert streak_windows(flags, 1) == 6
    assert streak_windows(flags, 2) == 3
    assert streak_windows(flags, 3) == 1
    assert streak_windows(flags, 4) == 0


def test_maximal_streaks_by_hand():
    assert maximal_streaks([1, 1, 1, 0, 1, 1, 0, 0, 1]) == Counter({3: 1, 2: 1, 1: 1})
    assert maximal_streaks([]) == Counter()
    assert maximal_streaks([1] * 5) == Counter({5: 1})


@given(st.lists(st.booleans(), max_size=60), st.integers(1, 6))
def test_windows_are_recoverable_from_maximal_streaks(flags, d):
    hist = maximal_streaks(flags)
    assert streak_windows(flags, d) == sum(c * (k - d + 1) for k, c in hist.items() if k >= d)
    assert sum(k * c for k, c in hist.items()) == sum(flags)


def test_streak_checks_use_the_wider_overlap_sigma():
    checks = streak_checks([True, False] * 500, 1 / 3)
    assert [c.d for c in checks] == [1, 2, 3]
    assert checks[0].sigma == pytest.approx(checks[0].binomial_sigma)
    assert all(c.sigma > c.binomial_sigma for c in checks[1:])
    assert checks[1].observed == 0 and not checks[1].within_3sigma


def corruption_trace(changes):
    return [{"time": t, "node": None, "event": e, "target": n} for t, e, n in changes]


def test_corruption_timeline_intervals():
    tl = CorruptionTimeline(corruption_trace([(1.0, "corrupt", 2), (5.0, "release", 2)]))
    assert not tl.corrupt_at(2, 0.5)
    assert tl.corrupt_at(2, 1.0) and tl.corrupt_at(2, 4.9)
    assert not tl.corrupt_at(2, 5.0)
    assert tl.corrupt_during(2, 0.0, 1.0)
    assert not tl.corrupt_during(2, 5.5, 9.0)
    assert tl.ever_corrupt(2) and not tl.ever_corrupt(1)


def test_single_node_leads_every_view():
    trace = simulate(Scenario(n=1, f=0, rounds=5, seed=1)).trace
    rep = fairness_report(trace)
    assert rep.frequencies == [1.0]
    assert rep.underpowered and rep.p_value is None


def test_short_run_is_flagged_underpowered():
    trace = simulate(Scenario(n=4, f=1, rounds=10, seed=1)).trace
    rep = fairness_report(trace)
    assert rep.underpowered and rep.chi2 is None
    assert sum(rep.frequencies) == pytest.approx(1.0)
    assert rep.views == len(view_records(trace))
