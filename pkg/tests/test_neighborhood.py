from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flockplan.core import BoidState, ConfigError
from flockplan.neighborhood import (
    center,
    classify,
    continuity_jumps,
    detect_switch,
    is_symmetric_switch,
    knn,
    knn_all,
    snapshot,
    track,
    SwitchEvent,
)
from flockplan.suites import asymmetric_switch_trace, symmetric_switch_trace

LINE = [(0, 0), (1, 0), (3, 0), (10, 0)]


def brute_knn(positions, i, k):
    pos = np.asarray(positions, dtype=float)
    d2 = [(float(np.sum((pos[j] - pos[i]) ** 2)), j) for j in range(len(pos)) if j != i]
    return tuple(sorted(j for _, j in sorted(d2)[:k]))


def test_knn_examples():
    assert knn(LINE, 0, 2) == (1, 2)
    assert knn([(0, 0), (1, 0), (-1, 0)], 0, 1) == (1,)
    assert knn(LINE, 2, 2) == brute_knn(LINE, 2, 2) == (0, 1)


@pytest.mark.parametrize("k", [0, 4, 5])
def test_knn_rejects_bad_k(k):
    with pytest.raises(ConfigError) as info:
        knn(LINE, 0, k)
    assert info.value.key == "k"


points = st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=3, max_size=9)


@given(points, st.data())
def test_knn_matches_brute_force(pts, data):
    i = data.draw(st.integers(0, len(pts) - 1))
    k = data.draw(st.integers(1, len(pts) - 1))
    members = knn(pts, i, k)
    assert members == brute_knn(pts, i, k)
    assert i not in members and len(members) == k
    assert knn(pts, i, k) == members


def test_center_examples():
    states = [BoidState.at(0, 0), BoidState.at(2, 2)]
    np.testing.assert_allclose(center(states, [0, 1])[0], [1, 1])
    c, cdot = center({7: BoidState.at(3, 4, 5, 6)}, [7])
    np.testing.assert_array_equal(c, [3, 4])
    np.testing.assert_array_equal(cdot, [5, 6])
    states = [BoidState.at(0, 0, 1, 1), BoidState.at(1, 0, 1, 1), BoidState.at(2, 3, 1, 1)]
    c, cdot = center(states, [0, 1, 2])
    np.testing.assert_allclose(c, [1, 1])
    np.testing.assert_allclose(cdot, [1, 1])
    with pytest.raises(ValueError):
        center(states, [])


def test_snapshot_excludes_owner_and_averages_controls():
    states = [BoidState.at(0, 0), BoidState.at(2, 0), BoidState.at(0, 2)]
    snap = snapshot(0, [2, 1], states, controls=np.array([[9, 9], [1, 0], [0, 1]]))
    assert snap.members == (1, 2)
    np.testing.assert_allclose(snap.center_pos, [1, 1])
    np.testing.assert_allclose(snap.center_acc, [0.5, 0.5])
    with pytest.raises(ValueError):
        snapshot(0, [0, 1], states)


def _snap(owner, members):
    states = {j: BoidState.at(j, 0) for j in range(6)}
    return snapshot(owner, members, states)


def test_detect_switch_examples():
    assert detect_switch(_snap(0, [1, 2]), _snap(0, [1, 2]), 1.0) is None
    e = detect_switch(_snap(0, [1, 2]), _snap(0, [1, 3]), 1.0)
    assert (e.removed, e.added) == ({2}, {3})
    e = detect_switch(_snap(0, [1, 2]), _snap(0, [3, 4]), 1.0)
    assert (e.removed, e.added) == ({1, 2}, {3, 4})
    assert e.removed.isdisjoint(e.added) and len(e.removed) == len(e.added)
    with pytest.raises(ValueError):
        detect_switch(_snap(0, [1, 2]), _snap(5, [1, 2]), 1.0)


def test_symmetric_switch_examples():
    same = {1: BoidState.at(1, 0, 1, 0), 2: BoidState.at(1, 0, 1, 0)}
    assert is_symmetric_switch(SwitchEvent(0, 0.0, frozenset({1}), frozenset({2})), same)
    apart = {1: BoidState.at(1, 0), 2: BoidState.at(2, 0)}
    assert not is_symmetric_switch(SwitchEvent(0, 0.0, frozenset({1}), frozenset({2})), apart, tol=1e-9)
    states = {
        1: BoidState.at(0, 1, 0.2, 0.5), 2: BoidState.at(2, -1, 0.4, -0.1),
        3: BoidState.at(1, 0, 0.3, 0.1), 4: BoidState.at(1, 0, 0.3, 0.3),
    }
    event = SwitchEvent(0, 0.0, frozenset({1, 2}), frozenset({3, 4}))
    assert is_symmetric_switch(event, states)
    assert classify(event, states).symmetric


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=2, max_size=5))
def test_permuted_aggregates_are_symmetric(pts):
    states = {j: BoidState.at(x, y, y, -x) for j, (x, y) in enumerate(pts)}
    n = len(pts)
    states.update({n + j: states[n - 1 - j] for j in range(n)})
    event = SwitchEvent(99, 0.0, frozenset(range(n)), frozenset(range(n, 2 * n)))
    assert is_symmetric_switch(event, states, tol=1e-9)


def test_continuity_without_switches():
    rng = np.random.default_rng(3)
    dt, v_max = 0.05, 1.0
    p0 = rng.uniform(-3, 3, size=(6, 2))
    v = rng.uniform(-0.7, 0.7, size=(6, 2))
    times = dt * np.arange(40)
    history = [[BoidState(p, vv) for p, vv in zip(p0 + v * t, v)] for t in times]
    for i in range(6):
        trace = track(times, history, i, 2)
        steps = set(trace.switch_steps())
        jumps = continuity_jumps(times, trace.center_pos, v_max)
        assert set(jumps) <= steps


def test_constructed_switches():
    trace, drift = symmetric_switch_trace()
    dt = trace.times[1] - trace.times[0]
    assert len(trace.events) == 1 and trace.events[0].symmetric
    rates = np.linalg.norm(np.diff(trace.center_pos, axis=0), axis=1) / dt
    np.testing.assert_allclose(rates, drift, rtol=1e-9)
    assert not continuity_jumps(trace.times, trace.center_vel, 1e-6)

    trace = asymmetric_switch_trace()
    assert len(trace.events) == 1 and not trace.events[0].symmetric
    steps = trace.switch_steps()
    assert continuity_jumps(trace.times, trace.center_pos, 2.0) == steps
    assert continuity_jumps(trace.times, trace.center_vel, 2.0) == steps


def test_knn_all_deterministic():
    pts = [(x, y) for x, y in itertools.product(range(3), range(3))]
    assert knn_all(pts, 4) == knn_all(list(pts), 4)
    assert knn_all(pts, 1)[4] == (1,)
