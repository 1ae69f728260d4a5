from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from flockplan.core import BoidState, FlockConfig
from flockplan.metrics import (
    build_report,
    consensus_time,
    flock_diameter,
    theorem2_diagnostics,
    total_energy,
    velocity_disagreement,
)
from flockplan.simulator import SimulationLog


def fake_log(controls, velocities=None, positions=None, sim_dt=0.1, k=1):
    controls = np.asarray(controls, dtype=float)
    steps, n = controls.shape[:2]
    cfg = FlockConfig(n_agents=n, k=k, body_radius=0.1, flock_radius=1.0, alpha=1.0, v_max=1.0, u_max=1.0,
                      horizon=1.0, plan_steps=10, sim_dt=sim_dt, replan_interval=sim_dt,
                      total_time=steps * sim_dt)
    vel = np.zeros((steps, n, 2)) if velocities is None else np.asarray(velocities, dtype=float)
    pos = np.tile(np.arange(n, dtype=float)[:, None] * [1.0, 0.0], (steps, 1, 1)) if positions is None \
        else np.asarray(positions, dtype=float)
    sets = np.array([[[j for j in range(n) if j != i][:k] for i in range(n)]] * steps)
    return SimulationLog(
        config=cfg, topology_mode="fixed", times=sim_dt * np.arange(steps), positions=pos, velocities=vel,
        controls=controls, neighbor_sets=sets, task_residuals=np.full((steps, n), -1.0),
        slacks=np.zeros((steps, n)), min_safety=np.ones((steps, n)),
        final_positions=pos[-1], final_velocities=vel[-1],
    )


def test_velocity_disagreement_examples():
    assert velocity_disagreement([BoidState.at(0, 0, 1, 1)] * 3) == 0.0
    assert velocity_disagreement(np.array([[0, 0], [3, 4]])) == pytest.approx(5.0)
    assert velocity_disagreement(np.array([[0, 0], [3, 4], [3, 4]])) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        velocity_disagreement(np.array([[0, 0]]))


def test_flock_diameter_examples():
    assert flock_diameter([BoidState.at(0, 0), BoidState.at(3, 0)]) == pytest.approx(3.0)
    assert flock_diameter(np.ones((4, 2))) == 0.0


@given(arrays(np.float64, (5, 2), elements=st.floats(-10, 10)), st.floats(-10, 10), st.floats(-10, 10))
def test_diameter_translation_invariant(pos, dx, dy):
    assert flock_diameter(pos + [dx, dy]) == pytest.approx(flock_diameter(pos), abs=1e-9)


def test_total_energy_examples():
    assert total_energy(fake_log(np.zeros((10, 2, 2))), 0) == 0.0
    u = np.zeros((20, 2, 2))
    u[:, 0] = [0.6, 0.8]
    assert total_energy(fake_log(u), 0) == pytest.approx(2.0)
    assert total_energy(fake_log(2 * u), 0) == pytest.approx(8.0)


@given(arrays(np.float64, (12, 2, 2), elements=st.floats(-5, 5)))
def test_total_energy_time_reversal(u):
    forward = total_energy(fake_log(u), 1)
    assert forward >= 0
    assert total_energy(fake_log(u[::-1]), 1) == pytest.approx(forward, rel=1e-12, abs=1e-12)


def test_theorem2_diagnostics_examples():
    consensus = fake_log(np.zeros((3, 3, 2)), velocities=np.tile([1.0, 0.5], (3, 3, 1)), k=2)
    for step in theorem2_diagnostics(consensus):
        assert step.fast_count == 0
        np.testing.assert_allclose(step.speed_gaps, 0, atol=1e-12)
        assert step.slowest == 0
    vel = np.zeros((1, 3, 2))
    vel[0, 0] = [2.0, 0.0]
    vel[0, 1:] = [0.1, 0.0]
    step = theorem2_diagnostics(fake_log(np.zeros((1, 3, 2)), velocities=vel, k=2))[0]
    assert 0 in step.fast_set
    assert step.slowest == 1


def test_consensus_time_requires_persistence():
    vel = np.zeros((6, 2, 2))
    vel[:, 1, 0] = [1.0, 0.0, 0.0, 0.5, 0.0, 0.0]
    log = fake_log(np.zeros((6, 2, 2)), velocities=vel)
    assert consensus_time(log, 1e-3) == pytest.approx(0.4)
    vel[-1, 1, 0] = 1.0
    assert consensus_time(fake_log(np.zeros((6, 2, 2)), velocities=vel), 1e-3) is None


def test_report_fields_and_rendering():
    u = np.zeros((10, 3, 2))
    u[3:, 0] = [0.01, 0.0]
    report = build_report(fake_log(u, k=2))
    assert report.diameter_bound == pytest.approx(3.0)
    assert report.control_continuity_ok
    assert all(e >= 0 for e in report.total_energy.values())
    lines = report.lines()
    assert "diameter_bound: 3.0" in lines
    assert all(": " in line for line in lines)
    jumpy = np.zeros((10, 3, 2))
    jumpy[5:, 1] = [1.0, 0.0]
    assert not build_report(fake_log(jumpy, k=2)).control_continuity_ok
