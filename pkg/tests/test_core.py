from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flockplan.core import (
    BoidState,
    ConfigError,
    FlockConfig,
    NumericInputError,
    displacement,
    energy_rate,
    integrate_step,
    propagate,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
vec = st.tuples(finite, finite).map(np.array)


def base_config(**changes) -> FlockConfig:
    values = dict(n_agents=5, k=2, body_radius=0.1, flock_radius=1.0, alpha=1.0, v_max=1.0, u_max=1.0,
                  horizon=2.0, plan_steps=20, sim_dt=0.1, replan_interval=0.5, total_time=10.0)
    values.update(changes)
    return FlockConfig(**values)


def test_integrate_step_closed_form():
    out = integrate_step(BoidState.at(0, 0, 1, 0), (0, 2), 0.5)
    np.testing.assert_allclose(out.position, [0.5, 0.25])
    np.testing.assert_allclose(out.velocity, [1.0, 1.0])


def test_integrate_step_ballistic():
    out = integrate_step(BoidState.at(2, -1, 0.3, 0.7), (0, 0), 1.0)
    np.testing.assert_allclose(out.position, [2.3, -0.3])
    np.testing.assert_allclose(out.velocity, [0.3, 0.7])


def test_rest_to_rest_profile_reaches_target():
    dt = 0.01
    state = BoidState.at(0, 0)
    for n in range(100):
        t_mid = (n + 0.5) * dt
        state = integrate_step(state, (6 - 12 * t_mid, 0), dt)
    np.testing.assert_allclose(state.position, [1, 0], atol=1e-3)
    np.testing.assert_allclose(state.velocity, [0, 0], atol=1e-3)


@pytest.mark.parametrize("u,dt", [((math.nan, 0), 0.1), ((0, math.inf), 0.1), ((0, 0), 0.0), ((0, 0), -1.0)])
def test_integrate_step_rejects_bad_input(u, dt):
    with pytest.raises(NumericInputError):
        integrate_step(BoidState.at(0, 0), u, dt)


def test_state_rejects_non_finite():
    with pytest.raises(NumericInputError):
        BoidState.at(math.nan, 0)


@pytest.mark.parametrize("u,expected", [((3, 4), 25.0), ((0, 0), 0.0), ((-1, 1), 2.0)])
def test_energy_rate(u, expected):
    assert energy_rate(u) == expected


def test_displacement_examples():
    np.testing.assert_array_equal(displacement((0, 0), (2, 1)), [2, 1])
    np.testing.assert_array_equal(displacement((1.5, 2), (1.5, 2)), [0, 0])
    np.testing.assert_array_equal(displacement((1, 2), (4, 6)), [3, 4])
    np.testing.assert_array_equal(displacement((4, 6), (1, 2)), [-3, -4])


@given(vec, vec, vec, st.floats(1e-3, 10))
def test_half_steps_compose(p, v, u, dt):
    s = BoidState(p, v)
    one = integrate_step(s, u, dt)
    two = integrate_step(integrate_step(s, u, dt / 2), u, dt / 2)
    scale = 1 + np.abs(p).max() + np.abs(v).max() * dt + np.abs(u).max() * dt * dt
    np.testing.assert_allclose(two.position, one.position, rtol=0, atol=1e-12 * scale)
    np.testing.assert_allclose(two.velocity, one.velocity, rtol=0, atol=1e-12 * (1 + np.abs(v).max() + np.abs(u).max() * dt))


@given(vec, vec)
def test_displacement_antisymmetric(a, b):
    np.testing.assert_array_equal(displacement(a, b), -displacement(b, a))


@given(vec)
def test_energy_rate_nonnegative(u):
    e = energy_rate(u)
    assert e >= 0
    assert (e == 0) == bool(np.all(u == 0)) or e < 1e-300


def test_propagate_matches_steps():
    rng = np.random.default_rng(1)
    controls = rng.normal(size=(7, 2))
    pos, vel = propagate(np.array([1.0, -2.0]), np.array([0.5, 0.25]), controls, 0.3)
    state = BoidState.at(1.0, -2.0, 0.5, 0.25)
    for n, u in enumerate(controls):
        state = integrate_step(state, u, 0.3)
        np.testing.assert_allclose(pos[n + 1], state.position, atol=1e-12)
        np.testing.assert_allclose(vel[n + 1], state.velocity, atol=1e-12)


@pytest.mark.parametrize(
    "changes,key",
    [
        (dict(k=5), "k"),
        (dict(k=0), "k"),
        (dict(flock_radius=0.2), "flock_radius"),
        (dict(sim_dt=1.0), "sim_dt"),
        (dict(replan_interval=3.0), "replan_interval"),
        (dict(alpha=-1.0), "alpha"),
        (dict(n_agents=2.5), "n_agents"),
        (dict(overrides={1: {"k": 3}}), "overrides.1.k"),
        (dict(overrides={9: {"alpha": 3}}), "overrides"),
    ],
)
def test_config_validation_names_key(changes, key):
    with pytest.raises(ConfigError) as info:
        base_config(**changes)
    assert info.value.key == key


def test_config_overrides_apply_per_agent():
    cfg = base_config(overrides={2: {"alpha": 5.0, "u_max": 3.0}})
    assert cfg.for_agent(2).alpha == 5.0
    assert cfg.for_agent(2).u_max == 3.0
    assert cfg.for_agent(1) is cfg
    assert cfg.plan_dt == pytest.approx(0.1)
    assert cfg.n_steps == 100


def test_state_equality_and_array():
    a = BoidState.at(1, 2, 3, 4)
    assert a == BoidState.at(1, 2, 3, 4)
    assert a != BoidState.at(1, 2, 3, 5)
    np.testing.assert_array_equal(a.as_array(), [1, 2, 3, 4])
