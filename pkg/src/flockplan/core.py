"""Agent state, exact double-integrator propagation and the energy model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

log = logging.getLogger(__name__)

Vec2 = NDArray[np.float64]

OVERRIDABLE = ("alpha", "v_max", "u_max")


class NumericInputError(ValueError):
    """A NaN or infinite value reached an operation that requires finite input."""


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending parameter."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


def vec2(value: ArrayLike) -> Vec2:
    arr = np.asarray(value, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(arr)):
        raise NumericInputError(f"non-finite vector {arr!r}")
    return arr


@dataclass(frozen=True)
class BoidState:
    position: Vec2
    velocity: Vec2

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", vec2(self.position))
        object.__setattr__(self, "velocity", vec2(self.velocity))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BoidState):
            return NotImplemented
        return bool(
            np.array_equal(self.position, other.position)
            and np.array_equal(self.velocity, other.velocity)
        )

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def at(cls, px: float, py: float, vx: float = 0.0, vy: float = 0.0) -> BoidState:
        return cls(np.array([px, py]), np.array([vx, vy]))

    def as_array(self) -> NDArray[np.float64]:
        return np.concatenate([self.position, self.velocity])


@dataclass(frozen=True)
class FlockConfig:
    """Scalar parameters shared by every agent in a run.

    ``overrides`` maps an agent id to replacement values for any of
    ``alpha``, ``v_max`` or ``u_max``.
    """

    n_agents: int
    k: int
    body_radius: float
    flock_radius: float
    alpha: float
    v_max: float
    u_max: float
    horizon: float
    plan_steps: int
    sim_dt: float
    replan_interval: float
    total_time: float
    seed: int = 0
    overrides: Mapping[int, Mapping[str, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    @property
    def plan_dt(self) -> float:
        return self.horizon / self.plan_steps

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.sim_dt))

    def validate(self) -> None:
        for key in ("n_agents", "k", "plan_steps"):
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(key, f"must be an integer, got {value!r}")
            if value < 1:
                raise ConfigError(key, f"must be positive, got {value}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("seed", f"must be an integer, got {self.seed!r}")
        for key in ("body_radius", "flock_radius", "v_max", "u_max", "horizon",
                    "sim_dt", "replan_interval", "total_time"):
            value = getattr(self, key)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(key, f"must be a positive finite number, got {value!r}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigError("alpha", f"must be nonnegative, got {self.alpha!r}")
        if self.k > self.n_agents - 1:
            raise ConfigError("k", f"must satisfy k <= n_agents - 1 = {self.n_agents - 1}, got {self.k}")
        if self.flock_radius <= 2 * self.body_radius:
            raise ConfigError("flock_radius", "must exceed twice body_radius")
        if self.sim_dt > self.replan_interval:
            raise ConfigError("sim_dt", "must not exceed replan_interval")
        if self.replan_interval > self.horizon:
            raise ConfigError("replan_interval", "must not exceed horizon")
        for agent, values in self.overrides.items():
            if not 0 <= int(agent) < self.n_agents:
                raise ConfigError("overrides", f"unknown agent id {agent}")
            for key, value in values.items():
                if key not in OVERRIDABLE:
                    raise ConfigError(f"overrides.{agent}.{key}", "not an overridable parameter")
                if not (math.isfinite(value) and (value > 0 or (key == "alpha" and value == 0))):
                    raise ConfigError(f"overrides.{agent}.{key}", f"invalid value {value!r}")
        if self.v_max * self.plan_dt > self.body_radius:
            log.warning(
                "v_max * plan_dt = %.3g exceeds body_radius %.3g; inter-knot contacts may go unseen",
                self.v_max * self.plan_dt, self.body_radius,
            )

    def for_agent(self, agent: int) -> FlockConfig:
        """Return the configuration seen by ``agent`` with its overrides applied."""
        values = self.overrides.get(agent)
        if not values:
            return self
        return replace(self, overrides={}, **dict(values))


def integrate_step(state: BoidState, u: ArrayLike, dt: float) -> BoidState:
    """Propagate one zero-order-hold step of the double integrator exactly."""
    u = vec2(u)
    if not (math.isfinite(dt) and dt > 0):
        raise NumericInputError(f"dt must be positive and finite, got {dt!r}")
    p = state.position + state.velocity * dt + 0.5 * u * dt * dt
    v = state.velocity + u * dt
    return BoidState(p, v)


def propagate(
    position: NDArray[np.float64],
    velocity: NDArray[np.float64],
    controls: NDArray[np.float64],
    dt: float,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Roll a control sequence forward; returns ``(M+1, 2)`` positions and velocities.

    Uses the same step recurrence as :func:`integrate_step` so the result
    agrees with repeated single steps bit for bit.
    """
    controls = np.asarray(controls, dtype=np.float64).reshape(-1, 2)
    m = len(controls)
    pos = np.empty((m + 1, 2))
    vel = np.empty((m + 1, 2))
    pos[0] = position
    vel[0] = velocity
    for k in range(m):
        pos[k + 1] = pos[k] + vel[k] * dt + 0.5 * controls[k] * dt * dt
        vel[k + 1] = vel[k] + controls[k] * dt
    return pos, vel


def energy_rate(u: ArrayLike) -> float:
    u = vec2(u)
    return float(u @ u)


def displacement(p_i: ArrayLike, p_j: ArrayLike) -> Vec2:
    """Relative displacement ``p_j - p_i`` pointing from agent i to agent j."""
    return vec2(p_j) - vec2(p_i)
