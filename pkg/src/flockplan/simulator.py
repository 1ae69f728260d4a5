"""Receding-horizon flock simulation with priority-ordered replanning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .constraints import pairwise_margins, task_residuals
from .core import BoidState, ConfigError, FlockConfig, integrate_step
from .neighborhood import SwitchEvent, is_symmetric_switch, knn_all
from .planner import PlanProblem, Planner, PlannerSettings, PlanSolution, Trajectory

log = logging.getLogger(__name__)

TopologyMode = Literal["dynamic-knn", "fixed"]
MAX_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class Placement:
    """Random initial condition generator.

    ``grid`` spaces agents evenly on a square lattice filling a square of side
    ``size``; ``uniform-disk`` samples positions uniformly in a disk of radius
    ``size``.  Velocities are uniform over the annulus
    ``speed_min <= |v| <= speed_max``.
    """

    kind: Literal["grid", "uniform-disk"] = "uniform-disk"
    size: float = 1.0
    speed_min: float = 0.0
    speed_max: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("grid", "uniform-disk"):
            raise ConfigError("placement.kind", f"unknown placement {self.kind!r}")
        if not self.size > 0:
            raise ConfigError("placement.size", "must be positive")
        if not 0 <= self.speed_min <= self.speed_max:
            raise ConfigError("placement.speed_max", "need 0 <= speed_min <= speed_max")


@dataclass(frozen=True)
class ScenarioSpec:
    config: FlockConfig
    placement: Placement = field(default_factory=Placement)
    initial_states: tuple[BoidState, ...] | None = None
    topology_mode: TopologyMode = "dynamic-knn"

    def __post_init__(self) -> None:
        if self.topology_mode not in ("dynamic-knn", "fixed"):
            raise ConfigError("topology_mode", f"unknown mode {self.topology_mode!r}")
        if self.initial_states is not None:
            object.__setattr__(self, "initial_states", tuple(self.initial_states))
            if len(self.initial_states) != self.config.n_agents:
                raise ConfigError("initial_states", f"expected {self.config.n_agents} states, "
                                  f"got {len(self.initial_states)}")


def generate_initial_states(config: FlockConfig, placement: Placement) -> list[BoidState]:
    rng = np.random.default_rng(config.seed)
    n = config.n_agents
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        if placement.kind == "grid":
            side = math.ceil(math.sqrt(n))
            spacing = placement.size / max(side - 1, 1)
            cells = np.array([(c % side, c // side) for c in range(n)], dtype=float)
            pos = (cells - (side - 1) / 2) * spacing
        else:
            radius = placement.size * np.sqrt(rng.uniform(size=n))
            angle = rng.uniform(0, 2 * np.pi, size=n)
            pos = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        lo, hi = placement.speed_min**2, placement.speed_max**2
        speed = np.sqrt(rng.uniform(lo, hi, size=n))
        heading = rng.uniform(0, 2 * np.pi, size=n)
        vel = np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=1)
        if n < 2 or np.min(pairwise_margins(pos, config.body_radius)) > 0:
            return [BoidState(p, v) for p, v in zip(pos, vel)]
        if placement.kind == "grid":
            break
    raise ConfigError("placement", f"could not place {n} agents {2 * config.body_radius} apart "
                      f"after {MAX_PLACEMENT_ATTEMPTS} attempts")


def undirected_connected(neighbor_sets: Sequence[Sequence[int]]) -> bool:
    n = len(neighbor_sets)
    rows = [i for i, members in enumerate(neighbor_sets) for _ in members]
    cols = [j for members in neighbor_sets for j in members]
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    count, _ = connected_components(graph, directed=False)
    return count == 1


class TrajectoryRegistry:
    """Latest committed plan per agent, stamped with its commit time."""

    def __init__(self) -> None:
        self._plans: dict[int, tuple[float, Trajectory]] = {}

    def __contains__(self, agent: int) -> bool:
        return agent in self._plans

    def get(self, agent: int) -> Trajectory | None:
        entry = self._plans.get(agent)
        return entry[1] if entry else None

    def committed_at(self, agent: int) -> float | None:
        entry = self._plans.get(agent)
        return entry[0] if entry else None

    def read(self, agent: int, current: BoidState, t: float, dt: float, steps: int) -> Trajectory:
        """Committed plan of ``agent``; a coasting plan from ``current`` if none exists yet."""
        entry = self._plans.get(agent)
        if entry is None:
            return Trajectory.ballistic(current, t, dt, steps)
        return entry[1]

    def commit(self, agent: int, trajectory: Trajectory, t: float) -> None:
        self._plans[agent] = (float(t), trajectory)


def commit_plan(agent: int, solution: PlanSolution, registry: TrajectoryRegistry, t: float) -> TrajectoryRegistry:
    registry.commit(agent, solution.trajectory, t)
    return registry


@dataclass(frozen=True)
class LogEvent:
    t: float
    agent: int
    kind: str
    detail: str = ""


@dataclass
class SimulationLog:
    """Time history; row ``n`` holds the state at ``times[n]`` and the input applied over the next step."""

    config: FlockConfig
    topology_mode: str
    times: NDArray[np.float64]
    positions: NDArray[np.float64]
    velocities: NDArray[np.float64]
    controls: NDArray[np.float64]
    neighbor_sets: NDArray[np.int64]
    task_residuals: NDArray[np.float64]
    slacks: NDArray[np.float64]
    min_safety: NDArray[np.float64]
    final_positions: NDArray[np.float64]
    final_velocities: NDArray[np.float64]
    switch_events: list[SwitchEvent] = field(default_factory=list)
    replan_events: list[tuple[float, int, str]] = field(default_factory=list)
    failures: list[LogEvent] = field(default_factory=list)

    @property
    def n_agents(self) -> int:
        return self.positions.shape[1]

    def states_at(self, n: int) -> list[BoidState]:
        return [BoidState(p, v) for p, v in zip(self.positions[n], self.velocities[n])]

    @property
    def constraint_history(self) -> NDArray[np.float64]:
        """Per step ``(min safety margin, max task residual, max slack)``."""
        return np.stack([self.min_safety.min(axis=1), self.task_residuals.max(axis=1),
                         self.slacks.max(axis=1)], axis=1)

    @property
    def safety_failures(self) -> list[LogEvent]:
        return [f for f in self.failures if f.kind == "safety-violation"]

    @property
    def plan_failures(self) -> list[LogEvent]:
        return [f for f in self.failures if f.kind == "plan-failure"]

    def events(self) -> list[LogEvent]:
        """All events in time order, rendered for the event log."""
        out = [LogEvent(t, a, "replan", cause) for t, a, cause in self.replan_events]
        for e in self.switch_events:
            detail = (f"removed={'|'.join(map(str, sorted(e.removed)))};"
                      f"added={'|'.join(map(str, sorted(e.added)))};symmetric={str(e.symmetric).lower()}")
            out.append(LogEvent(e.time, e.agent, "switch", detail))
        out.extend(self.failures)
        order = {"switch": 0, "replan": 1, "plan-failure": 2, "safety-violation": 3}
        return sorted(out, key=lambda e: (e.t, order.get(e.kind, 9), e.agent))


class Simulator:
    def __init__(self, spec: ScenarioSpec, settings: PlannerSettings | None = None):
        self.spec = spec
        self.config = spec.config
        self.planner = Planner(settings)
        self.hard_tol = 1e-6 * 2 * self.config.body_radius

    def initial_states(self) -> list[BoidState]:
        if self.spec.initial_states is not None:
            return list(self.spec.initial_states)
        return generate_initial_states(self.config, self.spec.placement)

    def run(self) -> SimulationLog:
        cfg = self.config
        n, dt = cfg.n_agents, cfg.sim_dt
        steps = cfg.n_steps
        h, m = cfg.plan_dt, cfg.plan_steps
        states = self.initial_states()

        frozen = None
        if self.spec.topology_mode == "fixed":
            frozen = knn_all([s.position for s in states], cfg.k)
            if not undirected_connected(frozen):
                raise ConfigError("topology_mode", "frozen k-NN graph is not connected")

        registry = TrajectoryRegistry()
        last_replan = np.full(n, -np.inf)
        times = dt * np.arange(steps)
        pos_log = np.empty((steps, n, 2))
        vel_log = np.empty((steps, n, 2))
        u_log = np.empty((steps, n, 2))
        sets_log = np.empty((steps, n, cfg.k), dtype=np.int64)
        g_log = np.empty((steps, n))
        eta_log = np.empty((steps, n))
        safe_log = np.empty((steps, n))
        switches: list[SwitchEvent] = []
        replans: list[tuple[float, int, str]] = []
        failures: list[LogEvent] = []
        prev_sets: list[tuple[int, ...]] | None = None

        for step in range(steps):
            t = float(times[step])
            positions = np.array([s.position for s in states])
            sets = frozen if frozen is not None else knn_all(positions, cfg.k)

            causes: dict[int, str] = {}
            if prev_sets is None:
                causes = {i: "initial" for i in range(n)}
            else:
                for i in range(n):
                    before, after = set(prev_sets[i]), set(sets[i])
                    if before != after:
                        event = SwitchEvent(i, t, frozenset(before - after), frozenset(after - before))
                        symmetric = is_symmetric_switch(event, states)
                        switches.append(SwitchEvent(i, t, event.removed, event.added, symmetric))
                        causes[i] = "switch"
            for i in range(n):
                if i not in causes and t - last_replan[i] >= cfg.replan_interval - 1e-9 * dt:
                    causes[i] = "periodic"

            for i in sorted(causes):
                neighbors = {j: registry.read(j, states[j], t, h, m) for j in sets[i]}
                problem = PlanProblem(i, t, states[i], cfg, neighbors)
                solution = self.planner.plan(problem, self._warm_start(registry.get(i), t, h, m))
                replans.append((t, i, causes[i]))
                last_replan[i] = t
                if solution.converged:
                    commit_plan(i, solution, registry, t)
                else:
                    failures.append(LogEvent(t, i, "plan-failure",
                                             f"max_safety_violation={solution.max_safety_violation:.6g}"))
                    log.warning("t=%.3f agent %d: plan did not converge, keeping previous plan", t, i)

            controls = np.zeros((n, 2))
            for i in range(n):
                plan = registry.get(i)
                if plan is not None:
                    controls[i] = plan.control_at(t)
                    eta_log[step, i] = plan.slack_at(t)
                else:
                    eta_log[step, i] = 0.0

            margins = pairwise_margins(positions, cfg.body_radius)
            dist = np.sqrt(np.maximum(margins + 4 * cfg.body_radius**2, 0.0))
            for i in range(n):
                closest = float(np.min(dist[i]))
                if closest < 2 * cfg.body_radius - self.hard_tol:
                    failures.append(LogEvent(t, i, "safety-violation", f"min_distance={closest:.12g}"))

            pos_log[step] = positions
            vel_log[step] = [s.velocity for s in states]
            u_log[step] = controls
            sets_log[step] = sets
            g_log[step] = task_residuals(positions, sets, cfg.flock_radius)
            safe_log[step] = margins.min(axis=1)
            prev_sets = [tuple(s) for s in sets]

            states = [integrate_step(s, u, dt) for s, u in zip(states, controls)]

        return SimulationLog(
            config=cfg,
            topology_mode=self.spec.topology_mode,
            times=times,
            positions=pos_log,
            velocities=vel_log,
            controls=u_log,
            neighbor_sets=sets_log,
            task_residuals=g_log,
            slacks=eta_log,
            min_safety=safe_log,
            final_positions=np.array([s.position for s in states]),
            final_velocities=np.array([s.velocity for s in states]),
            switch_events=switches,
            replan_events=replans,
            failures=failures,
        )

    @staticmethod
    def _warm_start(previous: Trajectory | None, t: float, h: float, m: int) -> Trajectory | None:
        if previous is None:
            return None
        controls = np.array([previous.control_at(t + k * h) for k in range(m)])
        return Trajectory(t, h, np.zeros((m + 1, 2)), np.zeros((m + 1, 2)), controls, np.zeros(m))


def run(spec: ScenarioSpec, settings: PlannerSettings | None = None) -> SimulationLog:
    return Simulator(spec, settings).run()


def detect_consensus(velocities: Sequence[BoidState] | NDArray[np.float64], tol: float) -> bool:
    """True when every pair of agents differs in velocity by at most ``tol``."""
    from .metrics import velocity_disagreement

    return velocity_disagreement(velocities) <= tol
