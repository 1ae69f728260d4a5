"""Flock-level diagnostics computed from a simulation log."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import BoidState
from .primitives import check_control_continuity

if TYPE_CHECKING:
    from .simulator import SimulationLog

DEFAULT_CONSENSUS_TOL = 1e-2


def _velocities(states: Sequence[BoidState] | ArrayLike) -> NDArray[np.float64]:
    if len(states) and isinstance(states[0], BoidState):  # type: ignore[index]
        return np.array([s.velocity for s in states])  # type: ignore[union-attr]
    return np.asarray(states, dtype=np.float64).reshape(-1, 2)


def _positions(states: Sequence[BoidState] | ArrayLike) -> NDArray[np.float64]:
    if len(states) and isinstance(states[0], BoidState):  # type: ignore[index]
        return np.array([s.position for s in states])  # type: ignore[union-attr]
    return np.asarray(states, dtype=np.float64).reshape(-1, 2)


def _max_pairwise(x: NDArray[np.float64]) -> float:
    if len(x) < 2:
        raise ValueError("need at least two agents")
    diff = x[:, None, :] - x[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diff, diff))))


def velocity_disagreement(states: Sequence[BoidState] | ArrayLike) -> float:
    """Largest pairwise velocity difference; accepts states or an ``(N, 2)`` velocity array."""
    return _max_pairwise(_velocities(states))


def flock_diameter(states: Sequence[BoidState] | ArrayLike) -> float:
    """Largest pairwise distance; accepts states or an ``(N, 2)`` position array."""
    return _max_pairwise(_positions(states))


def disagreement_series(log: SimulationLog) -> NDArray[np.float64]:
    """Velocity disagreement at every logged step plus the final state."""
    vel = np.concatenate([log.velocities, log.final_velocities[None]], axis=0)
    diff = vel[:, :, None, :] - vel[:, None, :, :]
    return np.sqrt(np.max(np.einsum("tijk,tijk->tij", diff, diff), axis=(1, 2)))


def total_energy(log: SimulationLog, agent: int) -> float:
    u = log.controls[:, agent]
    return float(np.sum(u * u) * log.config.sim_dt)


def integrated_slack(log: SimulationLog, agent: int) -> float:
    return float(np.sum(log.slacks[:, agent]) * log.config.sim_dt)


def consensus_time(log: SimulationLog, tol: float = DEFAULT_CONSENSUS_TOL) -> float | None:
    """First time from which the disagreement stays within ``tol`` through the end of the run."""
    series = disagreement_series(log)
    times = np.append(log.times, log.times[-1] + log.config.sim_dt)
    bad = np.flatnonzero(series > tol)
    if bad.size == 0:
        return float(times[0])
    if bad[-1] == len(series) - 1:
        return None
    return float(times[bad[-1] + 1])


@dataclass(frozen=True)
class Theorem2Step:
    t: float
    fast_set: frozenset[int]
    slowest: int
    speed_gaps: NDArray[np.float64]

    @property
    def fast_count(self) -> int:
        return len(self.fast_set)


def theorem2_diagnostics(log: SimulationLog, gap_tol: float = 1e-12) -> list[Theorem2Step]:
    """Per step: agents faster than their neighborhood center, the slowest agent and the speed gaps.

    The slowest agent is the lowest id among ties.
    """
    out = []
    for n, t in enumerate(log.times):
        vel = log.velocities[n]
        center_vel = vel[log.neighbor_sets[n]].mean(axis=1)
        speeds = np.linalg.norm(vel, axis=1)
        gaps = speeds - np.linalg.norm(center_vel, axis=1)
        fast = frozenset(int(i) for i in np.flatnonzero(gaps > gap_tol))
        out.append(Theorem2Step(float(t), fast, int(np.argmin(speeds)), gaps))
    return out


def continuity_bound(log: SimulationLog, agent: int) -> float:
    cfg = log.config.for_agent(agent)
    return 4.0 * cfg.u_max / cfg.horizon


def control_continuity_ok(log: SimulationLog) -> bool:
    if len(log.times) < 2:
        return True
    for i in range(log.n_agents):
        ok, _ = check_control_continuity(log.controls[:, i], log.config.sim_dt, continuity_bound(log, i))
        if not ok:
            return False
    return True


@dataclass(frozen=True)
class RunReport:
    consensus_time: float | None
    final_velocity_disagreement: float
    total_energy: dict[int, float]
    min_safety_margin: float
    max_task_residual: float
    integrated_slack: dict[int, float]
    flock_diameter_final: float
    diameter_bound: float
    control_continuity_ok: bool
    safety_failures: int = 0
    plan_failures: int = 0

    def __post_init__(self) -> None:
        if any(e < 0 for e in self.total_energy.values()):
            raise ValueError("energy must be nonnegative")

    @property
    def safe(self) -> bool:
        return self.safety_failures == 0

    def lines(self) -> list[str]:
        """``key: value`` rendering; per-agent maps become ``key.<id>`` entries."""
        def fmt(x: float | None) -> str:
            return "none" if x is None else repr(float(x))

        out = [
            f"consensus_time: {fmt(self.consensus_time)}",
            f"final_velocity_disagreement: {fmt(self.final_velocity_disagreement)}",
            f"min_safety_margin: {fmt(self.min_safety_margin)}",
            f"max_task_residual: {fmt(self.max_task_residual)}",
            f"flock_diameter_final: {fmt(self.flock_diameter_final)}",
            f"diameter_bound: {fmt(self.diameter_bound)}",
            f"control_continuity_ok: {str(self.control_continuity_ok).lower()}",
            f"safety_failures: {self.safety_failures}",
            f"plan_failures: {self.plan_failures}",
        ]
        out += [f"total_energy.{i}: {fmt(e)}" for i, e in sorted(self.total_energy.items())]
        out += [f"integrated_slack.{i}: {fmt(e)}" for i, e in sorted(self.integrated_slack.items())]
        return out


def build_report(log: SimulationLog, consensus_tol: float = DEFAULT_CONSENSUS_TOL) -> RunReport:
    n = log.n_agents
    cfg = log.config
    history = log.constraint_history
    return RunReport(
        consensus_time=consensus_time(log, consensus_tol),
        final_velocity_disagreement=velocity_disagreement(log.final_velocities),
        total_energy={i: total_energy(log, i) for i in range(n)},
        min_safety_margin=float(history[:, 0].min()),
        max_task_residual=float(history[:, 1].max()),
        integrated_slack={i: integrated_slack(log, i) for i in range(n)},
        flock_diameter_final=flock_diameter(log.final_positions),
        diameter_bound=n * cfg.flock_radius,
        control_continuity_ok=control_continuity_ok(log),
        safety_failures=len(log.safety_failures),
        plan_failures=len(log.plan_failures),
    )
