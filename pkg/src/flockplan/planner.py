"""Finite-horizon energy-optimal planning for a single agent.

The horizon is split into ``M`` zero-order-hold control intervals.  The agent
minimizes ``1/2 sum (|u_k|^2 + alpha * eta2_k) dt`` subject to its speed and
input bounds, hard pairwise separation from every neighbor's committed
trajectory, and ``g_k <= eta2_k`` for the task constraint.  Because the slack
enters the cost linearly, its optimal value is ``max(0, g_k)`` and it is
eliminated: the task constraint becomes an exact penalty.

Separation constraints are nonconvex.  They are linearized about the current
iterate (a conservative inner approximation, so every accepted iterate stays
separated) and each convex subproblem is solved with ADMM, where every
constraint block has a closed-form projection or proximal map.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .core import BoidState, FlockConfig, propagate

log = logging.getLogger(__name__)


@dataclass
class Trajectory:
    """Sampled plan: ``M+1`` states, ``M`` controls and ``M`` slack values.

    ``slacks[k]`` relaxes the task constraint at ``states[k + 1]``.
    """

    t0: float
    dt: float
    positions: NDArray[np.float64]
    velocities: NDArray[np.float64]
    controls: NDArray[np.float64]
    slacks: NDArray[np.float64]

    @classmethod
    def from_controls(
        cls,
        x0: BoidState,
        controls: ArrayLike,
        t0: float,
        dt: float,
        slacks: ArrayLike | None = None,
    ) -> Trajectory:
        u = np.asarray(controls, dtype=np.float64).reshape(-1, 2)
        pos, vel = propagate(x0.position, x0.velocity, u, dt)
        eta = np.zeros(len(u)) if slacks is None else np.asarray(slacks, dtype=np.float64)
        return cls(float(t0), float(dt), pos, vel, u.copy(), eta)

    @classmethod
    def ballistic(cls, x0: BoidState, t0: float, dt: float, steps: int) -> Trajectory:
        return cls.from_controls(x0, np.zeros((steps, 2)), t0, dt)

    @property
    def steps(self) -> int:
        return len(self.controls)

    @property
    def t_end(self) -> float:
        return self.t0 + self.steps * self.dt

    @property
    def times(self) -> NDArray[np.float64]:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @property
    def states(self) -> list[BoidState]:
        return [BoidState(p, v) for p, v in zip(self.positions, self.velocities)]

    def _index(self, t: NDArray[np.float64]) -> NDArray[np.int64]:
        if np.any(t < self.t0 - 1e-9 * max(1.0, self.dt)):
            raise ValueError(f"query before trajectory start {self.t0}")
        k = np.floor((t - self.t0) / self.dt + 1e-9).astype(np.int64)
        return np.clip(k, 0, self.steps)

    def control_at(self, t: float) -> NDArray[np.float64]:
        k = int(self._index(np.array([t]))[0])
        return self.controls[k].copy() if k < self.steps else np.zeros(2)

    def slack_at(self, t: float) -> float:
        k = int(self._index(np.array([t]))[0])
        return float(self.slacks[k]) if k < self.steps else 0.0

    def sample(self, times: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Exact positions and velocities at arbitrary times; coasts past the end."""
        t = np.atleast_1d(np.asarray(times, dtype=np.float64))
        k = self._index(t)
        tau = (t - (self.t0 + k * self.dt))[:, None]
        u = np.vstack([self.controls, np.zeros((1, 2))])[k]
        p = self.positions[k] + self.velocities[k] * tau + 0.5 * u * tau**2
        v = self.velocities[k] + u * tau
        return p, v

    def state_at(self, t: float) -> BoidState:
        p, v = self.sample([t])
        return BoidState(p[0], v[0])


def extend_ballistic(trajectory: Trajectory, until: float) -> Trajectory:
    """Append zero-control steps of the same ``dt`` until ``until`` is covered."""
    if until < trajectory.t_end - 1e-9 * trajectory.dt:
        raise ValueError("extension target lies before the trajectory end")
    extra = max(0, math.ceil((until - trajectory.t_end) / trajectory.dt - 1e-9))
    if extra == 0:
        return trajectory
    tail = Trajectory.ballistic(trajectory.states[-1], trajectory.t_end, trajectory.dt, extra)
    return Trajectory(
        trajectory.t0,
        trajectory.dt,
        np.vstack([trajectory.positions, tail.positions[1:]]),
        np.vstack([trajectory.velocities, tail.velocities[1:]]),
        np.vstack([trajectory.controls, tail.controls]),
        np.concatenate([trajectory.slacks, tail.slacks]),
    )


def evaluate_objective(trajectory: Trajectory, alpha: float) -> float:
    u = trajectory.controls
    return 0.5 * float(np.sum(np.einsum("ij,ij->i", u, u) + alpha * trajectory.slacks) * trajectory.dt)


@dataclass
class PlannerSettings:
    max_iters: int = 30
    tol_conv: float = 1e-6
    admm_max_iters: int = 4000
    admm_eps: float = 1e-7
    admm_rho: float = 1.0
    relaxation: float = 1.6
    # 0 disables residual balancing of rho
    admm_adapt_interval: int = 0
    warm_duals: bool = True
    safety_penalty: float = 1e4
    separation_buffer: float = 1e-5
    inter_knot_guard: bool = True
    tol_hard_factor: float = 1e-6


@dataclass
class PlanProblem:
    agent: int
    t0: float
    x0: BoidState
    config: FlockConfig
    neighbor_trajectories: Mapping[int, Trajectory] = field(default_factory=dict)
    terminal: BoidState | None = None
    enforce_task: bool = True

    @property
    def tf(self) -> float:
        return self.t0 + self.config.horizon


@dataclass
class PlanSolution:
    trajectory: Trajectory
    cost: float
    iterations: int
    converged: bool
    max_safety_violation: float
    terminal_error: float = 0.0


def tol_hard(config: FlockConfig, settings: PlannerSettings | None = None) -> float:
    factor = (settings or PlannerSettings()).tol_hard_factor
    return factor * (2 * config.body_radius) ** 2


def knot_clearance(config: FlockConfig, settings: PlannerSettings | None = None) -> float:
    """Center distance enforced at knots so that the continuous path stays ``2R`` apart."""
    s = settings or PlannerSettings()
    min_dist = 2 * config.body_radius
    h = config.plan_dt
    if s.inter_knot_guard:
        # chord sag between knots plus the deviation of the relative parabola from its chord
        dist = math.hypot(min_dist + 0.25 * config.u_max * h * h, config.v_max * h)
    else:
        dist = min_dist
    return dist + s.separation_buffer * min_dist


def _transcription(steps: int, dt: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Maps from stacked controls to knot velocities and positions ``1..M``."""
    k = np.arange(1, steps + 1)[:, None]
    j = np.arange(steps)[None, :]
    below = j < k
    vel = np.where(below, dt, 0.0)
    pos = np.where(below, dt * dt * (k - j - 0.5), 0.0)
    return vel, pos


class _ADMM:
    """ADMM for ``min 1/2 |u|^2 + sum h(A u + o)`` with closed-form row-group proxes.

    The leading ``A`` rows come in ``(x, y)`` pairs, each pair a radial
    operator about a center: a hard ball (input, trust region, speed, pinned
    terminal state as a ball of radius zero) or the task penalty
    ``weight * max(0, |z - c|^2 - r^2)``.  Remaining rows are half-planes
    ``z >= bound`` under an exact L1 penalty.  Row penalties are
    ``rho / |A_row|^2`` so each group is equilibrated; ``rho`` is adapted by
    residual balancing.
    """

    def __init__(
        self,
        paired: NDArray[np.float64],
        paired_offset: NDArray[np.float64],
        centers: NDArray[np.float64],
        radii: NDArray[np.float64],
        weights: NDArray[np.float64],
        half: NDArray[np.float64],
        bounds: NDArray[np.float64],
        half_weight: float,
        settings: PlannerSettings,
    ):
        self.settings = settings
        self.n = paired.shape[1]
        self.m1 = len(paired)
        self.A = np.vstack([paired, half]) if len(half) else paired
        self.offset = np.concatenate([paired_offset, np.zeros(len(half))])
        norms = np.linalg.norm(paired, axis=1)
        pair_norms = np.sqrt(0.5 * (norms[0::2] ** 2 + norms[1::2] ** 2))
        scale = np.concatenate([np.repeat(pair_norms, 2), np.linalg.norm(half, axis=1)])
        scale = np.where(scale > 0, scale, 1.0)
        self.inv_scale2 = 1.0 / scale**2
        self.inv_scale = 1.0 / scale
        self.centers = centers
        self.radii = radii
        self.double_weights = 2.0 * weights
        self.bounds = bounds
        self.half_weight = half_weight
        self.rho = settings.admm_rho
        self._factor()

    def _factor(self) -> None:
        self.w = self.rho * self.inv_scale2
        self.AtW = self.A.T * self.w
        self.chol = scipy.linalg.cho_factor(np.eye(self.n) + self.AtW @ self.A)

    def _prox(self, v: NDArray[np.float64]) -> NDArray[np.float64]:
        m1 = self.m1
        d = v[:m1].reshape(-1, 2) - self.centers
        r = np.sqrt(np.einsum("ij,ij->i", d, d))
        rho = self.w[:m1:2]
        shrunk = np.maximum(self.radii, rho * r / (rho + self.double_weights))
        target = np.where(r > self.radii, shrunk, r)
        factor = np.where(r > 0, target / np.maximum(r, 1e-300), 0.0)
        out = np.empty_like(v)
        out[:m1] = (self.centers + d * factor[:, None]).reshape(-1)
        if len(v) > m1:
            h = v[m1:]
            out[m1:] = np.where(h >= self.bounds, h, np.minimum(h + self.half_weight / self.w[m1:], self.bounds))
        return out

    def solve(
        self, u: NDArray[np.float64], y: NDArray[np.float64] | None = None
    ) -> tuple[NDArray[np.float64], NDArray[np.float64], bool, int]:
        s = self.settings
        A, off = self.A, self.offset
        z = self._prox(A @ u + off)
        y = np.zeros(len(off)) if y is None else y.copy()
        relax = s.relaxation
        for it in range(1, s.admm_max_iters + 1):
            u = scipy.linalg.cho_solve(self.chol, self.AtW @ (z - off - y), check_finite=False)
            v = A @ u + off
            v_hat = relax * v + (1 - relax) * z
            z_prev = z
            z = self._prox(v_hat + y)
            y += v_hat - z
            if it % 5:
                continue
            r_pri = float(np.max(np.abs(v - z) * self.inv_scale))
            r_dual = float(np.max(np.abs(self.AtW @ (z - z_prev))))
            scale_pri = max(float(np.max(np.abs(v) * self.inv_scale)), float(np.max(np.abs(z) * self.inv_scale)))
            scale_dual = float(np.max(np.abs(self.AtW @ y)))
            if r_pri <= s.admm_eps * (1 + scale_pri) and r_dual <= s.admm_eps * (1 + scale_dual):
                return u, y, True, it
            if s.admm_adapt_interval and it % s.admm_adapt_interval == 0:
                ratio = math.sqrt((r_pri / max(scale_pri, 1e-12)) / max(r_dual / max(scale_dual, 1e-12), 1e-30))
                new_rho = min(max(self.rho * ratio, 1e-6), 1e6)
                if new_rho > 5 * self.rho or new_rho < 0.2 * self.rho:
                    y *= self.rho / new_rho
                    self.rho = new_rho
                    self._factor()
        return u, y, False, s.admm_max_iters


def _clip_rows(u: NDArray[np.float64], limit: float) -> NDArray[np.float64]:
    pairs = u.reshape(-1, 2)
    norms = np.linalg.norm(pairs, axis=1, keepdims=True)
    return (pairs * np.minimum(1.0, limit / np.maximum(norms, 1e-300))).reshape(-1)


def separating_normals(
    own_pos: NDArray[np.float64],
    own_vel: NDArray[np.float64],
    other_pos: NDArray[np.float64],
    other_vel: NDArray[np.float64],
    min_dist: float,
) -> NDArray[np.float64]:
    """Unit normals of supporting half-planes ``n . (p - q) >= min_dist`` per knot.

    Where the reference path is clear of the keep-out disk the normal points
    from the neighbor to the agent.  Inside the disk that direction is
    unreliable (it flips while the reference passes through), so the agent is
    sent sideways instead, perpendicular to the relative velocity and always
    on the side it already leans toward at closest approach.
    """
    rel = own_pos - other_pos
    dist = np.linalg.norm(rel, axis=1)
    normals = rel / np.maximum(dist, 1e-300)[:, None]
    inside = dist < min_dist
    if np.any(inside):
        w = own_vel - other_vel
        perp = np.stack([-w[:, 1], w[:, 0]], axis=1)
        pn = np.linalg.norm(perp, axis=1)
        closest = int(np.argmin(dist))
        side = float(np.sign(perp[closest] @ rel[closest])) or 1.0
        for kk in np.flatnonzero(inside):
            if pn[kk] > 1e-12:
                normals[kk] = side * perp[kk] / pn[kk]
            elif dist[kk] == 0:
                normals[kk] = (1.0, 0.0)
    return normals


class Planner:
    """Sequential convexification around a first-order convex solver."""

    def __init__(self, settings: PlannerSettings | None = None):
        self.settings = settings or PlannerSettings()

    def plan(self, problem: PlanProblem, warm_start: Trajectory | None = None) -> PlanSolution:
        cfg = problem.config.for_agent(problem.agent)
        s = self.settings
        M, h = cfg.plan_steps, cfg.plan_dt
        n = 2 * M
        x0 = problem.x0
        knot_times = problem.t0 + h * np.arange(1, M + 1)
        Vm, Pm = _transcription(M, h)
        Vk = np.kron(Vm, np.eye(2))
        Pk = np.kron(Pm, np.eye(2))
        v_off = np.tile(x0.velocity, M)
        p_off = (x0.position[None, :] + x0.velocity[None, :] * (h * np.arange(1, M + 1))[:, None]).reshape(-1)

        neighbors = {j: tr for j, tr in sorted(problem.neighbor_trajectories.items()) if j != problem.agent}
        nbr = {j: tr.sample(knot_times) for j, tr in neighbors.items()}
        use_task = problem.enforce_task and bool(nbr) and cfg.alpha > 0
        centers = np.mean([q for q, _ in nbr.values()], axis=0) if nbr else None
        min_dist = 2 * cfg.body_radius
        R2 = min_dist**2
        D = cfg.flock_radius
        hard = tol_hard(cfg, s)
        knot_dist = knot_clearance(cfg, s)
        guard = knot_dist - s.separation_buffer * min_dist

        def rollout(u: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
            return (Pk @ u + p_off).reshape(M, 2), (Vk @ u + v_off).reshape(M, 2)

        def slacks_of(pos: NDArray[np.float64]) -> NDArray[np.float64]:
            if centers is None or not problem.enforce_task:
                return np.zeros(M)
            d = pos - centers
            return np.maximum(0.0, np.einsum("ij,ij->i", d, d) - D * D)

        def violation(pos: NDArray[np.float64]) -> float:
            worst = 0.0
            for q, _ in nbr.values():
                d = pos - q
                worst = max(worst, float(np.max(R2 - np.einsum("ij,ij->i", d, d))))
            return worst

        def shortfall(pos: NDArray[np.float64]) -> float:
            # nonlinear counterpart of the L1-penalized half-plane rows; the separation
            # buffer absorbs first-order solver error so it is not charged here
            total = 0.0
            for q, _ in nbr.values():
                total += float(np.sum(np.maximum(0.0, guard - np.linalg.norm(pos - q, axis=1))))
            return total

        def merit(u: NDArray[np.float64]) -> float:
            pos, vel = rollout(u)
            value = 0.5 * float(u @ u + cfg.alpha * np.sum(slacks_of(pos)))
            value += s.safety_penalty * shortfall(pos)
            if problem.terminal is not None:
                miss = np.concatenate([pos[-1] - problem.terminal.position, vel[-1] - problem.terminal.velocity])
                value += s.safety_penalty * float(np.sum(np.abs(miss)))
            return value

        initial_violation = self._initial_violation(x0, neighbors, problem.t0, R2)

        # Coasting is optimal whenever it is feasible and incurs no slack.
        pos0, vel0 = rollout(np.zeros(n))
        if (problem.terminal is None and shortfall(pos0) <= 0.0
                and np.all(np.einsum("ij,ij->i", vel0, vel0) <= cfg.v_max**2)
                and not np.any(slacks_of(pos0))):
            traj = Trajectory.from_controls(x0, np.zeros((M, 2)), problem.t0, h)
            return PlanSolution(traj, 0.0, 0, initial_violation <= hard, initial_violation)

        seeds = [np.zeros(n)]
        if warm_start is not None and warm_start.steps == M and abs(warm_start.dt - h) < 1e-12:
            seeds.append(warm_start.controls.reshape(-1).copy())
        # the merit is nonconvex: start from the better seed, fall back to the other if unsafe
        seeds.sort(key=merit)

        def scp(u: NDArray[np.float64]) -> tuple[NDArray[np.float64], float, bool, int]:
            radius = cfg.u_max
            current = merit(u)
            converged = False
            duals: NDArray[np.float64] | None = None
            eye = np.eye(n)
            iters = 0
            for iters in range(1, s.max_iters + 1):
                pos, vel = rollout(u)
                paired = [eye, eye, Vk]
                offsets = [np.zeros(n), np.zeros(n), v_off]
                ctrs = [np.zeros((M, 2)), u.reshape(M, 2), np.zeros((M, 2))]
                radii = [np.full(M, cfg.u_max), np.full(M, radius), np.full(M, cfg.v_max)]
                weights = [np.full(3 * M, np.inf)]
                if use_task:
                    paired.append(Pk)
                    offsets.append(p_off)
                    ctrs.append(centers)
                    radii.append(np.full(M, D))
                    weights.append(np.full(M, 0.5 * cfg.alpha))
                if problem.terminal is not None:
                    paired.append(np.vstack([Pk[-2:], Vk[-2:]]))
                    offsets.append(np.concatenate([p_off[-2:], v_off[-2:]]))
                    ctrs.append(np.vstack([problem.terminal.position, problem.terminal.velocity]))
                    radii.append(np.zeros(2))
                    weights.append(np.full(2, np.inf))
                rows, bounds = [np.zeros((0, n))], [np.zeros(0)]
                for q, qv in nbr.values():
                    normals = separating_normals(pos, vel, q, qv, min_dist)
                    rows.append(np.einsum("kc,kcn->kn", normals, Pk.reshape(M, 2, n)))
                    bounds.append(np.einsum("kc,kc->k", normals, q) + knot_dist
                                  - np.einsum("kc,kc->k", normals, p_off.reshape(M, 2)))
                solver = _ADMM(
                    np.vstack(paired), np.concatenate(offsets), np.vstack(ctrs), np.concatenate(radii),
                    np.concatenate(weights), np.vstack(rows), np.concatenate(bounds), s.safety_penalty, s,
                )
                if duals is not None and len(duals) != len(solver.offset):
                    duals = None
                candidate, duals, ok, admm_iters = solver.solve(u, duals if s.warm_duals else None)
                candidate = _clip_rows(candidate, cfg.u_max)
                if not ok:
                    # inexact subproblem solution: still a valid trial step for the merit test
                    log.debug("agent %d: convex subproblem hit the iteration limit", problem.agent)
                trial = merit(candidate)
                step = float(np.max(np.abs(candidate - u)))
                log.debug("scp %d merit %.10g -> %.10g step %.3g radius %.3g admm %d", iters, current, trial, step, radius, admm_iters)
                if trial <= current + 1e-12 * (1 + abs(current)):
                    stalled = current - trial <= s.tol_conv * (1 + abs(current))
                    u, current = candidate, trial
                    if step <= s.tol_conv * cfg.u_max or stalled:
                        converged = True
                        break
                elif trial - current <= s.tol_conv * (1 + abs(current)):
                    # increase within solver noise: the current iterate is stationary
                    converged = True
                    break
                else:
                    radius *= 0.5
                    duals = None
                    if radius < s.tol_conv * cfg.u_max:
                        converged = True
                        break
            return u, current, converged, iters

        u, current, converged, iters = scp(seeds[0])
        if len(seeds) > 1 and not (converged and violation(rollout(u)[0]) <= hard):
            alt = scp(seeds[1])
            alt_ok = alt[2] and violation(rollout(alt[0])[0]) <= hard
            if alt_ok or alt[1] < current:
                u, current, converged, iters = alt[0], alt[1], alt[2], iters + alt[3]

        pos, _ = rollout(u)
        traj = Trajectory.from_controls(x0, u.reshape(M, 2), problem.t0, h, slacks_of(pos))
        viol = max(violation(traj.positions[1:]), initial_violation)
        terminal_error = 0.0
        if problem.terminal is not None:
            terminal_error = float(np.max(np.abs(traj.states[-1].as_array() - problem.terminal.as_array())))
        speed_ok = np.all(np.linalg.norm(traj.velocities[1:], axis=1) <= cfg.v_max * (1 + 1e-6) + 1e-9)
        ok = converged and viol <= hard and bool(speed_ok)
        return PlanSolution(traj, evaluate_objective(traj, cfg.alpha), iters, ok, viol, terminal_error)

    @staticmethod
    def _initial_violation(x0: BoidState, neighbors: Mapping[int, Trajectory], t0: float, R2: float) -> float:
        worst = 0.0
        for tr in neighbors.values():
            q, _ = tr.sample([t0])
            d = x0.position - q[0]
            worst = max(worst, float(R2 - d @ d))
        return worst


def plan(problem: PlanProblem, warm_start: Trajectory | None = None,
         settings: PlannerSettings | None = None) -> PlanSolution:
    return Planner(settings).plan(problem, warm_start)
