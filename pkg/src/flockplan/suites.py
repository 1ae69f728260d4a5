"""Built-in scenarios, property suites and the analytic-arc oracle battery."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import BoidState, FlockConfig
from .metrics import (
    build_report,
    consensus_time,
    continuity_bound,
    disagreement_series,
    flock_diameter,
    integrated_slack,
)
from .neighborhood import CenterTrace, continuity_jumps, track
from .planner import PlanProblem, Planner
from .primitives import check_control_continuity, solve_bvp
from .simulator import Placement, ScenarioSpec, SimulationLog, run

CONSENSUS_SEEDS = (0, 1, 2, 3, 4)
CONSENSUS_TOL = 1e-2
CONSENSUS_WINDOW = 5.0
SLACK_ALPHAS = (0.1, 1.0, 10.0)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# -- scenarios ---------------------------------------------------------------


def consensus_spec(seed: int, total_time: float = 50.0) -> ScenarioSpec:
    """Five agents on a complete graph, random placement and speeds up to 1."""
    config = FlockConfig(
        n_agents=5, k=4, body_radius=0.1, flock_radius=2.0, alpha=1.0, v_max=2.0, u_max=2.0,
        horizon=2.0, plan_steps=20, sim_dt=0.1, replan_interval=0.1, total_time=total_time, seed=seed,
    )
    return ScenarioSpec(config, Placement("uniform-disk", 1.0, 0.0, 1.0), topology_mode="fixed")


def steady_spec() -> ScenarioSpec:
    """Four agents already moving together at ``(1, 0)`` well inside their flock radius."""
    config = FlockConfig(
        n_agents=4, k=2, body_radius=0.1, flock_radius=2.0, alpha=1.0, v_max=2.0, u_max=2.0,
        horizon=2.0, plan_steps=20, sim_dt=0.1, replan_interval=0.5, total_time=10.0, seed=0,
    )
    states = tuple(BoidState.at(x, y, 1.0, 0.0) for x, y in [(0, 0), (0.5, 0), (0, 0.5), (0.5, 0.5)])
    return ScenarioSpec(config, initial_states=states, topology_mode="dynamic-knn")


def switching_spec(alpha: float) -> ScenarioSpec:
    """Six agents on a dynamic 2-NN graph: two in-line trios passing on adjacent lanes.

    While the trios pass, the end agents swap a trio-mate for a cross-lane
    agent, so their neighborhood centers jump and the tight flock radius binds.
    The lanes never intersect, so no pair is on a collision course while the
    two agents are invisible to each other.
    """
    config = FlockConfig(
        n_agents=6, k=2, body_radius=0.1, flock_radius=0.5, alpha=alpha, v_max=2.0, u_max=2.0,
        horizon=2.0, plan_steps=20, sim_dt=0.1, replan_interval=0.5, total_time=12.0, seed=0,
    )
    states = (
        BoidState.at(-2.3, 0.0, 1.0, 0.0),
        BoidState.at(-2.0, 0.0, 1.0, 0.0),
        BoidState.at(-1.7, 0.0, 1.0, 0.0),
        BoidState.at(1.7, 0.4, -1.0, 0.0),
        BoidState.at(2.0, 0.4, -1.0, 0.0),
        BoidState.at(2.3, 0.4, -1.0, 0.0),
    )
    return ScenarioSpec(config, initial_states=states, topology_mode="dynamic-knn")


def symmetric_switch_trace(dt: float = 0.01) -> tuple[CenterTrace, float]:
    """Agent 0 drifting with two receding and two approaching neighbors whose sums stay matched.

    Returns the trace of agent 0 (``k = 2``) and the drift speed.
    """
    drift = np.array([0.3, 0.1])
    times = dt * np.arange(201)
    history = []
    for t in times:
        tau = t - 1.0 + 0.5 * dt
        offsets = [(0.0, 0.0), (1.0 + 0.4 * tau, 0.0), (-1.0 - 0.4 * tau, 0.0),
                   (0.0, 1.0 - 0.4 * tau), (0.0, -1.0 + 0.4 * tau)]
        rel_vel = [(0, 0), (0.4, 0), (-0.4, 0), (0, -0.4), (0, 0.4)]
        history.append([BoidState(drift * t + np.array(o), drift + np.array(v))
                        for o, v in zip(offsets, rel_vel)])
    return track(times, history, 0, 2), float(np.linalg.norm(drift))


def asymmetric_switch_trace(dt: float = 0.01) -> CenterTrace:
    """Agent 0 at rest; one receding neighbor is replaced by an approaching one elsewhere."""
    times = dt * np.arange(201)
    history = []
    for t in times:
        tau = t - 1.0 + 0.5 * dt
        history.append([
            BoidState.at(0.0, 0.0),
            BoidState.at(-0.8, 0.0),
            BoidState.at(1.0 + 0.4 * tau, 0.0, 0.4, 0.0),
            BoidState.at(0.0, 1.0 - 0.4 * tau, 0.0, -0.4),
        ])
    return track(times, history, 0, 2)


@lru_cache(maxsize=None)
def consensus_run(seed: int) -> SimulationLog:
    return run(consensus_spec(seed))


@lru_cache(maxsize=None)
def steady_run() -> SimulationLog:
    return run(steady_spec())


@lru_cache(maxsize=None)
def switching_run(alpha: float) -> SimulationLog:
    return run(switching_spec(alpha))


# -- checks ------------------------------------------------------------------


def windowed_non_increasing(log: SimulationLog, window: float = CONSENSUS_WINDOW) -> bool:
    """True when the peak disagreement over consecutive windows never rises."""
    series = disagreement_series(log)
    per = max(1, int(round(window / log.config.sim_dt)))
    peaks = [series[i:i + per].max() for i in range(0, len(series), per)]
    return all(b <= a for a, b in zip(peaks, peaks[1:]))


def min_distance(log: SimulationLog) -> float:
    pos = log.positions
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    dist = np.sqrt(np.einsum("tijk,tijk->tij", diff, diff))
    n = log.n_agents
    dist[:, np.arange(n), np.arange(n)] = np.inf
    return float(dist.min())


def check_safety(name: str, log: SimulationLog) -> Check:
    two_r = 2 * log.config.body_radius
    d = min_distance(log)
    return Check(name, d >= two_r - 1e-6 * two_r and not log.safety_failures,
                 f"min distance {d:.6f} vs 2R = {two_r:g}")


def check_consensus(seed: int) -> Check:
    log = consensus_run(seed)
    final = float(disagreement_series(log)[-1])
    monotone = windowed_non_increasing(log)
    return Check(f"consensus seed {seed}", final < CONSENSUS_TOL and monotone,
                 f"final disagreement {final:.3e} (< {CONSENSUS_TOL:g}), "
                 f"windowed non-increasing {monotone}")


def check_steady() -> Check:
    log = steady_run()
    u = float(np.max(np.linalg.norm(log.controls, axis=2)))
    report = build_report(log)
    ok = u <= 1e-6 and report.max_task_residual <= 0 and report.safe
    return Check("steady consensus needs no control", ok,
                 f"max |u| {u:.2e}, max g {report.max_task_residual:.4f}")


def check_continuity(name: str, log: SimulationLog) -> Check:
    worst = 0.0
    ok = True
    for i in range(log.n_agents):
        bound = continuity_bound(log, i)
        agent_ok, _ = check_control_continuity(log.controls[:, i], log.config.sim_dt, bound)
        ok &= agent_ok
        jumps = np.linalg.norm(np.diff(log.controls[:, i], axis=0), axis=1)
        worst = max(worst, float(jumps.max() / (bound * log.config.sim_dt)))
    return Check(name, ok, f"largest control jump is {worst:.3f} of the bound")


def check_symmetric_switch() -> Check:
    trace, speed = symmetric_switch_trace()
    dt = float(trace.times[1] - trace.times[0])
    rate = np.linalg.norm(np.diff(trace.center_pos, axis=0), axis=1) / dt
    v_max = 2.0
    ok = (len(trace.events) == 1 and trace.events[0].symmetric
          and float(rate.max()) <= v_max + 1e-6)
    return Check("symmetric switch keeps the center continuous", ok,
                 f"{len(trace.events)} switch(es), max |dc|/dt {rate.max():.6f} "
                 f"(drift {speed:.6f}, v_max {v_max:g})")


def check_asymmetric_switch() -> Check:
    trace = asymmetric_switch_trace()
    v_max, u_max = 2.0, 2.0
    steps = trace.switch_steps()
    pos_jumps = continuity_jumps(trace.times, trace.center_pos, v_max)
    vel_jumps = continuity_jumps(trace.times, trace.center_vel, u_max)
    flagged = sorted(set(pos_jumps) | set(vel_jumps))
    ok = (len(trace.events) == 1 and not trace.events[0].symmetric and flagged == steps)
    return Check("asymmetric switch makes the center jump", ok,
                 f"switch at step {steps}, discontinuities at {flagged}")


def check_diameter(seed: int) -> Check:
    log = consensus_run(seed)
    bound = log.n_agents * log.config.flock_radius
    t_c = consensus_time(log, CONSENSUS_TOL)
    if t_c is None:
        d = flock_diameter(log.final_positions)
        return Check(f"diameter seed {seed}", False,
                     f"no consensus reached; final diameter {d:.4f} vs N*D = {bound:g}")
    start = int(np.searchsorted(log.times, t_c - 1e-9))
    d = max([flock_diameter(p) for p in log.positions[start:]] + [flock_diameter(log.final_positions)])
    return Check(f"diameter seed {seed}", d <= bound + 1e-3,
                 f"max diameter after consensus {d:.4f} vs N*D = {bound:g}")


def check_slack_monotone() -> Check:
    slack = np.array([[integrated_slack(switching_run(a), i) for i in range(6)] for a in SLACK_ALPHAS])
    ok = bool(np.all(np.diff(slack, axis=0) <= 1e-9))
    total = slack.sum(axis=1)
    return Check("integrated slack non-increasing in alpha", ok,
                 "totals " + ", ".join(f"alpha={a:g}: {s:.4g}" for a, s in zip(SLACK_ALPHAS, total)))


def suite_continuity() -> list[Check]:
    return [check_continuity(f"control continuity seed {s}", consensus_run(s)) for s in CONSENSUS_SEEDS]


def suite_switch() -> list[Check]:
    return [check_symmetric_switch(), check_asymmetric_switch()]


def suite_consensus() -> list[Check]:
    return [check_consensus(s) for s in CONSENSUS_SEEDS] + [check_steady()]


def suite_safety() -> list[Check]:
    checks = [check_safety(f"safety consensus seed {s}", consensus_run(s)) for s in CONSENSUS_SEEDS]
    checks.append(check_safety("safety steady flock", steady_run()))
    checks += [check_safety(f"safety switching alpha={a:g}", switching_run(a)) for a in SLACK_ALPHAS]
    return checks


def suite_diameter() -> list[Check]:
    return [check_diameter(s) for s in CONSENSUS_SEEDS]


SUITES = {
    "continuity": suite_continuity,
    "switch": suite_switch,
    "consensus": suite_consensus,
    "safety": suite_safety,
    "diameter": suite_diameter,
}


def run_suite(name: str) -> list[Check]:
    return SUITES[name]()


# -- oracle ------------------------------------------------------------------


@dataclass(frozen=True)
class OracleRow:
    name: str
    analytic_cost: float
    planner_cost: float
    control_error: float
    u_max: float

    @property
    def cost_gap(self) -> float:
        return abs(self.planner_cost - self.analytic_cost) / max(abs(self.analytic_cost), 1e-9)

    @property
    def passed(self) -> bool:
        return self.control_error <= 1e-3 * self.u_max and (
            self.cost_gap <= 0.01 or abs(self.planner_cost - self.analytic_cost) <= 1e-9)


def oracle_config(steps: int = 100) -> FlockConfig:
    return FlockConfig(
        n_agents=2, k=1, body_radius=0.05, flock_radius=1.0, alpha=0.0, v_max=10.0, u_max=50.0,
        horizon=1.0, plan_steps=steps, sim_dt=1.0 / steps, replan_interval=1.0 / steps, total_time=1.0,
    )


def oracle_case(name: str, x0: BoidState, xf: BoidState, config: FlockConfig | None = None) -> OracleRow:
    """Pinned-endpoint plan without neighbors against the closed-form arc."""
    config = config or oracle_config()
    arc = solve_bvp(x0, xf, 0.0, config.horizon)
    problem = PlanProblem(0, 0.0, x0, config, terminal=xf, enforce_task=False)
    solution = Planner().plan(problem)
    h = config.plan_dt
    mid = h * (np.arange(config.plan_steps) + 0.5)
    error = float(np.max(np.abs(solution.trajectory.controls - arc.control(mid))))
    return OracleRow(name, arc.cost(), solution.cost, error, config.u_max)


def random_oracle_cases(count: int = 20, seed: int = 0) -> list[tuple[BoidState, BoidState]]:
    """Endpoints in ``[-1, 1]^2`` whose analytic arc stays inside the oracle bounds."""
    config = oracle_config()
    rng = np.random.default_rng(seed)
    cases = []
    while len(cases) < count:
        x0 = BoidState(*rng.uniform(-1, 1, size=(2, 2)))
        xf = BoidState(*rng.uniform(-1, 1, size=(2, 2)))
        arc = solve_bvp(x0, xf, 0.0, config.horizon)
        t = np.linspace(0.0, config.horizon, 201)
        speed = np.linalg.norm([arc.state(x0, s).velocity for s in t], axis=1)
        if np.max(np.linalg.norm(arc.control(t), axis=1)) < config.u_max and speed.max() < config.v_max:
            cases.append((x0, xf))
    return cases


def oracle_battery(random_cases: int = 20) -> list[OracleRow]:
    rows = [
        oracle_case("rest-to-rest", BoidState.at(0, 0), BoidState.at(1, 0)),
        oracle_case("ballistic", BoidState.at(0, 0, 0.5, -0.2), BoidState.at(0.5, -0.2, 0.5, -0.2)),
    ]
    rows += [oracle_case(f"random-{n:02d}", x0, xf) for n, (x0, xf) in enumerate(random_oracle_cases(random_cases))]
    return rows
