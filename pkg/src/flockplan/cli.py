"""Command-line entry points, scenario files and log serialization."""

from __future__ import annotations

import argparse
import configparser
import io
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from . import __version__
from .core import BoidState, ConfigError, FlockConfig
from .metrics import build_report
from .simulator import Placement, ScenarioSpec, SimulationLog, run

log = logging.getLogger(__name__)

CSV_HEADER = "t,agent,px,py,vx,vy,ux,uy,g,eta_sq,min_safety"
EVENT_HEADER = "t,agent,kind,detail"
INT_KEYS = ("n_agents", "k", "plan_steps", "seed")
FLOAT_KEYS = ("body_radius", "flock_radius", "alpha", "v_max", "u_max", "horizon",
              "sim_dt", "replan_interval", "total_time")
REQUIRED_KEYS = INT_KEYS + FLOAT_KEYS + ("topology_mode",)
SECTION = "flock"
EXIT_OK, EXIT_FAILURE, EXIT_INVALID = 0, 1, 2


def _num(x: float) -> str:
    return format(float(x), ".17g")


def _parse(raw: str, key: str, kind: type) -> float | int:
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {kind.__name__}") from None


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse the INI scenario format; errors name the offending key."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("scenario", str(exc).splitlines()[0]) from None
    if not parser.has_section(SECTION):
        raise ConfigError(SECTION, "missing section")
    flock = parser[SECTION]
    for key in REQUIRED_KEYS:
        if key not in flock:
            raise ConfigError(key, "missing required key")
    known = set(REQUIRED_KEYS)
    for key in flock:
        if key not in known:
            raise ConfigError(key, "unknown key")

    overrides: dict[int, dict[str, float]] = {}
    for name in parser.sections():
        if name.startswith("overrides."):
            agent = int(_parse(name.split(".", 1)[1], name, int))
            overrides[agent] = {key: float(_parse(value, f"{name}.{key}", float))
                                for key, value in parser[name].items()}
        elif name not in (SECTION, "placement", "initial_states"):
            raise ConfigError(name, "unknown section")

    values: dict = {key: _parse(flock[key], key, int) for key in INT_KEYS}
    values.update({key: _parse(flock[key], key, float) for key in FLOAT_KEYS})
    config = FlockConfig(**values, overrides=overrides)

    if not parser.has_section("placement"):
        raise ConfigError("placement", "missing section")
    section = parser["placement"]
    for key in section:
        if key not in ("kind", "size", "speed_min", "speed_max"):
            raise ConfigError(f"placement.{key}", "unknown key")
    placement = Placement(
        kind=section.get("kind", "uniform-disk"),
        size=float(_parse(section.get("size", "1.0"), "placement.size", float)),
        speed_min=float(_parse(section.get("speed_min", "0.0"), "placement.speed_min", float)),
        speed_max=float(_parse(section.get("speed_max", "1.0"), "placement.speed_max", float)),
    )

    initial = None
    if parser.has_section("initial_states"):
        rows: dict[int, BoidState] = {}
        for key, value in parser["initial_states"].items():
            agent = int(_parse(key, f"initial_states.{key}", int))
            parts = [p for p in value.replace(",", " ").split() if p]
            if len(parts) != 4:
                raise ConfigError(f"initial_states.{key}", "expected px, py, vx, vy")
            px, py, vx, vy = (float(_parse(p, f"initial_states.{key}", float)) for p in parts)
            rows[agent] = BoidState.at(px, py, vx, vy)
        if sorted(rows) != list(range(config.n_agents)):
            raise ConfigError("initial_states", f"need one state for each agent id 0..{config.n_agents - 1}")
        initial = tuple(rows[i] for i in range(config.n_agents))

    return ScenarioSpec(config, placement, initial, flock["topology_mode"].strip())  # type: ignore[arg-type]


def serialize_scenario(spec: ScenarioSpec) -> str:
    cfg = spec.config
    lines = [f"[{SECTION}]"]
    lines += [f"{key} = {getattr(cfg, key)}" for key in INT_KEYS]
    lines += [f"{key} = {_num(getattr(cfg, key))}" for key in FLOAT_KEYS]
    lines.append(f"topology_mode = {spec.topology_mode}")
    p = spec.placement
    lines += ["", "[placement]", f"kind = {p.kind}", f"size = {_num(p.size)}",
              f"speed_min = {_num(p.speed_min)}", f"speed_max = {_num(p.speed_max)}"]
    if spec.initial_states is not None:
        lines += ["", "[initial_states]"]
        for i, s in enumerate(spec.initial_states):
            lines.append(f"{i} = " + ", ".join(_num(x) for x in s.as_array()))
    for agent in sorted(cfg.overrides):
        lines += ["", f"[overrides.{agent}]"]
        lines += [f"{key} = {_num(value)}" for key, value in sorted(cfg.overrides[agent].items())]
    return "\n".join(lines) + "\n"


def load_scenario(path: str | Path) -> ScenarioSpec:
    return parse_scenario(Path(path).read_text())


def trajectory_csv(log_: SimulationLog) -> str:
    """One row per logged ``(t, agent)``, sorted by time then agent."""
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for n, t in enumerate(log_.times):
        for i in range(log_.n_agents):
            row = (t, *log_.positions[n, i], *log_.velocities[n, i], *log_.controls[n, i],
                   log_.task_residuals[n, i], log_.slacks[n, i], log_.min_safety[n, i])
            out.write(_num(row[0]) + f",{i}," + ",".join(_num(x) for x in row[1:]) + "\n")
    return out.getvalue()


def load_trajectory_csv(path: str | Path) -> dict[str, NDArray]:
    """Columns of a trajectory CSV keyed by header name; ``agent`` is integer."""
    text = Path(path).read_text()
    header = text.split("\n", 1)[0]
    if header != CSV_HEADER:
        raise ValueError(f"unexpected header {header!r}")
    data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    columns = {name: data[:, c] for c, name in enumerate(CSV_HEADER.split(","))}
    columns["agent"] = columns["agent"].astype(np.int64)
    return columns


def event_log(log_: SimulationLog) -> str:
    lines = [EVENT_HEADER]
    lines += [f"{_num(e.t)},{e.agent},{e.kind},{e.detail}" for e in log_.events()]
    return "\n".join(lines) + "\n"


def cmd_run(scenario_path: str | Path, out_dir: str | Path) -> int:
    try:
        spec = load_scenario(scenario_path)
        sim_log = run(spec)
    except ConfigError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(sim_log)
    (out / "trajectory.csv").write_text(trajectory_csv(sim_log))
    (out / "events.csv").write_text(event_log(sim_log))
    (out / "report.txt").write_text("\n".join(report.lines()) + "\n")
    if not report.safe:
        first = sim_log.safety_failures[0]
        print(f"safety violation: agent {first.agent} at t={first.t:g} ({first.detail}); "
              f"{report.safety_failures} failure markers", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_verify(suite: str) -> int:
    from .suites import SUITES, run_suite

    if suite not in SUITES and suite != "all":
        print(f"unknown suite {suite!r}; choose from {', '.join([*SUITES, 'all'])}", file=sys.stderr)
        return EXIT_INVALID
    names = list(SUITES) if suite == "all" else [suite]
    ok = True
    for name in names:
        for check in run_suite(name):
            print(check.line())
            ok &= check.passed
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_oracle() -> int:
    from .suites import oracle_battery

    rows = oracle_battery()
    print(f"{'case':<16}{'analytic':>12}{'planner':>12}{'gap %':>10}{'Linf err':>12}  status")
    ok = True
    for r in rows:
        print(f"{r.name:<16}{r.analytic_cost:>12.6f}{r.planner_cost:>12.6f}{100 * r.cost_gap:>10.4f}"
              f"{r.control_error:>12.3e}  {'pass' if r.passed else 'FAIL'}")
        ok &= r.passed
    print(f"max cost gap {100 * max(r.cost_gap for r in rows):.4f}%  "
          f"max Linf control error {max(r.control_error for r in rows):.3e}")
    return EXIT_OK if ok else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flockplan", description="Optimal-control flocking simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log planner diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="simulate a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", required=True, help="output directory")
    p_verify = sub.add_parser("verify", help="run a built-in property suite")
    p_verify.add_argument("suite", choices=["continuity", "switch", "consensus", "safety", "diameter", "all"])
    sub.add_parser("oracle", help="compare the planner against the analytic two-point arc")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.scenario, args.out)
    if args.command == "verify":
        return cmd_verify(args.suite)
    return cmd_oracle()


if __name__ == "__main__":
    sys.exit(main())
