"""k-nearest-neighbor sets, neighborhood centers and switch classification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import BoidState, ConfigError, Vec2

SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class NeighborhoodSnapshot:
    owner: int
    members: tuple[int, ...]
    center_pos: Vec2
    center_vel: Vec2
    center_acc: Vec2

    def __post_init__(self) -> None:
        if self.owner in self.members:
            raise ValueError(f"agent {self.owner} cannot be its own neighbor")
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"duplicate members {self.members}")


@dataclass(frozen=True)
class SwitchEvent:
    agent: int
    time: float
    removed: frozenset[int]
    added: frozenset[int]
    symmetric: bool = False


def knn(positions: ArrayLike, i: int, k: int) -> tuple[int, ...]:
    """Ids of the ``k`` agents nearest to agent ``i``, sorted by id.

    Distance ties are broken in favour of the lower id, so the result is a
    deterministic function of the positions.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(pos)
    if not 1 <= k <= n - 1:
        raise ConfigError("k", f"need 1 <= k <= N-1 = {n - 1}, got {k}")
    if not np.all(np.isfinite(pos)):
        raise ValueError("positions must be finite")
    d2 = np.sum((pos - pos[i]) ** 2, axis=1)
    ids = np.arange(n)
    order = np.lexsort((ids, d2))
    order = order[order != i][:k]
    return tuple(sorted(int(j) for j in order))


def knn_all(positions: ArrayLike, k: int) -> list[tuple[int, ...]]:
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    return [knn(pos, i, k) for i in range(len(pos))]


def center(states: Mapping[int, BoidState] | Sequence[BoidState], members: Sequence[int]) -> tuple[Vec2, Vec2]:
    """Mean position and mean velocity of the member agents."""
    if len(members) == 0:
        raise ValueError("neighborhood center of an empty member set")
    pos = np.mean([states[j].position for j in members], axis=0)
    vel = np.mean([states[j].velocity for j in members], axis=0)
    return pos, vel


def snapshot(
    owner: int,
    members: Sequence[int],
    states: Mapping[int, BoidState] | Sequence[BoidState],
    controls: NDArray[np.float64] | None = None,
) -> NeighborhoodSnapshot:
    """Build a snapshot; ``controls`` are the members' latest applied inputs (rows by id)."""
    members = tuple(sorted(int(j) for j in members))
    c, cdot = center(states, members)
    if controls is None:
        cddot = np.zeros(2)
    else:
        cddot = np.mean(np.asarray(controls)[list(members)], axis=0)
    return NeighborhoodSnapshot(owner, members, c, cdot, cddot)


def detect_switch(prev: NeighborhoodSnapshot, next: NeighborhoodSnapshot, time: float) -> SwitchEvent | None:
    if prev.owner != next.owner:
        raise ValueError(f"snapshots belong to different agents ({prev.owner} vs {next.owner})")
    before, after = set(prev.members), set(next.members)
    if before == after:
        return None
    return SwitchEvent(prev.owner, float(time), frozenset(before - after), frozenset(after - before))


def is_symmetric_switch(
    event: SwitchEvent,
    states: Mapping[int, BoidState] | Sequence[BoidState],
    tol: float = SYMMETRY_TOL,
) -> bool:
    """True when removed and added agents carry equal position and velocity sums."""
    if not event.removed or not event.added:
        raise ValueError("switch event must remove and add at least one agent")
    dp = sum(states[j].position for j in event.removed) - sum(states[j].position for j in event.added)
    dv = sum(states[j].velocity for j in event.removed) - sum(states[j].velocity for j in event.added)
    return bool(np.linalg.norm(dp) <= tol and np.linalg.norm(dv) <= tol)


def classify(
    event: SwitchEvent,
    states: Mapping[int, BoidState] | Sequence[BoidState],
    tol: float = SYMMETRY_TOL,
) -> SwitchEvent:
    """Return ``event`` with its ``symmetric`` flag filled in."""
    return SwitchEvent(event.agent, event.time, event.removed, event.added,
                       is_symmetric_switch(event, states, tol))


@dataclass
class CenterTrace:
    """Sampled neighborhood history of one agent over a state sequence."""

    times: NDArray[np.float64]
    snapshots: list[NeighborhoodSnapshot]
    events: list[SwitchEvent]

    @property
    def center_pos(self) -> NDArray[np.float64]:
        return np.array([s.center_pos for s in self.snapshots])

    @property
    def center_vel(self) -> NDArray[np.float64]:
        return np.array([s.center_vel for s in self.snapshots])

    def switch_steps(self) -> list[int]:
        """Indices ``n`` such that the neighborhood changed between samples n-1 and n."""
        idx = {float(t): n for n, t in enumerate(self.times)}
        return [idx[e.time] for e in self.events]


def track(
    times: ArrayLike,
    state_history: Sequence[Sequence[BoidState]],
    i: int,
    k: int,
    tol: float = SYMMETRY_TOL,
) -> CenterTrace:
    """Follow agent ``i``'s k-NN set along a sampled history of all agents."""
    times = np.asarray(times, dtype=np.float64)
    snaps: list[NeighborhoodSnapshot] = []
    events: list[SwitchEvent] = []
    for t, states in zip(times, state_history):
        members = knn([s.position for s in states], i, k)
        snap = snapshot(i, members, states)
        if snaps:
            event = detect_switch(snaps[-1], snap, t)
            if event is not None:
                events.append(classify(event, states, tol))
        snaps.append(snap)
    return CenterTrace(times, snaps, events)


def continuity_jumps(
    times: ArrayLike, values: ArrayLike, rate_bound: float, tol: float = 1e-6
) -> list[int]:
    """Sample indices ``n`` where ``|values[n] - values[n-1]| / dt`` exceeds ``rate_bound + tol``.

    With ``values`` the center positions the bound is ``v_max``; for center
    velocities it is ``u_max``.
    """
    values = np.asarray(values, dtype=np.float64)
    dt = np.diff(np.asarray(times, dtype=np.float64))
    rate = np.linalg.norm(np.diff(values, axis=0), axis=1) / dt
    return [int(n) + 1 for n in np.flatnonzero(rate > rate_bound + tol)]
