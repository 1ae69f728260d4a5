"""Closed-form optimal motion primitives of the fixed-topology analysis.

An agent with no active constraint either coasts (zero control) or follows a
control that is affine in time; riding a safety constraint copies the partner's
control and riding the task constraint copies the neighborhood center's
acceleration.  The affine arc doubles as the analytic oracle for the
numerical planner.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import BoidState, Vec2, vec2


class ArcTag(enum.Enum):
    ZERO_CONTROL = "zero-control"
    INTERIOR_BVP = "interior-bvp"
    SAFETY_RIDING = "safety-riding"
    TASK_RIDING = "task-riding"


@dataclass(frozen=True)
class ArcKind:
    tag: ArcTag
    partner: int | None = None

    def __post_init__(self) -> None:
        if (self.tag is ArcTag.SAFETY_RIDING) != (self.partner is not None):
            raise ValueError("a partner id is required for, and only for, safety-riding arcs")


@dataclass(frozen=True)
class UnconstrainedArc:
    """Control ``u(t) = a (t - t_start) + b`` on ``[t_start, t_end]``."""

    a: Vec2
    b: Vec2
    t_start: float
    t_end: float

    def __post_init__(self) -> None:
        if not self.t_end > self.t_start:
            raise ValueError("arc must have t_end > t_start")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def control(self, t: float | ArrayLike) -> NDArray[np.float64]:
        tau = np.asarray(t, dtype=np.float64) - self.t_start
        return np.multiply.outer(tau, self.a) + self.b

    def state(self, x0: BoidState, t: float) -> BoidState:
        tau = t - self.t_start
        v = x0.velocity + self.a * tau**2 / 2 + self.b * tau
        p = x0.position + x0.velocity * tau + self.a * tau**3 / 6 + self.b * tau**2 / 2
        return BoidState(p, v)

    def cost(self) -> float:
        """``1/2 * integral |u|^2`` over the arc."""
        T = self.duration
        a, b = self.a, self.b
        return 0.5 * float(a @ a * T**3 / 3 + a @ b * T**2 + b @ b * T)


def solve_bvp(x0: BoidState, xf: BoidState, t0: float, tf: float) -> UnconstrainedArc:
    """Minimum-energy affine control steering ``x0`` at ``t0`` to ``xf`` at ``tf``."""
    if not tf > t0:
        raise ValueError(f"need tf > t0, got t0={t0}, tf={tf}")
    T = tf - t0
    dp = xf.position - x0.position - x0.velocity * T
    dv = xf.velocity - x0.velocity
    a = (6.0 * dv * T - 12.0 * dp) / T**3
    b = 6.0 * dp / T**2 - 2.0 * dv / T
    return UnconstrainedArc(a, b, t0, tf)


def arc_control(kind: ArcKind, t: float, context: Mapping[str, Any] | None = None) -> Vec2:
    """Control prescribed by one primitive at time ``t``.

    ``context`` supplies ``partner_control`` for safety riding, ``center_acc``
    for task riding and ``arc`` (an :class:`UnconstrainedArc`) for the
    interior case.
    """
    context = context or {}
    if kind.tag is ArcTag.ZERO_CONTROL:
        return np.zeros(2)
    key = {
        ArcTag.INTERIOR_BVP: "arc",
        ArcTag.SAFETY_RIDING: "partner_control",
        ArcTag.TASK_RIDING: "center_acc",
    }[kind.tag]
    if key not in context:
        raise ValueError(f"{kind.tag.value} arc needs '{key}' in its context")
    if kind.tag is ArcTag.INTERIOR_BVP:
        return np.asarray(context[key].control(t), dtype=np.float64)
    return vec2(context[key]).copy()


def check_control_continuity(controls: ArrayLike, dt: float, L: float) -> tuple[bool, int | None]:
    """Discrete Lipschitz test ``|u[n] - u[n-1]| <= L dt`` for every consecutive pair.

    Returns ``(ok, n)`` where ``n`` is the first sample index at which the bound
    fails, or ``None``.
    """
    u = np.asarray(controls, dtype=np.float64)
    if len(u) < 2:
        raise ValueError("need at least two control samples")
    u = u.reshape(len(u), -1)
    jumps = np.linalg.norm(np.diff(u, axis=0), axis=1)
    bad = np.flatnonzero(jumps > L * dt * (1 + 1e-12))
    if bad.size:
        return False, int(bad[0]) + 1
    return True, None
