"""Safety and task constraint residuals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import vec2


def safety_margin(s_ij: ArrayLike, R: float) -> float:
    """``|s_ij|^2 - 4 R^2``; negative means the two bodies overlap."""
    s = vec2(s_ij)
    return float(s @ s - 4.0 * R * R)


def task_residual(p_i: ArrayLike, c_i: ArrayLike, D: float) -> float:
    """``|p_i - c_i|^2 - D^2``; positive means agent i is outside its flock radius."""
    s = vec2(p_i) - vec2(c_i)
    return float(s @ s - D * D)


def tangency_residuals(
    p_i: ArrayLike, v_i: ArrayLike, c_i: ArrayLike, cdot_i: ArrayLike, D: float
) -> tuple[float, float]:
    """Return ``(g_i, s_i . sdot_i)``, half the time derivative of g_i being the second.

    Both vanish when the agent slides tangentially along the task boundary.
    """
    s = vec2(p_i) - vec2(c_i)
    sdot = vec2(v_i) - vec2(cdot_i)
    return float(s @ s - D * D), float(s @ sdot)


def pairwise_margins(positions: ArrayLike, R: float) -> NDArray[np.float64]:
    """Symmetric ``(N, N)`` matrix of safety margins; the diagonal is ``+inf``."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    diff = pos[None, :, :] - pos[:, None, :]
    m = np.einsum("ijk,ijk->ij", diff, diff) - 4.0 * R * R
    np.fill_diagonal(m, np.inf)
    return m


def task_residuals(positions: ArrayLike, neighbor_sets: Sequence[Sequence[int]], D: float) -> NDArray[np.float64]:
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    out = np.empty(len(pos))
    for i, members in enumerate(neighbor_sets):
        s = pos[i] - pos[list(members)].mean(axis=0)
        out[i] = s @ s - D * D
    return out


@dataclass
class ConstraintReport:
    safety_margins: dict[tuple[int, int], float]
    task_residuals: dict[int, float]
    slack_values: dict[int, float]

    @property
    def min_safety_margin(self) -> float:
        return min(self.safety_margins.values(), default=float("inf"))

    @property
    def max_task_residual(self) -> float:
        return max(self.task_residuals.values(), default=float("-inf"))

    @property
    def max_slack(self) -> float:
        return max(self.slack_values.values(), default=0.0)


def evaluate(
    positions: ArrayLike,
    neighbor_sets: Sequence[Sequence[int]],
    R: float,
    D: float,
    slacks: ArrayLike | None = None,
) -> ConstraintReport:
    """Constraint report for one instant; safety is checked over all pairs."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(pos)
    margins = pairwise_margins(pos, R)
    safety = {}
    for i in range(n):
        for j in range(n):
            if i != j:
                safety[(i, j)] = float(margins[i, j])
    g = task_residuals(pos, neighbor_sets, D)
    eta = np.zeros(n) if slacks is None else np.asarray(slacks, dtype=np.float64)
    if np.any(eta < 0):
        raise ValueError("slack values must be nonnegative")
    return ConstraintReport(safety, {i: float(g[i]) for i in range(n)}, {i: float(eta[i]) for i in range(n)})
