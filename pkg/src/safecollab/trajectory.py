"""Geometric joint-space paths q_des(s), s in [0, 1], and their time law.

The path fixes *where* the robot goes; the abscissa rate s_dot fixes how
fast. Scaling s_dot never moves the robot off the path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .kinematics import RobotModel

S_SNAP = 1e-12


class PathError(ValueError):
    pass


class GeometricPath:
    """Clamped piecewise-cubic interpolant through joint-space waypoints.

    Waypoint k sits at the normalised cumulative chord length ``knots[k]``.
    End derivatives are clamped to the first/last chord slopes, so a path
    through collinear waypoints is exactly a straight line.
    """

    def __init__(self, waypoints):
        W = np.asarray(waypoints, dtype=float)
        if W.ndim != 2 or W.shape[0] < 2:
            raise PathError("a path needs at least 2 waypoints of equal dimension")
        if not np.all(np.isfinite(W)):
            raise PathError("waypoints must be finite")
        chords = np.linalg.norm(np.diff(W, axis=0), axis=1)
        if np.any(chords == 0.0):
            k = int(np.flatnonzero(chords == 0.0)[0])
            raise PathError(f"waypoints {k} and {k + 1} coincide (zero chord)")
        knots = np.concatenate([[0.0], np.cumsum(chords)])
        knots /= knots[-1]
        knots[-1] = 1.0
        d0 = (W[1] - W[0]) / (knots[1] - knots[0])
        d1 = (W[-1] - W[-2]) / (knots[-1] - knots[-2])
        self.waypoints = W
        self.knots = knots
        self.length = float(np.sum(chords))
        self._spline = CubicSpline(knots, W, axis=0, bc_type=((1, d0), (1, d1)))
        self._dspline = self._spline.derivative()

    @property
    def dim(self) -> int:
        return self.waypoints.shape[1]

    def sample(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(q_des(s), dq_des/ds(s))``."""
        if not 0.0 <= s <= 1.0:
            raise PathError(f"abscissa {s} outside [0, 1]")
        if s == 0.0:
            q = self.waypoints[0].copy()
        elif s == 1.0:
            q = self.waypoints[-1].copy()
        else:
            q = self._spline(s)
        return q, self._dspline(s)


def build_path(waypoints) -> GeometricPath:
    return GeometricPath(waypoints)


def sample(path: GeometricPath, s: float) -> tuple[np.ndarray, np.ndarray]:
    return path.sample(s)


def nominal_rate(path: GeometricPath, s: float, model: RobotModel, s_dot_cap: float = 1.0) -> float:
    """Largest s_dot for which q'(s) * s_dot respects every joint velocity bound.

    Falls back to ``s_dot_cap`` where the path derivative vanishes.
    """
    _, dq = path.sample(s)
    return rate_from_derivative(dq, model, s_dot_cap)


def rate_from_derivative(dq: np.ndarray, model: RobotModel, s_dot_cap: float = 1.0) -> float:
    moving = np.abs(dq) > 0.0
    if not np.any(moving):
        return float(s_dot_cap)
    bound = np.where(dq > 0.0, model.qdot_max, -model.qdot_min)
    return float(np.min(bound[moving] / np.abs(dq[moving])))


@dataclass(frozen=True)
class TimeLawState:
    s: float = 0.0
    s_dot_nominal: float = 0.0
    finished: bool = False

    def __post_init__(self):
        if not 0.0 <= self.s <= 1.0:
            raise PathError(f"abscissa {self.s} outside [0, 1]")
        if self.s_dot_nominal < 0.0:
            raise PathError("nominal rate must be nonnegative")


def advance(state: TimeLawState, s_dot_effective: float, dt: float) -> TimeLawState:
    """Explicit Euler step of the abscissa, saturating at 1."""
    if s_dot_effective < 0.0:
        raise PathError(f"negative abscissa rate {s_dot_effective}")
    if dt <= 0.0:
        raise PathError("dt must be positive")
    s = state.s + s_dot_effective * dt
    # absorb float summation drift so constant-rate integration lands on 1
    if s >= 1.0 - S_SNAP:
        s = 1.0
    return TimeLawState(s=s, s_dot_nominal=state.s_dot_nominal, finished=(s == 1.0))
