"""Speed-and-separation safety layer.

Each control cycle the planned abscissa rate is multiplied by a scaling
factor alpha in [0, 1]. Every constraint on alpha is linear in that one
scalar, so the maximisation is solved exactly by intersecting intervals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import LinkWitness
from .kinematics import RobotModel, _jacobian_from_frames, chain_frames
from .trajectory import GeometricPath, TimeLawState, advance, rate_from_derivative

FEAS_TOL = 1e-12
# fraction of the joint deceleration capacity budgeted for the end-of-path stop
TERMINAL_DECEL_FRACTION = 0.5


@dataclass(frozen=True)
class SafetyParams:
    C: float = 0.10
    Z_d: float = 0.05
    Z_r: float = 0.02
    a_max: float = 3.0
    T_r: float = 0.002
    v_h_filter_alpha: float = 0.2
    v_h_clamp_nonneg: bool = True

    def __post_init__(self):
        if min(self.C, self.Z_d, self.Z_r) < 0:
            raise ValueError("C, Z_d and Z_r must be nonnegative")
        if self.a_max <= 0 or self.T_r <= 0:
            raise ValueError("a_max and T_r must be positive")
        if not 0.0 < self.v_h_filter_alpha <= 1.0:
            raise ValueError("v_h_filter_alpha must lie in (0, 1]")

    @property
    def margin(self) -> float:
        """C + Z_d + Z_r: separation at which the allowed speed reaches zero."""
        return self.C + self.Z_d + self.Z_r


def iso_speed_limit(v_h: float, S_p: float, p: SafetyParams) -> float:
    """Largest robot speed toward the human allowed at separation ``S_p``.

    sqrt(v_h^2 + (a T_r)^2 - 2 a (C + Z_d + Z_r - S_p)) - a T_r - v_h,
    clamped to zero when the radicand or the result is negative.
    """
    aT = p.a_max * p.T_r
    rad = v_h * v_h + aT * aT - 2.0 * p.a_max * (p.margin - S_p)
    if rad <= 0.0:
        return 0.0
    return max(0.0, math.sqrt(rad) - aT - v_h)


# --- human speed -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HumanEstimate:
    """Filtered per-link human speed toward the robot (m/s)."""

    v_h: np.ndarray
    timestamp: float = 0.0
    distances: np.ndarray | None = None


def cold_estimate(n_links: int, timestamp: float = 0.0) -> HumanEstimate:
    return HumanEstimate(np.zeros(n_links), timestamp, None)


def estimate_human_speed(prev: HumanEstimate | None, witnesses: Sequence[LinkWitness], dt: float,
                         p: SafetyParams, robot_speed=None) -> HumanEstimate:
    """Update the per-link human approach speed from a new distance sample.

    The raw rate -dS_p/dt mixes human and robot motion; ``robot_speed``
    (the robot's own per-link speed toward the human) is subtracted before
    exponential smoothing.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    dist = np.array([w.distance for w in witnesses])
    n = dist.size
    t = (prev.timestamp if prev is not None else 0.0) + dt
    if prev is None or prev.distances is None:
        return HumanEstimate(np.zeros(n), t, dist)
    raw = -(dist - prev.distances) / dt
    if robot_speed is not None:
        raw = raw - np.asarray(robot_speed, dtype=float)
    w = p.v_h_filter_alpha
    v = prev.v_h + w * (raw - prev.v_h)
    if p.v_h_clamp_nonneg:
        v = np.maximum(v, 0.0)
    return HumanEstimate(v, t, dist)


# --- constraint assembly and solve ------------------------------------

@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """All alpha constraints for one cycle.

    Per link: ``link_g * alpha <= link_vmax``. Per joint:
    ``qdot_min <= joint_rate * alpha <= qdot_max`` and
    ``acc_lo <= joint_rate * alpha <= acc_hi`` (acceleration bounds
    rewritten as velocity bounds over one execution period). Plus the box
    0 <= alpha <= 1, optionally a protective stop alpha <= 0, and
    optionally a terminal row ``terminal_c * alpha <= terminal_hi`` that
    keeps the abscissa rate low enough to stop at the end of the path.
    """

    link_g: np.ndarray
    link_vmax: np.ndarray
    joint_rate: np.ndarray
    qdot_min: np.ndarray
    qdot_max: np.ndarray
    acc_lo: np.ndarray
    acc_hi: np.ndarray
    protective_stop: bool = False
    terminal_c: float = 0.0
    terminal_hi: float = np.inf
    directed_rows: np.ndarray | None = field(default=None, repr=False)

    def rows(self):
        """Flatten to ``lo <= c * alpha <= hi`` rows: (c, lo, hi, ids)."""
        nl, nj = self.link_g.size, self.joint_rate.size
        c = [self.link_g, self.joint_rate, self.joint_rate]
        lo = [np.full(nl, -np.inf), self.qdot_min, self.acc_lo]
        hi = [self.link_vmax, self.qdot_max, self.acc_hi]
        ids = [f"link{i}" for i in range(nl)]
        ids += [f"qdot{j}" for j in range(nj)]
        ids += [f"qddot{j}" for j in range(nj)]
        if self.protective_stop:
            c.append([1.0])
            lo.append([-np.inf])
            hi.append([0.0])
            ids.append("protective_stop")
        if np.isfinite(self.terminal_hi):
            c.append([self.terminal_c])
            lo.append([-np.inf])
            hi.append([self.terminal_hi])
            ids.append("terminal")
        return (np.concatenate(c).astype(float), np.concatenate(lo).astype(float),
                np.concatenate(hi).astype(float), ids)

    def residuals(self, alpha: float) -> np.ndarray:
        """Per-row constraint violation at ``alpha`` (zero when satisfied), box excluded."""
        c, lo, hi, _ = self.rows()
        v = c * alpha
        with np.errstate(invalid="ignore"):
            r = np.maximum(np.maximum(lo - v, v - hi), 0.0)
        return np.nan_to_num(r, nan=0.0)


@dataclass(frozen=True)
class ScalingSolution:
    alpha: float
    feasible: bool
    active_constraint: str
    violation: float = 0.0


def solve_scaling(cs: ConstraintSet) -> ScalingSolution:
    """Maximise alpha over the intersection of all row intervals and [0, 1]."""
    c, lo, hi, ids = cs.rows()
    pos = c > 0.0
    neg = c < 0.0
    zero = ~(pos | neg)
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = np.where(pos, lo / np.where(pos, c, 1.0), np.where(neg, hi / np.where(neg, c, 1.0), -np.inf))
        upper = np.where(pos, hi / np.where(pos, c, 1.0), np.where(neg, lo / np.where(neg, c, 1.0), np.inf))
    lower = np.nan_to_num(lower, nan=-np.inf)
    upper = np.nan_to_num(upper, nan=np.inf)
    zero_bad = zero & ((lo > 0.0) | (hi < 0.0))

    ilo = int(np.argmax(lower)) if lower.size else -1
    ihi = int(np.argmin(upper)) if upper.size else -1
    a_lo, lo_id = 0.0, "box_lower"
    if ilo >= 0 and lower[ilo] > a_lo:
        a_lo, lo_id = float(lower[ilo]), ids[ilo]
    a_hi, hi_id = 1.0, "box_upper"
    if ihi >= 0 and upper[ihi] < a_hi:
        a_hi, hi_id = float(upper[ihi]), ids[ihi]

    if a_lo <= a_hi + FEAS_TOL and not np.any(zero_bad):
        alpha = min(1.0, max(0.0, a_hi))
        return ScalingSolution(alpha, True, hi_id, 0.0)

    alpha = min(1.0, max(0.0, a_lo))
    viol = float(np.max(cs.residuals(alpha), initial=0.0))
    active = ids[int(np.flatnonzero(zero_bad)[0])] if np.any(zero_bad) and a_lo <= a_hi else lo_id
    return ScalingSolution(alpha, False, active, viol)


def directed_rows(model: RobotModel, frames: np.ndarray, witnesses: Sequence[LinkWitness]) -> np.ndarray:
    """Per-link modified Jacobian d_i^T J_i(q) at the tracked witness points, shape (links, n)."""
    rows = np.zeros((len(witnesses), model.n))
    for w in witnesses:
        if w.in_contact:
            continue
        frame = frames[w.link_index + 1]
        p = frame[:3, :3] @ w.local_point + frame[:3, 3]
        J = _jacobian_from_frames(frames, w.link_index, p)
        rows[w.link_index] = w.direction @ J
    return rows


def robot_approach_speeds(model: RobotModel, q, qdot, witnesses: Sequence[LinkWitness]) -> np.ndarray:
    return directed_rows(model, chain_frames(model, q), witnesses) @ np.asarray(qdot, dtype=float)


def effective_distances(frames: np.ndarray, witnesses: Sequence[LinkWitness]) -> np.ndarray:
    """Held separations reduced by how far each witness point has since moved toward the human.

    Witnesses are refreshed only at the capture rate while the robot keeps
    moving at the control rate. The robot's own displacement is known, so
    the part of it along the witness direction is taken off the stale S_p.
    """
    out = np.empty(len(witnesses))
    for k, w in enumerate(witnesses):
        if w.in_contact:
            out[k] = 0.0
            continue
        frame = frames[w.link_index + 1]
        p = frame[:3, :3] @ w.local_point + frame[:3, 3]
        out[k] = max(0.0, w.distance - max(0.0, float(w.direction @ (p - w.robot_point))))
    return out


def speed_limits(witnesses: Sequence[LinkWitness], estimate: HumanEstimate, p: SafetyParams,
                 distances=None) -> np.ndarray:
    """Per-link ISO limit; ``distances`` overrides the witnesses' own S_p."""
    S = [w.distance for w in witnesses] if distances is None else distances
    return np.array([
        0.0 if w.in_contact else iso_speed_limit(float(estimate.v_h[w.link_index]), float(S[k]), p)
        for k, w in enumerate(witnesses)
    ])


def terminal_rate(model: RobotModel, dq: np.ndarray, s: float) -> float:
    """Highest abscissa rate from which the path end can still be reached at rest.

    Uses a constant abscissa deceleration that every joint can deliver at
    the current path tangent: sqrt(2 * decel * (1 - s)).
    """
    moving = np.abs(dq) > 0.0
    if not np.any(moving):
        return np.inf
    capacity = np.where(dq > 0.0, -model.qddot_min, model.qddot_max)
    decel = TERMINAL_DECEL_FRACTION * float(np.min(capacity[moving] / np.abs(dq[moving])))
    return math.sqrt(2.0 * decel * max(0.0, 1.0 - s))


def assemble_constraints(model: RobotModel, q, qdot_current, path: GeometricPath, s: float,
                         s_dot_nom: float, witnesses: Sequence[LinkWitness],
                         estimate: HumanEstimate, p: SafetyParams,
                         terminal: bool = True) -> ConstraintSet:
    if s_dot_nom < 0:
        raise ValueError("nominal abscissa rate must be nonnegative")
    _, dq = path.sample(s)
    return _assemble(model, chain_frames(model, q), np.asarray(qdot_current, dtype=float),
                     dq, s, s_dot_nom, witnesses, estimate, p, terminal)


def _assemble(model, frames, qdot, dq, s, s_dot_nom, witnesses, estimate, p, terminal=True) -> ConstraintSet:
    joint_rate = dq * s_dot_nom
    D = directed_rows(model, frames, witnesses)
    T = model.reaction_time
    S = effective_distances(frames, witnesses)
    stop = any(w.in_contact for w in witnesses) or bool(np.any(S <= p.margin))
    return ConstraintSet(
        link_g=D @ joint_rate,
        link_vmax=speed_limits(witnesses, estimate, p, S),
        joint_rate=joint_rate,
        qdot_min=model.qdot_min,
        qdot_max=model.qdot_max,
        acc_lo=model.qddot_min * T + qdot,
        acc_hi=model.qddot_max * T + qdot,
        protective_stop=stop,
        terminal_c=s_dot_nom if terminal else 0.0,
        terminal_hi=terminal_rate(model, dq, s) if terminal else np.inf,
        directed_rows=D,
    )


# --- per-cycle step ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class ControllerState:
    q: np.ndarray
    qdot: np.ndarray
    time_law: TimeLawState


@dataclass(frozen=True, eq=False)
class StepResult:
    u: np.ndarray
    time_law: TimeLawState
    solution: ScalingSolution
    s_dot_nominal: float
    v_rh: np.ndarray
    v_max: np.ndarray
    mode: str


def safety_step(state: ControllerState, path: GeometricPath, witnesses: Sequence[LinkWitness],
                estimate: HumanEstimate, model: RobotModel, p: SafetyParams, dt: float,
                enabled: bool = True, s_dot_cap: float = 1.0) -> StepResult:
    """One control cycle: scale the nominal path velocity and advance the abscissa.

    With ``enabled=False`` alpha is pinned to 1 and the limits are only
    reported, never enforced.
    """
    s = state.time_law.s
    _, dq = path.sample(s)
    s_dot_nom = rate_from_derivative(dq, model, s_dot_cap)
    frames = chain_frames(model, state.q)
    cs = _assemble(model, frames, np.asarray(state.qdot, dtype=float), dq, s, s_dot_nom,
                   witnesses, estimate, p)
    if enabled:
        sol = solve_scaling(cs)
        mode = "safe"
    else:
        sol = ScalingSolution(1.0, True, "disabled", 0.0)
        mode = "unsafe"
    u = dq * (s_dot_nom * sol.alpha)
    tl = advance(TimeLawState(s, s_dot_nom, state.time_law.finished), s_dot_nom * sol.alpha, dt)
    return StepResult(u, tl, sol, s_dot_nom, cs.link_g * sol.alpha, cs.link_vmax, mode)
