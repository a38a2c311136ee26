"""Deterministic multi-rate simulation of the collaborative pick-and-place cell.

One loop runs at the control rate. Human capture and the gesture channel
tick on their own logical clocks and their latest samples are held
between ticks. The robot is a pure integrator, q <- q + u * dt.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import fusion
from .geometry import min_human_robot_distance
from .safety import (ControllerState, HumanEstimate, cold_estimate, estimate_human_speed,
                     robot_approach_speeds, safety_step, speed_limits)
from .scenario import Scenario
from .trace import SPEED_TOL, Trace, column_names
from .trajectory import GeometricPath, PathError, TimeLawState

log = logging.getLogger(__name__)

IDLE, TO_PICK, GRASP, TO_PLACE, RELEASE = "idle", "to_pick", "grasp", "to_place", "release"
SAME_Q_TOL = 1e-9


class RateClock:
    """Fires on the control cycles where a slower channel produces a sample."""

    def __init__(self, rate_hz: float, control_hz: float):
        self._ratio = Fraction(str(rate_hz)) / Fraction(str(control_hz))

    def fires(self, k: int) -> bool:
        if k == 0:
            return True
        return (k * self._ratio).__floor__() > ((k - 1) * self._ratio).__floor__()


@dataclass
class TaskState:
    phase: str = IDLE
    command: fusion.MultimodalCommand | None = None
    path: GeometricPath | None = None
    time_law: TimeLawState = field(default_factory=TimeLawState)
    queue: deque = field(default_factory=deque)
    started_at: float = 0.0


@dataclass
class Summary:
    tasks_completed: int
    completion_times: list[float]
    violation_events: int
    violation_cycles: int
    infeasible_cycles: int
    emergency_stops: int
    min_distance: float
    mean_alpha: float
    commands: int
    incomplete: list[str]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _path_to(q: np.ndarray, waypoints: np.ndarray) -> GeometricPath | None:
    pts = [q]
    for w in waypoints:
        if np.max(np.abs(w - pts[-1])) > SAME_Q_TOL:
            pts.append(w)
    if len(pts) < 2:
        return None
    return GeometricPath(np.array(pts))


def run(scenario: Scenario, safety_enabled: bool | None = None, seed: int | None = None):
    """Simulate ``scenario`` and return ``(Trace, Summary)``."""
    sc = scenario
    enabled = sc.safety_enabled if safety_enabled is None else bool(safety_enabled)
    seed = sc.seed if seed is None else int(seed)
    model, params = sc.model, sc.params
    n = model.n
    N = sc.n_cycles
    dt = 1.0 / sc.control_hz
    capture = RateClock(sc.capture_hz, sc.control_hz)
    gesture_clock = RateClock(sc.gesture_hz, sc.control_hz)
    noise_rng = np.random.default_rng([seed, 0])

    engine = fusion.FusionEngine(
        sc.recognition_time, fusion.RuleClassifier(sc.objects),
        lateral_axis=sc.lateral_axis, lat_threshold=sc.lat_threshold, arm_keypoints=sc.human.arm)
    voice_q = deque(e for e in sc.events if e.source == fusion.VOICE)
    gesture_q = deque(e for e in sc.events if e.source == fusion.GESTURE)

    q = np.array(sc.initial_q, dtype=float)
    qdot = np.zeros(n)
    task = TaskState()
    witnesses = None
    estimate: HumanEstimate = cold_estimate(n)
    last_capture_t = None
    hold_until = -1.0
    in_violation = False

    cols = {name: np.empty(N, dtype=object if name in ("phase", "mode") else float)
            for name in column_names(n, n)}
    cols["feasible"] = np.empty(N, dtype=bool)
    Q = np.empty((N, n))
    QD = np.empty((N, n))
    VRH = np.empty((N, n))
    VMAX = np.empty((N, n))
    events: list[dict] = []
    completion_times: list[float] = []
    n_violation_cycles = n_infeasible = 0

    def emit(t, event_type, **data):
        events.append({"t": round(t, 9), "type": event_type, **data})

    for k in range(N):
        t = k / sc.control_hz

        # perception: channel events, then window deadlines
        due = []
        while voice_q and voice_q[0].timestamp <= t:
            due.append(voice_q.popleft())
        if gesture_clock.fires(k):
            while gesture_q and gesture_q[0].timestamp <= t:
                e = gesture_q.popleft()
                if not e.gesture.keypoints:
                    pts = sc.human.sample(t)
                    named = sc.human.named(pts)
                    e = fusion.gesture_event(t, e.gesture.label, e.gesture.confidence,
                                             {a: named[a] for a in sc.human.arm if a in named})
                else:
                    e = fusion.ChannelEvent(fusion.GESTURE, t, gesture=e.gesture)
                due.append(e)
        outputs = []
        for e in fusion.merge_streams(due):
            outputs += engine.ingest(e)
        outputs += engine.poll(t)
        for out in outputs:
            cmd = out.command
            emit(t, "command", **cmd.to_dict())
            emit(t, "feedback", text=fusion.feedback_text(cmd))
            if cmd.kind == fusion.INSTRUCTION:
                task.queue.append(cmd)

        if capture.fires(k):
            kp = sc.human.sample(t)
            if sc.keypoint_noise > 0:
                kp = kp + noise_rng.normal(0.0, sc.keypoint_noise, kp.shape)
            new_w = min_human_robot_distance(model, q, kp, sc.human.bones)
            if last_capture_t is None:
                estimate = estimate_human_speed(None, new_w, 1.0, params)
                estimate = HumanEstimate(estimate.v_h, t, estimate.distances)
            else:
                robot_v = robot_approach_speeds(model, q, qdot, new_w)
                estimate = estimate_human_speed(estimate, new_w, t - last_capture_t, params, robot_v)
            witnesses = new_w
            last_capture_t = t
        min_sp = min(w.distance for w in witnesses)

        # executor; grasp and release each occupy one stationary cycle
        phase_now = task.phase
        if task.phase == IDLE and task.queue:
            task.command = task.queue.popleft()
            task.phase = phase_now = TO_PICK
            task.started_at = t
            task.path = _path_to(q, sc.areas[task.command.area])
            task.time_law = TimeLawState()
            emit(t, "task_start", object=task.command.object, area=task.command.area)
        elif task.phase == GRASP:
            emit(t, "grasp", object=task.command.object)
            task.phase = TO_PLACE
            task.path = _path_to(q, sc.place)
            task.time_law = TimeLawState()
        elif task.phase == RELEASE:
            emit(t, "release", object=task.command.object, duration=round(t - task.started_at, 9))
            completion_times.append(round(t, 9))
            task.phase = IDLE
            task.command = None
            task.path = None

        if task.phase in (TO_PICK, TO_PLACE) and task.path is None:
            task.time_law = TimeLawState(1.0, 0.0, True)

        u = np.zeros(n)
        alpha, feasible, s_dot = 0.0, True, 0.0
        v_max = speed_limits(witnesses, estimate, params)
        v_rh = np.zeros(len(witnesses))
        moving = phase_now in (TO_PICK, TO_PLACE) and not task.time_law.finished

        if not enabled and t >= hold_until and min_sp < sc.contact_threshold and moving:
            hold_until = t + sc.estop_hold
            emit(t, "emergency_stop", min_sp=min_sp, hold=sc.estop_hold)
        holding = t < hold_until

        s_now = task.time_law.s
        if moving and not holding:
            res = safety_step(ControllerState(q, qdot, task.time_law), task.path, witnesses, estimate,
                              model, params, dt, enabled=enabled, s_dot_cap=sc.s_dot_cap)
            u = res.u
            alpha, feasible = res.solution.alpha, res.solution.feasible
            s_dot = res.s_dot_nominal * alpha
            v_rh, v_max = res.v_rh, res.v_max
            task.time_law = res.time_law
            if not feasible:
                n_infeasible += 1

        over = bool(np.any(v_rh > v_max + SPEED_TOL)) or not feasible
        if over:
            n_violation_cycles += 1
            if not in_violation:
                link = int(np.argmax(v_rh - v_max))
                emit(t, "violation", link=link, v_rh=float(v_rh[link]), v_max=float(v_max[link]),
                     feasible=feasible)
        in_violation = over

        cols["t"][k] = t
        cols["phase"][k] = phase_now
        Q[k], QD[k] = q, u
        cols["s"][k] = s_now
        cols["sdot"][k] = s_dot
        cols["alpha"][k] = alpha
        cols["feasible"][k] = feasible
        cols["min_sp"][k] = min_sp
        VRH[k], VMAX[k] = v_rh, v_max
        cols["mode"][k] = "safe" if enabled else "unsafe"

        # velocity-controlled robot, explicit Euler
        q = q + u * dt
        qdot = u

        if task.phase in (TO_PICK, TO_PLACE) and task.time_law.finished:
            task.phase = GRASP if task.phase == TO_PICK else RELEASE

    for j in range(n):
        cols[f"q{j}"] = Q[:, j]
        cols[f"qd{j}"] = QD[:, j]
        cols[f"vrh{j}"] = VRH[:, j]
        cols[f"vmax{j}"] = VMAX[:, j]

    end_t = N / sc.control_hz
    for out in engine.flush():
        emit(end_t, "command", **out.command.to_dict())
        emit(end_t, "feedback", text=fusion.feedback_text(out.command))
    incomplete = []
    if task.command is not None:
        incomplete.append(f"{task.command.object}: duration ended during {task.phase}")
    incomplete += [f"{c.object}: never started" for c in task.queue]
    for reason in incomplete:
        emit(end_t, "incomplete", reason=reason)

    meta = {
        "scenario": sc.name,
        "scenario_hash": sc.content_hash(),
        "mode": "safe" if enabled else "unsafe",
        "seed": seed,
        "control_hz": sc.control_hz,
        "n_joints": n,
        "n_links": n,
    }
    trace = Trace(meta, cols, events)
    active = np.isin(cols["phase"], (TO_PICK, TO_PLACE))
    summary = Summary(
        tasks_completed=len(completion_times),
        completion_times=completion_times,
        violation_events=len(trace.events_of("violation")),
        violation_cycles=n_violation_cycles,
        infeasible_cycles=n_infeasible,
        emergency_stops=len(trace.events_of("emergency_stop")),
        min_distance=float(np.min(cols["min_sp"])),
        mean_alpha=float(np.mean(cols["alpha"][active])) if np.any(active) else float("nan"),
        commands=len(trace.events_of("command")),
        incomplete=incomplete,
    )
    return trace, summary
