"""Serial-chain kinematics with standard Denavit-Hartenberg parameters.

Frame ``i`` (0-based) is the frame attached to link ``i``, i.e. the
cumulative transform ``T_0 @ T_1 @ ... @ T_i`` where each factor is

    Rz(theta_i + q_i) @ Tz(d_i) @ Tx(a_i) @ Rx(alpha_i)

Joint ``j`` rotates about the z axis of the frame *before* it (the base
frame for joint 0).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DIRECTION_TOL = 1e-6


class ModelError(ValueError):
    """Raised for malformed robot models or dimension mismatches."""


@dataclass(frozen=True)
class DHRow:
    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Kinematic chain plus the velocity/acceleration envelope.

    ``link_segments[i]`` is an array of shape (k, 2, 3): k segments, each
    given by two points in the local frame of link ``i``.
    """

    dh_rows: tuple[DHRow, ...]
    link_segments: tuple[np.ndarray, ...]
    qdot_min: np.ndarray
    qdot_max: np.ndarray
    qddot_min: np.ndarray
    qddot_max: np.ndarray
    reaction_time: float = 0.002
    max_deceleration: float = 3.0
    name: str = "robot"
    _dh: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.dh_rows)
        if n == 0:
            raise ModelError("model needs at least one DH row")
        for attr in ("qdot_min", "qdot_max", "qddot_min", "qddot_max"):
            arr = np.asarray(getattr(self, attr), dtype=float)
            if arr.shape != (n,):
                raise ModelError(f"{attr} must have {n} entries, got {arr.shape}")
            object.__setattr__(self, attr, arr)
        if not np.all(self.qdot_min < self.qdot_max):
            raise ModelError("qdot_min must be < qdot_max elementwise")
        if not (np.all(self.qddot_min < 0) and np.all(self.qddot_max > 0)):
            raise ModelError("need qddot_min < 0 < qddot_max elementwise")
        if self.reaction_time <= 0 or self.max_deceleration <= 0:
            raise ModelError("reaction_time and max_deceleration must be > 0")
        if len(self.link_segments) != n:
            raise ModelError(f"expected segments for {n} links, got {len(self.link_segments)}")
        segs = []
        for i, s in enumerate(self.link_segments):
            s = np.asarray(s, dtype=float).reshape(-1, 2, 3)
            if s.shape[0] == 0:
                raise ModelError(f"link {i} has no segments")
            segs.append(s)
        object.__setattr__(self, "link_segments", tuple(segs))
        dh = np.array([[r.a, r.alpha, r.d, r.theta_offset] for r in self.dh_rows], dtype=float)
        object.__setattr__(self, "_dh", dh)

    @property
    def n(self) -> int:
        return len(self.dh_rows)


def default_link_segments(dh_rows: Sequence[DHRow]) -> list[np.ndarray]:
    """One segment per link, from the previous frame origin to the link frame origin.

    For standard DH the previous origin seen from frame i is
    (-a, -d sin(alpha), -d cos(alpha)), independent of the joint angle.
    """
    out = []
    for r in dh_rows:
        prev = np.array([-r.a, -r.d * np.sin(r.alpha), -r.d * np.cos(r.alpha)])
        out.append(np.array([[prev, np.zeros(3)]]))
    return out


def as_joint_vector(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise ModelError(f"joint vector must have length {model.n}, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ModelError("joint vector has non-finite entries")
    return q


def dh_transform(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def chain_frames(model: RobotModel, q) -> np.ndarray:
    """Base frame followed by the n link frames, shape (n+1, 4, 4)."""
    q = as_joint_vector(model, q)
    dh = model._dh
    theta = dh[:, 3] + q
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(dh[:, 1]), np.sin(dh[:, 1])
    n = model.n
    local = np.zeros((n, 4, 4))
    local[:, 0, 0] = ct
    local[:, 0, 1] = -st * ca
    local[:, 0, 2] = st * sa
    local[:, 0, 3] = dh[:, 0] * ct
    local[:, 1, 0] = st
    local[:, 1, 1] = ct * ca
    local[:, 1, 2] = -ct * sa
    local[:, 1, 3] = dh[:, 0] * st
    local[:, 2, 1] = sa
    local[:, 2, 2] = ca
    local[:, 2, 3] = dh[:, 2]
    local[:, 3, 3] = 1.0
    frames = np.empty((n + 1, 4, 4))
    frames[0] = np.eye(4)
    for i in range(n):
        frames[i + 1] = frames[i] @ local[i]
    return frames


def forward_kinematics(model: RobotModel, q) -> np.ndarray:
    """World transforms of the n link frames, shape (n, 4, 4)."""
    return chain_frames(model, q)[1:]


def to_world(frame: np.ndarray, local_point) -> np.ndarray:
    return frame[:3, :3] @ np.asarray(local_point, dtype=float) + frame[:3, 3]


def to_local(frame: np.ndarray, world_point) -> np.ndarray:
    return frame[:3, :3].T @ (np.asarray(world_point, dtype=float) - frame[:3, 3])


def _jacobian_from_frames(frames: np.ndarray, link: int, p: np.ndarray) -> np.ndarray:
    n = frames.shape[0] - 1
    J = np.zeros((3, n))
    z = frames[: link + 1, :3, 2]
    o = frames[: link + 1, :3, 3]
    J[:, : link + 1] = np.cross(z, p - o).T
    return J


def link_point_jacobian(model: RobotModel, q, link: int, world_point) -> np.ndarray:
    """3 x n positional Jacobian of a point rigidly attached to ``link``.

    Column j is z_j x (p - o_j) for joints up to and including ``link``,
    where z_j, o_j are the axis and origin of joint j; later columns are zero.
    """
    if not 0 <= link < model.n:
        raise ModelError(f"link index {link} out of range 0..{model.n - 1}")
    frames = chain_frames(model, q)
    return _jacobian_from_frames(frames, link, np.asarray(world_point, dtype=float))


def directed_jacobian(J: np.ndarray, d) -> np.ndarray:
    """Project a positional Jacobian onto a unit direction: J_r = d^T J.

    ``J_r @ qdot`` is the scalar speed of the point along ``d``.
    """
    d = np.asarray(d, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > DIRECTION_TOL:
        raise ModelError(f"direction must be a unit vector, |d| = {np.linalg.norm(d)}")
    return d @ np.asarray(J, dtype=float)


# --- model file --------------------------------------------------------

def model_from_dict(doc: dict) -> RobotModel:
    try:
        rows = tuple(
            DHRow(float(r["a"]), float(r["alpha"]), float(r["d"]), float(r.get("theta_offset", 0.0)))
            for r in doc["dh"]
        )
        links = doc.get("links", "auto")
        if links == "auto":
            segments = default_link_segments(rows)
        else:
            segments = [np.asarray(link, dtype=float) for link in links]
        lim = doc["limits"]
        return RobotModel(
            dh_rows=rows,
            link_segments=tuple(segments),
            qdot_min=lim["qdot_min"],
            qdot_max=lim["qdot_max"],
            qddot_min=lim["qddot_min"],
            qddot_max=lim["qddot_max"],
            reaction_time=float(doc.get("reaction_time", 0.002)),
            max_deceleration=float(doc.get("max_deceleration", 3.0)),
            name=str(doc.get("name", "robot")),
        )
    except KeyError as exc:
        raise ModelError(f"robot model is missing field {exc.args[0]!r}") from None


def load_robot_model(path) -> RobotModel:
    with open(Path(path)) as fh:
        return model_from_dict(json.load(fh))
