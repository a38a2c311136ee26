"""Minimum-distance geometry between robot link segments and a human skeleton."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kinematics import RobotModel, chain_frames

_EPS = 1e-14


@dataclass(frozen=True, eq=False)
class LinkWitness:
    """Closest robot/human point pair for one link.

    ``direction`` points from the robot toward the human. When the two
    points coincide it is the zero vector and ``in_contact`` is set.
    ``local_point`` is ``robot_point`` expressed in the link frame, so the
    same material point can be tracked after the robot moves.
    """

    link_index: int
    robot_point: np.ndarray
    human_point: np.ndarray
    distance: float
    direction: np.ndarray
    local_point: np.ndarray
    in_contact: bool = False


def _closest_on_segment(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom < _EPS:
        return a
    t = min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return a + t * ab


def segment_segment_distance(a0, a1, b0, b1):
    """Distance between segments [a0, a1] and [b0, b1].

    Returns ``(distance, point_on_a, point_on_b)``. Zero-length segments
    are handled as points.
    """
    a0, a1, b0, b1 = (np.asarray(v, dtype=float) for v in (a0, a1, b0, b1))
    u = a1 - a0
    v = b1 - b0
    w = a0 - b0
    uu, uv, vv = float(u @ u), float(u @ v), float(v @ v)
    uw, vw = float(u @ w), float(v @ w)
    denom = uu * vv - uv * uv

    candidates = []
    # interior stationary point of the squared distance, if the lines are not parallel
    if uu > _EPS and vv > _EPS and denom > 1e-12 * uu * vv:
        s = (uv * vw - vv * uw) / denom
        t = (uu * vw - uv * uw) / denom
        if 0.0 <= s <= 1.0 and 0.0 <= t <= 1.0:
            candidates.append((a0 + s * u, b0 + t * v))
    # otherwise the minimum lies on an edge of the parameter square
    candidates.append((_closest_on_segment(b0, a0, a1), b0))
    candidates.append((_closest_on_segment(b1, a0, a1), b1))
    candidates.append((a0, _closest_on_segment(a0, b0, b1)))
    candidates.append((a1, _closest_on_segment(a1, b0, b1)))

    best = min(candidates, key=lambda pq: float((pq[0] - pq[1]) @ (pq[0] - pq[1])))
    pa, pb = best
    return float(np.linalg.norm(pa - pb)), pa, pb


def batch_segment_distance(A: np.ndarray, B: np.ndarray):
    """Vectorised closest points for paired segments.

    ``A`` and ``B`` have shape (m, 2, 3). Returns ``(dist, pa, pb)`` with
    shapes (m,), (m, 3), (m, 3). Clamped-parameter scheme; parallel pairs
    fall back to s = 0 before clamping t.
    """
    p1, q1 = A[:, 0], A[:, 1]
    p2, q2 = B[:, 0], B[:, 1]
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)

    a_deg = a <= _EPS
    e_deg = e <= _EPS
    a_safe = np.where(a_deg, 1.0, a)
    e_safe = np.where(e_deg, 1.0, e)
    denom = a * e - b * b
    general = ~a_deg & ~e_deg
    nonpar = general & (denom > 1e-12 * a_safe * e_safe)

    s = np.where(nonpar, np.clip((b * f - c * e) / np.where(nonpar, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / e_safe
    lo = t < 0.0
    hi = t > 1.0
    s = np.where(general & lo, np.clip(-c / a_safe, 0.0, 1.0), s)
    s = np.where(general & hi, np.clip((b - c) / a_safe, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # one or both segments degenerate
    only_b = a_deg & ~e_deg
    only_a = ~a_deg & e_deg
    s = np.where(only_b, 0.0, s)
    t = np.where(only_b, np.clip(f / e_safe, 0.0, 1.0), t)
    s = np.where(only_a, np.clip(-c / a_safe, 0.0, 1.0), s)
    t = np.where(only_a, 0.0, t)
    both = a_deg & e_deg
    s = np.where(both, 0.0, s)
    t = np.where(both, 0.0, t)

    pa = p1 + s[:, None] * d1
    pb = p2 + t[:, None] * d2
    dist = np.linalg.norm(pa - pb, axis=1)
    return dist, pa, pb


def human_segments(keypoints, bones: Sequence[tuple[int, int]] = ()) -> np.ndarray:
    """Skeleton primitives: one segment per bone plus each keypoint not used by a bone."""
    kp = np.asarray(keypoints, dtype=float).reshape(-1, 3)
    if kp.shape[0] == 0:
        raise ValueError("human skeleton needs at least one keypoint")
    used = set()
    segs = []
    for i, j in bones:
        segs.append((kp[i], kp[j]))
        used.update((i, j))
    for k in range(kp.shape[0]):
        if k not in used:
            segs.append((kp[k], kp[k]))
    return np.array(segs, dtype=float)


def link_world_segments(model: RobotModel, frames: np.ndarray):
    """World-frame segments of every link and the owning link index per segment."""
    segs, owner = [], []
    for i, local in enumerate(model.link_segments):
        R = frames[i + 1, :3, :3]
        o = frames[i + 1, :3, 3]
        segs.append(local @ R.T + o)
        owner.extend([i] * local.shape[0])
    return np.concatenate(segs, axis=0), np.asarray(owner)


def min_human_robot_distance(model: RobotModel, q, human_keypoints,
                             bones: Sequence[tuple[int, int]] = ()) -> list[LinkWitness]:
    """Per-link minimum distance to the human skeleton, one LinkWitness per link."""
    H = human_segments(human_keypoints, bones)
    frames = chain_frames(model, q)
    R_segs, owner = link_world_segments(model, frames)
    nr, nh = R_segs.shape[0], H.shape[0]
    A = np.repeat(R_segs, nh, axis=0)
    B = np.tile(H, (nr, 1, 1))
    dist, pa, pb = batch_segment_distance(A, B)
    dist = dist.reshape(nr, nh)
    pa = pa.reshape(nr, nh, 3)
    pb = pb.reshape(nr, nh, 3)

    out = []
    for link in range(model.n):
        rows = np.flatnonzero(owner == link)
        sub = dist[rows]
        k = int(np.argmin(sub))
        r, h = rows[k // nh], k % nh
        rp, hp = pa[r, h], pb[r, h]
        delta = hp - rp
        d = float(np.linalg.norm(delta))
        frame = frames[link + 1]
        local = frame[:3, :3].T @ (rp - frame[:3, 3])
        if d > 0.0:
            out.append(LinkWitness(link, rp, hp, d, delta / d, local))
        else:
            out.append(LinkWitness(link, rp, hp, 0.0, np.zeros(3), local, in_contact=True))
    return out
