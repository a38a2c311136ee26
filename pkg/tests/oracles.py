"""Independent reference computations used as test oracles.

Nothing here imports the code paths it is used to check.
"""
import mpmath
import numpy as np


def rot_z(t):
    c, s = np.cos(t), np.sin(t)
    T = np.eye(4)
    T[0, 0], T[0, 1], T[1, 0], T[1, 1] = c, -s, s, c
    return T


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    T = np.eye(4)
    T[1, 1], T[1, 2], T[2, 1], T[2, 2] = c, -s, s, c
    return T


def trans(x, y, z):
    T = np.eye(4)
    T[:3, 3] = (x, y, z)
    return T


def fk_product(dh_table, q):
    """Link frames by chaining elementary 4x4 transforms."""
    T = np.eye(4)
    out = []
    for (a, alpha, d, off), qi in zip(dh_table, q):
        T = T @ rot_z(off + qi) @ trans(0, 0, d) @ trans(a, 0, 0) @ rot_x(alpha)
        out.append(T.copy())
    return out


def grid_segment_distance(a0, a1, b0, b1, n=2001):
    """Minimum distance over an n x n grid of segment parameters."""
    a0, a1, b0, b1 = (np.asarray(v, float) for v in (a0, a1, b0, b1))
    s = np.linspace(0.0, 1.0, n)
    u, v, w = a1 - a0, b1 - b0, a0 - b0
    uu, vv, uv, uw, vw, ww = u @ u, v @ v, u @ v, u @ w, v @ w, w @ w
    # |w + s u - t v|^2 split into per-s, per-t and cross terms
    row = ww + s * s * uu + 2 * s * uw
    col = s * s * vv - 2 * s * vw
    d2 = np.multiply.outer(s, s * (-2 * uv))
    d2 += row[:, None]
    d2 += col[None, :]
    return float(np.sqrt(max(d2.min(), 0.0)))


def iso_limit_mp(v_h, S_p, a_max, T_r, margins, dps=50):
    """High-precision evaluation of the separation speed limit."""
    with mpmath.workdps(dps):
        v, S, a, T, m = (mpmath.mpf(str(x)) for x in (v_h, S_p, a_max, T_r, margins))
        rad = v ** 2 + (a * T) ** 2 - 2 * a * (m - S)
        if rad <= 0:
            return 0.0
        return float(max(mpmath.mpf(0), mpmath.sqrt(rad) - a * T - v))


def grid_alpha(c, lo, hi, n=4096, tol=1e-12):
    """Largest feasible alpha on an n-point grid of [0, 1], or None."""
    grid = np.linspace(0.0, 1.0, n)
    vals = np.outer(grid, c)
    scale = 1.0 + np.abs(vals)
    ok = np.all((vals >= lo - tol * scale) & (vals <= hi + tol * scale), axis=1)
    if not ok.any():
        return None
    return float(grid[np.flatnonzero(ok)[-1]])


def eigen_line_direction(points):
    """Principal axis of a point cloud from the scatter matrix eigendecomposition."""
    P = np.asarray(points, float)
    X = P - P.mean(axis=0)
    M = np.zeros((3, 3))
    for x in X:
        M += np.outer(x, x)
    w, V = np.linalg.eigh(M)
    return V[:, np.argmax(w)]


def random_constraint_set(rng, n_joints=6):
    """Randomised ConstraintSet with mixed signs, zero rows and optional stop/terminal rows."""
    from safecollab.safety import ConstraintSet

    nl = int(rng.integers(1, 9))
    rate = rng.normal(0.0, 1.0, n_joints) * (rng.uniform(size=n_joints) > 0.1)
    g = rng.normal(0.0, 1.0, nl)
    vmax = rng.uniform(0.0, 2.0, nl) * (rng.uniform(size=nl) > 0.2)
    qmin = -rng.uniform(0.3, 2.0, n_joints)
    qmax = rng.uniform(0.3, 2.0, n_joints)
    qdot = rate * rng.uniform(0.0, 1.05) + rng.normal(0.0, 0.01, n_joints)
    T = 0.002
    band = rng.uniform(5.0, 40.0, n_joints) * T * (1.0 if rng.uniform() < 0.5 else 50.0)
    terminal = rng.uniform() < 0.3
    return ConstraintSet(
        link_g=g, link_vmax=vmax, joint_rate=rate, qdot_min=qmin, qdot_max=qmax,
        acc_lo=qdot - band, acc_hi=qdot + band,
        protective_stop=bool(rng.uniform() < 0.1),
        terminal_c=float(rng.uniform(0.0, 2.0)) if terminal else 0.0,
        terminal_hi=float(rng.uniform(0.0, 2.0)) if terminal else np.inf,
    )
