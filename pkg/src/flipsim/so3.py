"""Quaternion and rotation algebra (Hamilton convention).

Quaternions are [w, x, y, z] with ij = k. All functions broadcast over
leading axes, so a single quaternion is shape (4,) and a batch is (n, 4).
R(q) rotates body vectors into the world frame.
"""

from __future__ import annotations

import numpy as np

UNIT_TOL = 1e-6
# below this angle the closed forms switch to their Taylor expansions
SMALL_ANGLE = 1e-4

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_mul(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product q1 (x) q2."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    w1, x1, y1, z1 = np.moveaxis(q1, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(q2, -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate body vector(s) v into the world frame: Im(q (x) [0, v] (x) q̄)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    qv = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
    return quat_mul(quat_mul(q, qv), quat_conj(q))[..., 1:]


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Body-to-world rotation matrix of q. Normalizes defensively."""
    R, _ = quat_to_rot_checked(q)
    return R


def quat_to_rot_checked(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Like quat_to_rot, also reports which inputs needed renormalization.

    Returns (R, renormalized) where renormalized is a boolean array over the
    batch, true where |q| deviated from 1 by more than the unit tolerance.
    """
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1)
    renorm = np.abs(norm - 1.0) > UNIT_TOL
    q = q / norm[..., None]
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R, renorm


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Quaternion of a rotation matrix (Shepperd's method), w >= 0."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    Rf = R.reshape((-1, 3, 3))
    out = np.empty((Rf.shape[0], 4))
    for i, M in enumerate(Rf):
        tr = np.trace(M)
        cand = np.array([tr, M[0, 0], M[1, 1], M[2, 2]])
        k = int(np.argmax(cand))
        if k == 0:
            w = 0.5 * np.sqrt(1.0 + tr)
            s = 0.25 / w
            out[i] = [w, s * (M[2, 1] - M[1, 2]), s * (M[0, 2] - M[2, 0]), s * (M[1, 0] - M[0, 1])]
        else:
            a, b, c = k - 1, k % 3, (k + 1) % 3
            t = np.sqrt(1.0 + M[a, a] - M[b, b] - M[c, c])
            s = 0.5 / t
            qv = np.empty(3)
            qv[a] = 0.5 * t
            qv[b] = s * (M[b, a] + M[a, b])
            qv[c] = s * (M[c, a] + M[a, c])
            out[i] = [s * (M[c, b] - M[b, c]), *qv]
        if out[i, 0] < 0:
            out[i] = -out[i]
    return quat_normalize(out.reshape(batch + (4,)))


def quat_yaw(psi: np.ndarray | float) -> np.ndarray:
    """Rotation by psi about the body z-axis: [cos(psi/2), 0, 0, sin(psi/2)]."""
    psi = np.asarray(psi, dtype=float)
    zeros = np.zeros_like(psi)
    return np.stack([np.cos(psi / 2), zeros, zeros, np.sin(psi / 2)], axis=-1)


def hopf_project(q: np.ndarray) -> np.ndarray:
    """Thrust direction of an attitude: Im(q (x) k (x) q̄), the body z-axis in world.

    Invariant under right multiplication by yaw rotations (the fiber).
    """
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)],
        axis=-1,
    )


POLE_MARGIN = 1e-9


def chart_north(s: np.ndarray) -> np.ndarray:
    """Minimal tilt-without-twist quaternion mapping e3 to s = (a, b, c).

    q = [1+c, -b, a, 0] / sqrt(2(1+c)). Defined away from the south pole.
    """
    s = np.asarray(s, dtype=float)
    c = s[..., 2]
    if np.any(c <= -1.0 + POLE_MARGIN):
        raise ValueError("chart_north undefined at the south pole (c <= -1)")
    return _chart_north_unchecked(s)


def _chart_north_unchecked(s: np.ndarray, floor: float = 0.0) -> np.ndarray:
    a, b, c = np.moveaxis(np.asarray(s, dtype=float), -1, 0)
    d = np.sqrt(np.maximum(2.0 * (1.0 + c), max(floor, 1e-300)))
    return np.stack([(1.0 + c) / d, -b / d, a / d, np.zeros_like(a)], axis=-1)


def chart_south(s: np.ndarray) -> np.ndarray:
    """Secondary-chart quaternion mapping e3 to s = (a, b, c).

    q = [-b, 1-c, 0, a] / sqrt(2(1-c)). Defined away from the north pole.
    """
    s = np.asarray(s, dtype=float)
    c = s[..., 2]
    if np.any(c >= 1.0 - POLE_MARGIN):
        raise ValueError("chart_south undefined at the north pole (c >= 1)")
    return _chart_south_unchecked(s)


def _chart_south_unchecked(s: np.ndarray, floor: float = 0.0) -> np.ndarray:
    a, b, c = np.moveaxis(np.asarray(s, dtype=float), -1, 0)
    d = np.sqrt(np.maximum(2.0 * (1.0 - c), max(floor, 1e-300)))
    return np.stack([-b / d, (1.0 - c) / d, np.zeros_like(a), a / d], axis=-1)


def log_so3(q: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a unit quaternion, with angle in [0, pi].

    At angle pi (scalar part within 1e-9 of zero) the sign ambiguity is broken
    by making the largest-magnitude axis component positive.
    """
    q = np.asarray(q, dtype=float)
    scalar_in = q.ndim == 1
    q = np.atleast_2d(q)
    # fold onto the w >= 0 hemisphere so the angle lands in [0, pi]
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = q[..., 0]
    v = q[..., 1:]
    nv = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(nv, w)
    safe_nv = np.where(nv > 0.0, nv, 1.0)
    # angle/sin(angle/2) with the nv -> 0 limit 2/w (1 - nv^2/(3 w^2))
    small = nv < SMALL_ANGLE
    w_safe = np.where(np.abs(w) > 0.0, w, 1.0)
    factor = np.where(
        small,
        2.0 / w_safe * (1.0 - nv * nv / (3.0 * w_safe * w_safe)),
        angle / safe_nv,
    )
    out = factor[..., None] * v
    # antipodal tie-break: w ~ 0 means angle pi; fix the axis sign
    at_pi = np.abs(w) < 1e-9
    if np.any(at_pi):
        axis = v / safe_nv[..., None]
        idx = np.argmax(np.abs(axis), axis=-1)
        lead = np.take_along_axis(axis, idx[..., None], axis=-1)[..., 0]
        axis = np.where((lead < 0.0)[..., None], -axis, axis)
        out = np.where(at_pi[..., None], np.pi * axis, out)
    return out[0] if scalar_in else out


def exp_so3(e: np.ndarray) -> np.ndarray:
    """Unit quaternion of an axis-angle vector (inverse of log_so3)."""
    e = np.asarray(e, dtype=float)
    angle = np.linalg.norm(e, axis=-1)
    half = angle / 2.0
    small = angle < SMALL_ANGLE
    safe = np.where(angle > 0.0, angle, 1.0)
    # sin(angle/2)/angle with its Taylor limit
    k = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half)[..., None], k[..., None] * e], axis=-1)


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    x, y, z = np.moveaxis(v, -1, 0)
    zero = np.zeros_like(x)
    return np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )


def inv_right_jacobian(e: np.ndarray) -> np.ndarray:
    """Inverse of the SO(3) right Jacobian at rotation vector e (||e|| < pi).

    J_r^{-1}(e) = I + 1/2 [e]x + g(||e||) [e]x^2 with
    g(t) = 1/t^2 - (1 + cos t) / (2 t sin t), series 1/12 + t^2/720 near zero.
    """
    e = np.asarray(e, dtype=float)
    t = np.linalg.norm(e, axis=-1)
    small = t < SMALL_ANGLE
    ts = np.where(small, 1.0, t)
    g = np.where(
        small,
        1.0 / 12.0 + t * t / 720.0,
        1.0 / (ts * ts) - (1.0 + np.cos(ts)) / (2.0 * ts * np.sin(ts)),
    )
    S = skew(e)
    eye = np.broadcast_to(np.eye(3), S.shape)
    return eye + 0.5 * S + g[..., None, None] * (S @ S)
