"""Hopf-chart geometric position/attitude controller.

Four controller charts arise from {north, south} x {posture +1, -1}. The
position loop produces a desired acceleration/jerk and collective thrust;
the thrust axis is lifted to a desired attitude through the active chart
with a yaw offset saved at equator crossings; attitude feedback uses the
quaternionic error with an inverse-right-Jacobian correction.

All functions broadcast over leading batch axes. The controller class owns
the per-environment memory (active chart, saved offset, previous desired
attitude for the rate feedforward, previous collective and thrust axis).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import so3
from .trajectories import FlatSample

DEGENERATE_ACC = 1e-6


class DegenerateThrustError(RuntimeError):
    """Desired acceleration too small to define a thrust direction."""


@dataclass
class Gains:
    kr: np.ndarray
    kv: np.ndarray
    kR: np.ndarray
    kw: np.ndarray

    def __post_init__(self):
        for name in ("kr", "kv", "kR", "kw"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.any(arr <= 0):
                raise ValueError(f"gain {name} must be positive")
            setattr(self, name, arr)


@dataclass
class ChartConfig:
    hysteresis: float = 0.1
    ab_eps: float = 1e-6
    ff_angle_limit: float = 0.5


CHART_NORTH = 0
CHART_SOUTH = 1


@dataclass
class ChartState:
    chart: np.ndarray  # 0 = north, 1 = south
    offset: np.ndarray  # saved yaw offset, 0 in the north chart

    def copy(self) -> "ChartState":
        return ChartState(self.chart.copy(), self.offset.copy())


def initial_chart_state(b3d: np.ndarray) -> ChartState:
    """Chart consistent with the starting desired body z (no history)."""
    b3d = np.atleast_2d(np.asarray(b3d, dtype=float))
    chart = np.where(b3d[..., 2] < 0.0, CHART_SOUTH, CHART_NORTH).astype(np.int8)
    return ChartState(chart, np.zeros(chart.shape))


def position_feedback(
    r: np.ndarray,
    v: np.ndarray,
    q: np.ndarray,
    ref: FlatSample,
    r_mod: np.ndarray | None,
    g: Gains,
    mass: float,
    gravity: float = 9.81,
    fc_prev: np.ndarray | None = None,
):
    """Desired acceleration, jerk, and collective thrust.

    The jerk law needs the vehicle acceleration; it is estimated from the
    previously commanded collective and the current attitude (exact at the
    hover fixed points). With fc_prev None the acceleration error is zero.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    b3 = so3.hopf_project(q)
    r_ref = ref.r if r_mod is None else ref.r + np.asarray(r_mod, dtype=float)
    e_r = r - r_ref
    e_v = v - ref.v
    e3 = np.array([0.0, 0.0, gravity])
    rdd_d = -g.kr * e_r - g.kv * e_v + ref.a + e3
    if fc_prev is None:
        e_a = np.zeros_like(e_r)
    else:
        fc_prev = np.asarray(fc_prev, dtype=float)
        a_est = -e3 + (fc_prev[..., None] / mass) * b3
        e_a = a_est - ref.a
    rddd_d = -g.kr * e_v - g.kv * e_a + ref.j
    fc = mass * np.sum(b3 * rdd_d, axis=-1)
    if np.any(np.linalg.norm(rdd_d, axis=-1) < DEGENERATE_ACC):
        raise DegenerateThrustError("desired acceleration norm below threshold")
    return rdd_d, rddd_d, fc


def thrust_axis(rdd_d: np.ndarray, rddd_d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit thrust axis and its derivative (tangent projection of the jerk)."""
    rdd_d = np.asarray(rdd_d, dtype=float)
    rddd_d = np.asarray(rddd_d, dtype=float)
    norm = np.linalg.norm(rdd_d, axis=-1, keepdims=True)
    if np.any(norm < DEGENERATE_ACC):
        raise DegenerateThrustError("desired acceleration norm below threshold")
    s = rdd_d / norm
    sdot = (rddd_d - s * np.sum(s * rddd_d, axis=-1, keepdims=True)) / norm
    return s, sdot


def chart_switch(cs: ChartState, b3d: np.ndarray, cfg: ChartConfig) -> ChartState:
    """Hysteretic chart transitions at the equator of the desired body z.

    Entering the south chart saves the yaw offset 2 atan2(a, b) when (a, b)
    is well conditioned, otherwise no offset (step posture through the
    pole). Returning north clears it.
    """
    b3d = np.atleast_2d(np.asarray(b3d, dtype=float))
    chart = np.atleast_1d(cs.chart).copy()
    offset = np.atleast_1d(cs.offset).copy()
    a, b, c = b3d[..., 0], b3d[..., 1], b3d[..., 2]
    to_south = (chart == CHART_NORTH) & (c < -cfg.hysteresis)
    to_north = (chart == CHART_SOUTH) & (c > cfg.hysteresis)
    if np.any(to_south):
        good = np.hypot(a, b) > cfg.ab_eps
        new_offset = np.where(good, 2.0 * np.arctan2(a, b), 0.0)
        offset = np.where(to_south, new_offset, offset)
        chart = np.where(to_south, CHART_SOUTH, chart).astype(np.int8)
    if np.any(to_north):
        offset = np.where(to_north, 0.0, offset)
        chart = np.where(to_north, CHART_NORTH, chart).astype(np.int8)
    return ChartState(chart, offset)


def desired_attitude(
    s: np.ndarray,
    eta: np.ndarray | int,
    psi_ref: np.ndarray | float,
    cs: ChartState,
) -> tuple[np.ndarray, np.ndarray]:
    """Desired attitude from thrust axis, posture, and yaw reference.

    The desired body z is eta * s. Yaw enters as psi_ref in the north chart
    (negated for posture -1 since yaw then acts about an inverted axis) and
    is shifted by the saved offset in the south chart.
    """
    s = np.asarray(s, dtype=float)
    scalar = s.ndim == 1
    s = np.atleast_2d(s)
    eta = np.broadcast_to(np.asarray(eta, dtype=float), s.shape[:-1])
    psi_ref = np.broadcast_to(np.asarray(psi_ref, dtype=float), s.shape[:-1])
    chart = np.broadcast_to(np.atleast_1d(cs.chart), s.shape[:-1])
    offset = np.broadcast_to(np.atleast_1d(cs.offset), s.shape[:-1])

    b3d = eta[..., None] * s
    c = b3d[..., 2]
    north = chart == CHART_NORTH
    if np.any(north & (c <= -1.0 + so3.POLE_MARGIN)) or np.any(~north & (c >= 1.0 - so3.POLE_MARGIN)):
        raise RuntimeError("active chart is singular at the commanded axis; switching logic broken")

    psi_n = np.where(eta > 0, psi_ref, -psi_ref)
    psi = np.where(north, psi_n, offset + psi_n)
    q_abc_n = so3._chart_north_unchecked(b3d, floor=1e-12)
    q_abc_s = so3._chart_south_unchecked(b3d, floor=1e-12)
    q_abc = np.where(north[..., None], q_abc_n, q_abc_s)
    q_d = so3.quat_mul(q_abc, so3.quat_yaw(psi))
    if scalar:
        return q_d[0], psi[0]
    return q_d, psi


def desired_angular_velocity(q_d: np.ndarray, qd_dot: np.ndarray) -> np.ndarray:
    """Body rates realizing the attitude rate: 2 vec(q_d^-1 (x) q_dot_d)."""
    return 2.0 * so3.quat_mul(so3.quat_conj(q_d), np.asarray(qd_dot, dtype=float))[..., 1:]


def attitude_feedback(
    q: np.ndarray,
    w: np.ndarray,
    q_d: np.ndarray,
    w_d: np.ndarray,
    g: Gains,
    r_off: np.ndarray | None = None,
    fc: np.ndarray | float = 0.0,
) -> np.ndarray:
    """Torque from the quaternionic attitude error.

    tau = -J_r^{-T}(e_R) K_R e_R - K_w e_w (+ CM-offset compensation), with
    e_R the log of the error quaternion and e_w the rate error expressed in
    the current body frame.
    """
    q = np.asarray(q, dtype=float)
    w = np.asarray(w, dtype=float)
    q_err = so3.quat_normalize(so3.quat_mul(so3.quat_conj(q_d), q))
    e_R = so3.log_so3(q_err)
    w_d_body = so3.quat_rotate(so3.quat_conj(q_err), np.asarray(w_d, dtype=float))
    e_w = w - w_d_body
    J_inv = so3.inv_right_jacobian(e_R)
    tau = -(np.swapaxes(J_inv, -1, -2) @ (g.kR * e_R)[..., None])[..., 0] - g.kw * e_w
    if r_off is not None and np.any(np.asarray(r_off) != 0.0):
        fc_vec = np.zeros(e_w.shape[:-1] + (3,))
        fc_vec[..., 2] = fc
        tau = tau + np.cross(np.broadcast_to(r_off, fc_vec.shape), fc_vec)
    return tau


class HfcaController:
    """Stateful controller for a batch of environments.

    position_tick computes the held references (desired attitude, body
    rates, collective) at the position-loop rate; attitude_tick produces
    the torque at the attitude-loop rate against those held references.
    """

    def __init__(self, gains: Gains, chart_cfg: ChartConfig, mass: float,
                 gravity: float, n: int, r_off: np.ndarray | None = None,
                 fc_limits: tuple[float, float] | None = None):
        self.gains = gains
        self.cfg = chart_cfg
        self.mass = float(mass)
        self.gravity = float(gravity)
        self.r_off = None if r_off is None or not np.any(np.asarray(r_off)) else np.asarray(r_off, dtype=float)
        # collective is clamped inside the achievable range so the
        # allocation keeps headroom for attitude torques
        self.fc_limits = fc_limits
        self.n = int(n)
        self.reset()

    def reset(self):
        n = self.n
        self.chart_state = ChartState(np.zeros(n, dtype=np.int8), np.zeros(n))
        self._started = False
        self.qd = np.tile(so3.IDENTITY, (n, 1))
        self.wd = np.zeros((n, 3))
        self.fc = np.zeros(n)
        self.fc_prev: np.ndarray | None = None
        self.s_prev = np.tile(np.array([0.0, 0.0, 1.0]), (n, 1))
        self.sdot_prev = np.zeros((n, 3))
        self.qd_prev: np.ndarray | None = None

    def position_tick(self, r, v, q, ref: FlatSample, r_mod, eta, dt_tick: float):
        """Update held (q_d, w_d, f_c) from the current state and reference."""
        rdd_d, rddd_d, fc = self._position_law(r, v, q, ref, r_mod)
        norm = np.linalg.norm(rdd_d, axis=-1, keepdims=True)
        ok = norm[..., 0] >= DEGENERATE_ACC
        safe = np.where(ok[..., None], rdd_d, self.s_prev)
        s = safe / np.linalg.norm(safe, axis=-1, keepdims=True)
        sdot = (rddd_d - s * np.sum(s * rddd_d, axis=-1, keepdims=True)) / np.maximum(norm, DEGENERATE_ACC)
        sdot = np.where(ok[..., None], sdot, self.sdot_prev)
        self.s_prev, self.sdot_prev = s, sdot

        eta = np.broadcast_to(np.asarray(eta, dtype=float), s.shape[:-1])
        b3d = eta[..., None] * s
        if not self._started:
            self.chart_state = initial_chart_state(b3d)
            self._started = True
        else:
            self.chart_state = chart_switch(self.chart_state, b3d, self.cfg)
        q_d, _ = desired_attitude(s, eta, ref.psi, self.chart_state)

        if self.qd_prev is None:
            w_d = np.zeros((q_d.shape[0], 3))
        else:
            # antipodal alignment keeps the finite difference meaningful
            flip = np.sum(q_d * self.qd_prev, axis=-1) < 0.0
            q_d = np.where(flip[..., None], -q_d, q_d)
            dot = np.clip(np.abs(np.sum(q_d * self.qd_prev, axis=-1)), -1.0, 1.0)
            jump = 2.0 * np.arccos(np.minimum(dot, 1.0))
            qdot = (q_d - self.qd_prev) / dt_tick
            w_d = desired_angular_velocity(q_d, qdot)
            # a reference discontinuity has no usable rate; let feedback act
            w_d = np.where((jump > self.cfg.ff_angle_limit)[..., None], 0.0, w_d)
        self.qd_prev = q_d
        self.qd, self.wd, self.fc = q_d, w_d, fc
        self.fc_prev = fc
        return q_d, w_d, fc

    def _position_law(self, r, v, q, ref: FlatSample, r_mod):
        r = np.atleast_2d(np.asarray(r, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        q = np.atleast_2d(np.asarray(q, dtype=float))
        b3 = so3.hopf_project(q)
        r_ref = ref.r if r_mod is None else ref.r + np.asarray(r_mod, dtype=float)
        e_r = r - r_ref
        e_v = v - ref.v
        g3 = np.array([0.0, 0.0, self.gravity])
        rdd_d = -self.gains.kr * e_r - self.gains.kv * e_v + ref.a + g3
        if self.fc_prev is None:
            e_a = np.zeros_like(e_r)
        else:
            a_est = -g3 + (self.fc_prev[..., None] / self.mass) * b3
            e_a = a_est - ref.a
        rddd_d = -self.gains.kr * e_v - self.gains.kv * e_a + ref.j
        fc = self.mass * np.sum(b3 * rdd_d, axis=-1)
        if self.fc_limits is not None:
            fc = np.clip(fc, self.fc_limits[0], self.fc_limits[1])
        return rdd_d, rddd_d, fc

    def attitude_tick(self, q, w) -> np.ndarray:
        """Torque from the held references at the attitude-loop rate."""
        return attitude_feedback(
            np.atleast_2d(q), np.atleast_2d(w), self.qd, self.wd,
            self.gains, self.r_off, self.fc,
        )

    def control_step(self, r, v, q, w, ref: FlatSample, r_mod=None, eta=None,
                     dt_tick: float = 0.01):
        """Full chain (position + attitude) in one call; returns the wrench."""
        if eta is None:
            eta = ref.eta
        q_d, w_d, fc = self.position_tick(r, v, q, ref, r_mod, eta, dt_tick)
        tau = self.attitude_tick(q, w)
        return np.concatenate([fc[..., None], tau], axis=-1), self.chart_state
