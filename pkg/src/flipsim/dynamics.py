"""Rigid-body quadrotor dynamics with motor transients and RK4 integration.

State fields broadcast over leading batch axes; a single vehicle uses
r (3,), q (4,), motors (4,), a batch uses (n, 3) etc. The attitude
quaternion maps body to world.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .actuators import (
    SteadyStateParams,
    TransientParams,
    motor_step,
    rate_of_thrust,
    thrust_of_rate,
)

E3 = np.array([0.0, 0.0, 1.0])
# reaction-torque sign pattern of the rotor spin layout (rotors 1, 2 spin
# opposite to rotors 3, 4)
YAW_SIGNS = np.array([-1.0, -1.0, 1.0, 1.0])


class SimulationFault(RuntimeError):
    """Raised when integration produces a non-finite state."""


@dataclass
class QuadParams:
    mass: float
    inertia: np.ndarray
    rotor_x: np.ndarray
    rotor_y: np.ndarray
    gravity: float = 9.81
    cm_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.rotor_x = np.asarray(self.rotor_x, dtype=float)
        self.rotor_y = np.asarray(self.rotor_y, dtype=float)
        self.cm_offset = np.asarray(self.cm_offset, dtype=float)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if np.max(np.abs(self.inertia - self.inertia.T)) > 1e-12 or np.any(
            np.linalg.eigvalsh(self.inertia) <= 0
        ):
            raise ValueError("inertia must be symmetric positive definite")
        self.inertia_inv = np.linalg.inv(self.inertia)

    @property
    def weight(self) -> float:
        return self.mass * self.gravity


@dataclass
class QuadState:
    r: np.ndarray
    v: np.ndarray
    q: np.ndarray
    omega: np.ndarray
    motors: np.ndarray

    def __post_init__(self):
        for name in ("r", "v", "q", "omega", "motors"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def copy(self) -> "QuadState":
        return QuadState(self.r.copy(), self.v.copy(), self.q.copy(), self.omega.copy(), self.motors.copy())


def hover_state(inverted: bool = False) -> QuadState:
    q = np.array([0.0, 1.0, 0.0, 0.0]) if inverted else so3.IDENTITY.copy()
    return QuadState(np.zeros(3), np.zeros(3), q, np.zeros(3), np.zeros(4))


def mixer(signs: np.ndarray, p: QuadParams, ss: SteadyStateParams) -> np.ndarray:
    """Mixer matrix mapping rotor thrusts to [collective, roll, pitch, yaw].

    The yaw row carries the spin-layout sign pattern with the moment-scale
    magnitude of each rotor's current regime (sign of its rate).
    """
    signs = np.asarray(signs, dtype=float)
    batch = signs.shape[:-1]
    ms = np.where(signs >= 0.0, ss.ms_pos, ss.ms_neg)
    M = np.empty(batch + (4, 4))
    M[..., 0, :] = 1.0
    M[..., 1, :] = p.rotor_y
    M[..., 2, :] = -p.rotor_x
    M[..., 3, :] = YAW_SIGNS * ms
    return M


def mixer_from_motors(motors: np.ndarray, p: QuadParams, ss: SteadyStateParams) -> np.ndarray:
    return mixer(np.asarray(motors, dtype=float), p, ss)


def wrench_from_thrusts(T: np.ndarray, M: np.ndarray) -> np.ndarray:
    """u = M T, packed as [f_c, tau_x, tau_y, tau_z]."""
    return (np.asarray(M, dtype=float) @ np.asarray(T, dtype=float)[..., None])[..., 0]


def _rigid_body_deriv(r, v, q, w, fc, tau, p: QuadParams):
    dr = v
    dv = -p.gravity * E3 + (fc[..., None] / p.mass) * so3.hopf_project(q)
    wq = np.concatenate([np.zeros(w.shape[:-1] + (1,)), w], axis=-1)
    dq = 0.5 * so3.quat_mul(q, wq)
    Iw = w @ p.inertia.T
    dw = (-np.cross(w, Iw) + tau) @ p.inertia_inv.T
    return dr, dv, dq, dw


def dynamics_deriv(x: QuadState, T: np.ndarray, p: QuadParams, ss: SteadyStateParams):
    """State derivative under rotor thrusts T (regimes from current rates)."""
    M = mixer_from_motors(x.motors, p, ss)
    u = wrench_from_thrusts(T, M)
    return _rigid_body_deriv(x.r, x.v, x.q, x.omega, u[..., 0], u[..., 1:], p)


def dynamics_deriv_cm_offset(x: QuadState, T: np.ndarray, p: QuadParams, ss: SteadyStateParams):
    """Variant with the center-of-mass offset coupling (geometric-center state).

    The thrust torque about the offset CM appears in the rotational equation,
    and the geometric-center acceleration picks up the rotational coupling.
    Reduces exactly to dynamics_deriv for a zero offset.
    """
    M = mixer_from_motors(x.motors, p, ss)
    u = wrench_from_thrusts(T, M)
    fc, tau = u[..., 0], u[..., 1:]
    w = x.omega
    fc_body = np.stack([np.zeros_like(fc), np.zeros_like(fc), fc], axis=-1)
    tau_eff = tau - np.cross(np.broadcast_to(p.cm_offset, tau.shape), fc_body)
    Iw = w @ p.inertia.T
    dw = (-np.cross(w, Iw) + tau_eff) @ p.inertia_inv.T
    dr = x.v
    dv_cm = -p.gravity * E3 + (fc[..., None] / p.mass) * so3.hopf_project(x.q)
    # body-frame coupling a_off = wdot x r_off + w x (w x r_off), rotated to world
    a_off = np.cross(dw, p.cm_offset) + np.cross(w, np.cross(w, np.broadcast_to(p.cm_offset, w.shape)))
    dv = dv_cm - (so3.quat_to_rot(x.q) @ a_off[..., None])[..., 0]
    wq = np.concatenate([np.zeros(w.shape[:-1] + (1,)), w], axis=-1)
    dq = 0.5 * so3.quat_mul(x.q, wq)
    return dr, dv, dq, dw


def rk4_rigid_body(r, v, q, w, fc, tau, p: QuadParams, dt: float):
    """One RK4 step of the rigid body under a wrench held over dt."""
    k1 = _rigid_body_deriv(r, v, q, w, fc, tau, p)
    k2 = _rigid_body_deriv(r + 0.5 * dt * k1[0], v + 0.5 * dt * k1[1],
                           q + 0.5 * dt * k1[2], w + 0.5 * dt * k1[3], fc, tau, p)
    k3 = _rigid_body_deriv(r + 0.5 * dt * k2[0], v + 0.5 * dt * k2[1],
                           q + 0.5 * dt * k2[2], w + 0.5 * dt * k2[3], fc, tau, p)
    k4 = _rigid_body_deriv(r + dt * k3[0], v + dt * k3[1], q + dt * k3[2], w + dt * k3[3], fc, tau, p)
    sixth = dt / 6.0
    r = r + sixth * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    v = v + sixth * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    q = q + sixth * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    w = w + sixth * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
    return r, v, so3.quat_normalize(q), w


def step(
    x: QuadState,
    T_cmd: np.ndarray,
    p: QuadParams,
    ss: SteadyStateParams,
    tp: TransientParams,
    dt: float,
) -> QuadState:
    """Advance one dynamics step under commanded thrusts.

    Commands map to desired rotor rates, motors slew with their transient
    model, and the rigid body integrates under the thrusts the motors
    actually produce.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    omega_d, _ = rate_of_thrust(T_cmd, ss)
    motors = motor_step(x.motors, omega_d, tp, dt)
    T_act = thrust_of_rate(motors, ss)
    u = wrench_from_thrusts(T_act, mixer_from_motors(motors, p, ss))
    r, v, q, w = rk4_rigid_body(x.r, x.v, x.q, x.omega, u[..., 0], u[..., 1:], p, dt)
    out = QuadState(r, v, q, w, motors)
    if not (
        np.all(np.isfinite(r)) and np.all(np.isfinite(v)) and np.all(np.isfinite(q))
        and np.all(np.isfinite(w)) and np.all(np.isfinite(motors))
    ):
        raise SimulationFault("non-finite state after integration step")
    return out


TRACE_COLUMNS = (
    ["t", "rx", "ry", "rz", "vx", "vy", "vz", "qw", "qx", "qy", "qz",
     "wx", "wy", "wz"]
    + [f"om{i+1}" for i in range(4)]
    + [f"T{i+1}" for i in range(4)]
    + ["f_c", "taux", "tauy", "tauz", "chart", "eta"]
)


def trace_to_csv(rows: list[dict]) -> str:
    """Serialize trace rows (dicts keyed by TRACE_COLUMNS) deterministically."""
    buf = io.StringIO()
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    for row in rows:
        cells = []
        for col in TRACE_COLUMNS:
            val = row[col]
            if col == "chart":
                cells.append(str(val))
            elif col == "eta":
                cells.append(str(int(val)))
            else:
                cells.append(repr(float(val)))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()
