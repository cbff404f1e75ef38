"""Batched closed-loop simulation: reference -> controller -> allocation -> plant.

One instance steps n environments in lockstep with vectorized numpy state.
The dynamics and attitude loop run at dt_dyn, the position loop every
`position_every` dynamics steps, and actions (policy mode) arrive once per
environment step with a simulated inference delay.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import so3
from .actuators import (
    SteadyStateParams,
    TransientParams,
    _motor_step_arrays,
    rate_of_thrust,
    sample_params,
    thrust_of_rate,
)
from .config import FullConfig, ResetConfig
from .control import HfcaController
from .dynamics import YAW_SIGNS, SimulationFault, rk4_rigid_body
from .policy import interpret_action, push_history, build_observation, delay_to_steps

E3 = np.array([0.0, 0.0, 1.0])


def gravity_body(q: np.ndarray) -> np.ndarray:
    """Unit gravity direction in the body frame: -R^T e3 (third row of R)."""
    return -so3.quat_to_rot(q)[..., 2, :]


def gravity_target(transition: str) -> np.ndarray:
    """Body-frame gravity direction at the goal attitude of a transition."""
    if transition == "nti":
        return E3.copy()  # inverted attitude carries gravity along +body z
    if transition == "itn":
        return -E3.copy()
    raise ValueError(f"unknown transition {transition!r}")


def euler_zyx_matrix(psi: float, theta: float, phi: float) -> np.ndarray:
    cz, sz = np.cos(psi), np.sin(psi)
    cy, sy = np.cos(theta), np.sin(theta)
    cx, sx = np.cos(phi), np.sin(phi)
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1.0]])
    Ry = np.array([[cy, 0, sy], [0, 1.0, 0], [-sy, 0, cy]])
    Rx = np.array([[1.0, 0, 0], [0, cx, -sx], [0, sx, cx]])
    return Rz @ Ry @ Rx


R_INVERTED = np.diag([1.0, -1.0, -1.0])  # rotation by pi about body x


def reset_distribution(rng: np.random.Generator, inverted: bool, cfg: ResetConfig):
    """One randomized initial state near nominal or inverted hover."""
    r = rng.uniform(-cfg.dr, cfg.dr)
    v = rng.normal(0.0, cfg.sigma_v, size=3)
    psi = rng.uniform(-cfg.yaw_range, cfg.yaw_range)
    theta = rng.uniform(-cfg.tilt_range, cfg.tilt_range)
    phi = rng.uniform(-cfg.tilt_range, cfg.tilt_range)
    R = euler_zyx_matrix(psi, theta, phi)
    if inverted:
        R = R @ R_INVERTED
    w = rng.normal(0.0, cfg.sigma_w, size=3)
    return r, v, so3.rot_to_quat(R), w, psi


class ClosedLoopEnv:
    """n parallel quadrotors under the chart controller and allocation.

    reference: an object with sample(t) -> FlatSample, shared by all
    environments. policy_mode selects whether posture and reference
    modulation come from actions or from the reference itself.
    allocator: "qp" (projected gradient) or "direct" (mixer inversion).
    """

    def __init__(self, cfg: FullConfig, n: int, transition: str, reference,
                 policy_mode: bool = False, allocator: str = "qp",
                 randomize: bool = False, record_metrics: bool = False,
                 record_trace: bool = False):
        if allocator not in ("qp", "direct"):
            raise ValueError(f"unknown allocator {allocator!r}")
        self.cfg = cfg
        self.n = int(n)
        self.transition = transition
        self.inverted_start = transition == "itn"
        self.reference = reference
        self.policy_mode = bool(policy_mode)
        self.allocator = allocator
        self.randomize = bool(randomize)
        self.record_metrics = record_metrics
        self.record_trace = record_trace
        self.dt = cfg.rates.dt_dyn
        self.pos_every = cfg.rates.position_every
        self.substeps = int(round(cfg.ppo.dt_env / self.dt))
        self.delay_steps = delay_to_steps(cfg.policy.delay, self.dt)
        if self.delay_steps >= self.substeps:
            raise ValueError("inference delay must be shorter than the environment step")
        frac = cfg.allocation.collective_headroom
        t_lo_nom, t_hi_nom = cfg.steady_state.thrust_range()
        self.controller = HfcaController(
            cfg.gains, cfg.chart, cfg.vehicle.mass, cfg.vehicle.gravity, self.n,
            r_off=None,
            fc_limits=(frac * 4.0 * float(np.mean(t_lo_nom)), frac * 4.0 * float(np.mean(t_hi_nom))),
        )
        self.w2 = cfg.allocation.weights**2
        self._m_base = np.zeros((self.n, 4, 4))
        self._m_base[:, 0, :] = 1.0
        self._m_base[:, 1, :] = cfg.vehicle.rotor_y
        self._m_base[:, 2, :] = -cfg.vehicle.rotor_x
        self.reset(seed=0)

    # ------------------------------------------------------------------ reset

    def reset(self, seed: int | np.random.SeedSequence = 0, ideal: bool = False):
        n = self.n
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        streams = [np.random.default_rng(c) for c in ss.spawn(n)]

        self.r = np.zeros((n, 3))
        self.v = np.zeros((n, 3))
        self.q = np.tile(so3.IDENTITY, (n, 1))
        self.w = np.zeros((n, 3))
        self.psi0 = np.zeros(n)  # reference yaw follows the spawn yaw
        if self.inverted_start:
            self.q = np.tile(np.array([0.0, 1.0, 0.0, 0.0]), (n, 1))
        if not ideal:
            for i, rng in enumerate(streams):
                self.r[i], self.v[i], self.q[i], self.w[i], self.psi0[i] = reset_distribution(
                    rng, self.inverted_start, self.cfg.reset)

        ss_nom, tp_nom = self.cfg.steady_state, self.cfg.transient
        if self.randomize:
            draws = [sample_params(rng, ss_nom, tp_nom, self.cfg.randomization) for rng in streams]
            self.ss = SteadyStateParams(
                ct2_pos=np.stack([d[0].ct2_pos for d in draws]),
                ct1_pos=np.stack([d[0].ct1_pos for d in draws]),
                ct0_pos=np.stack([d[0].ct0_pos for d in draws]),
                ms_pos=np.broadcast_to(ss_nom.ms_pos, (n, 4)).copy(),
                ct2_neg=np.stack([d[0].ct2_neg for d in draws]),
                ct1_neg=np.stack([d[0].ct1_neg for d in draws]),
                ct0_neg=np.stack([d[0].ct0_neg for d in draws]),
                ms_neg=np.broadcast_to(ss_nom.ms_neg, (n, 4)).copy(),
                omega_max=ss_nom.omega_max,
                omega_min=ss_nom.omega_min,
            )
            self.tp = TransientParams(
                alpha_pos=np.stack([d[1].alpha_pos for d in draws]),
                alpha_neg=np.stack([d[1].alpha_neg for d in draws]),
                omega_zero=np.stack([d[1].omega_zero for d in draws]),
                dead_width=np.stack([d[1].dead_width for d in draws]),
            )
        else:
            self.ss = SteadyStateParams(
                ct2_pos=np.broadcast_to(ss_nom.ct2_pos, (n, 4)).copy(),
                ct1_pos=np.broadcast_to(ss_nom.ct1_pos, (n, 4)).copy(),
                ct0_pos=np.broadcast_to(ss_nom.ct0_pos, (n, 4)).copy(),
                ms_pos=np.broadcast_to(ss_nom.ms_pos, (n, 4)).copy(),
                ct2_neg=np.broadcast_to(ss_nom.ct2_neg, (n, 4)).copy(),
                ct1_neg=np.broadcast_to(ss_nom.ct1_neg, (n, 4)).copy(),
                ct0_neg=np.broadcast_to(ss_nom.ct0_neg, (n, 4)).copy(),
                ms_neg=np.broadcast_to(ss_nom.ms_neg, (n, 4)).copy(),
                omega_max=ss_nom.omega_max,
                omega_min=ss_nom.omega_min,
            )
            self.tp = TransientParams(
                alpha_pos=np.broadcast_to(tp_nom.alpha_pos, (n, 4)).copy(),
                alpha_neg=np.broadcast_to(tp_nom.alpha_neg, (n, 4)).copy(),
                omega_zero=np.broadcast_to(tp_nom.omega_zero, (n, 4)).copy(),
                dead_width=np.broadcast_to(tp_nom.dead_width, (n, 4)).copy(),
            )
        self.t_lo, self.t_hi = self.ss.thrust_range()

        # motors start at the hover equilibrium of the starting regime
        hover = self.cfg.vehicle.weight / 4.0
        t_hover = np.full((n, 4), -hover if self.inverted_start else hover)
        self.motors, _ = rate_of_thrust(t_hover, self.ss)
        self.T_prev = thrust_of_rate(self.motors, self.ss)

        self.controller.reset()
        self.k = 0  # dynamics substep counter
        self.act_cur = np.zeros((n, 4))
        self.act_pending = np.zeros((n, 4))
        self.hist = np.zeros((n, self.cfg.policy.history, 4))
        self.applied_eta = np.ones(n) * (self.reference.sample(0.0).eta if not self.policy_mode else 1.0)
        self.metric_t: list[float] = []
        self.metric_r: list[np.ndarray] = []
        self.metric_gb: list[np.ndarray] = []
        self.trace_rows: list[dict] = []
        self._record()

    # ------------------------------------------------------------------ steps

    @property
    def time(self) -> float:
        return self.k * self.dt

    def observe(self) -> np.ndarray:
        return build_observation(self.r, self.v, self.q, self.w, self.hist, self.cfg.policy)

    def g_b(self) -> np.ndarray:
        return gravity_body(self.q)

    def env_step(self, raw_action: np.ndarray | None = None):
        """Advance one environment step (dt_env).

        In policy mode the action computed now takes effect delay_steps
        dynamics steps into the window; the previous action holds before.
        """
        if self.policy_mode:
            if raw_action is None:
                raise ValueError("policy-mode environment needs an action")
            act = interpret_action(raw_action, self.cfg.policy.action_limit)
            self.act_pending = act.clipped
            self.hist = push_history(self.hist, act.clipped)
        for j in range(self.substeps):
            if self.policy_mode and j == self.delay_steps:
                self.act_cur = self.act_pending
            self._dyn_substep()

    def run(self, duration: float, policy_fn=None):
        """Roll out for a duration; policy_fn maps observations to raw actions."""
        steps = int(round(duration / self.cfg.ppo.dt_env))
        for _ in range(steps):
            action = policy_fn(self.observe()) if policy_fn is not None else None
            self.env_step(action)

    def _dyn_substep(self):
        if self.k % self.pos_every == 0:
            ref = self.reference.sample(self.time)
            ref = replace(ref, psi=self.psi0 + ref.psi)
            if self.policy_mode:
                eta = np.where(self.act_cur[:, 3] >= 0.0, 1.0, -1.0)
                r_mod = self.act_cur[:, :3] * self.cfg.policy.action_limit
            else:
                eta = np.full(self.n, float(ref.eta))
                r_mod = None
            self.controller.position_tick(self.r, self.v, self.q, ref, r_mod, eta,
                                          self.pos_every * self.dt)
            self.applied_eta = eta

        tau = self.controller.attitude_tick(self.q, self.w)
        u = np.concatenate([self.controller.fc[..., None], tau], axis=-1)

        ms = np.where(self.motors >= 0.0, self.ss.ms_pos, self.ss.ms_neg)
        M = self._m_base.copy()
        M[:, 3, :] = YAW_SIGNS * ms
        if self.allocator == "qp":
            T_cmd = self._allocate_qp(u, M)
        else:
            T_cmd = np.linalg.solve(M, u[..., None])[..., 0]
        self.T_prev = T_cmd

        omega_d, _ = rate_of_thrust(T_cmd, self.ss)
        self.motors = _motor_step_arrays(
            self.motors, omega_d, self.tp.alpha_pos, self.tp.alpha_neg,
            self.tp.omega_zero, self.tp.dead_width, self.dt)
        T_act = thrust_of_rate(self.motors, self.ss)
        ms2 = np.where(self.motors >= 0.0, self.ss.ms_pos, self.ss.ms_neg)
        M[:, 3, :] = YAW_SIGNS * ms2
        u_act = (M @ T_act[..., None])[..., 0]
        self.r, self.v, self.q, self.w = rk4_rigid_body(
            self.r, self.v, self.q, self.w, u_act[:, 0], u_act[:, 1:],
            self.cfg.vehicle, self.dt)
        self.k += 1
        if not np.all(np.isfinite(self.q)) or not np.all(np.isfinite(self.v)):
            raise SimulationFault("non-finite state during closed-loop rollout")
        self._record(T_act=T_act, u_act=u_act)

    def _allocate_qp(self, u: np.ndarray, M: np.ndarray) -> np.ndarray:
        lam = self.cfg.allocation.tikhonov
        Mw2 = self.w2[None, :, None] * M
        H = np.einsum("nij,nik->njk", Mw2, M)
        H[:, np.arange(4), np.arange(4)] += lam
        f = -np.einsum("nij,ni->nj", Mw2, u) - lam * self.T_prev
        gamma = (1.0 / np.trace(H, axis1=-2, axis2=-1))[:, None]
        t = np.clip(self.T_prev, self.t_lo, self.t_hi)
        for _ in range(self.cfg.allocation.iterations):
            grad = (H @ t[..., None])[..., 0] + f
            t = np.clip(t - gamma * grad, self.t_lo, self.t_hi)
        return t

    # -------------------------------------------------------------- recording

    def _record(self, T_act=None, u_act=None):
        if self.record_metrics:
            self.metric_t.append(self.time)
            self.metric_r.append(self.r.copy())
            self.metric_gb.append(self.g_b())
        if self.record_trace:
            i = 0
            T_act = thrust_of_rate(self.motors, self.ss) if T_act is None else T_act
            if u_act is None:
                ms = np.where(self.motors >= 0.0, self.ss.ms_pos, self.ss.ms_neg)
                M = self._m_base.copy()
                M[:, 3, :] = YAW_SIGNS * ms
                u_act = (M @ T_act[..., None])[..., 0]
            row = {"t": self.time}
            for name, vec in (("r", self.r[i]), ("v", self.v[i])):
                for ax, val in zip("xyz", vec):
                    row[f"{name}{ax}"] = val
            for comp, val in zip("wxyz", self.q[i]):
                row[f"q{comp}"] = val
            for ax, val in zip("xyz", self.w[i]):
                row[f"w{ax}"] = val
            for j in range(4):
                row[f"om{j+1}"] = self.motors[i, j]
                row[f"T{j+1}"] = T_act[i, j]
            row["f_c"] = u_act[i, 0]
            for ax, val in zip("xyz", u_act[i, 1:]):
                row[f"tau{ax}"] = val
            row["chart"] = "S" if self.controller.chart_state.chart[i] else "N"
            row["eta"] = int(self.applied_eta[i])
            self.trace_rows.append(row)

    def metrics_arrays(self):
        return (np.asarray(self.metric_t), np.stack(self.metric_r, axis=0),
                np.stack(self.metric_gb, axis=0))
