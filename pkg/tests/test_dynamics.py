import numpy as np
import pytest

from flipsim import dynamics as dyn
from flipsim import so3
from flipsim.actuators import SteadyStateParams, TransientParams, thrust_of_rate

RNG = np.random.default_rng(99)


def make_vehicle():
    return dyn.QuadParams(
        mass=1.0,
        inertia=np.diag([0.008, 0.008, 0.012]),
        rotor_x=np.array([0.08, -0.08, 0.08, -0.08]),
        rotor_y=np.array([0.08, -0.08, -0.08, 0.08]),
        gravity=9.81,
    )


def make_steady():
    return SteadyStateParams(
        ct2_pos=np.full(4, 1.2e-5), ct1_pos=np.full(4, 1e-3), ct0_pos=np.zeros(4), ms_pos=np.full(4, 0.014),
        ct2_neg=np.full(4, 0.6e-5), ct1_neg=np.full(4, 1e-3), ct0_neg=np.zeros(4), ms_neg=np.full(4, 0.022),
    )


def make_transient():
    return TransientParams(alpha_pos=np.full(4, 40.0), alpha_neg=np.full(4, 30.0),
                           omega_zero=np.zeros(4), dead_width=np.full(4, 60.0))


class TestMixer:
    def test_sign_pattern_all_forward(self):
        M = dyn.mixer(np.ones(4), make_vehicle(), make_steady())
        assert np.allclose(M[3], [-0.014, -0.014, 0.014, 0.014])
        assert np.allclose(M[0], 1.0)
        assert np.allclose(M[1], make_vehicle().rotor_y)
        assert np.allclose(M[2], -make_vehicle().rotor_x)

    def test_reversed_rotor_uses_reverse_moment_scale(self):
        signs = np.array([-1.0, 1.0, 1.0, 1.0])
        M = dyn.mixer(signs, make_vehicle(), make_steady())
        assert np.allclose(M[3], [-0.022, -0.014, 0.014, 0.014])

    def test_default_geometry_invertible(self):
        M = dyn.mixer(np.ones(4), make_vehicle(), make_steady())
        assert np.linalg.cond(M) < 1e3


class TestWrench:
    def test_hover_split_cancels_torques(self):
        p = make_vehicle()
        M = dyn.mixer(np.ones(4), p, make_steady())
        u = dyn.wrench_from_thrusts(np.full(4, p.weight / 4), M)
        assert np.allclose(u, [p.weight, 0, 0, 0], atol=1e-12)

    def test_zero(self):
        M = dyn.mixer(np.ones(4), make_vehicle(), make_steady())
        assert np.allclose(dyn.wrench_from_thrusts(np.zeros(4), M), 0.0)

    def test_differential_pair_gives_pure_roll(self):
        p = make_vehicle()
        M = dyn.mixer(np.ones(4), p, make_steady())
        # rotors 1, 4 sit at +y; 2, 3 at -y; equal split plus a +y-side bump
        T = np.full(4, 1.0) + np.array([0.5, -0.5, -0.5, 0.5])
        u = dyn.wrench_from_thrusts(T, M)
        assert abs(u[0] - 4.0) < 1e-12
        assert u[1] > 0 and abs(u[2]) < 1e-12 and abs(u[3]) < 1e-12

    def test_yaw_torque_identity_for_forward_rotors(self):
        p, ss = make_vehicle(), make_steady()
        T = RNG.uniform(0.5, 5.0, size=4)
        u = dyn.wrench_from_thrusts(T, dyn.mixer(np.ones(4), p, ss))
        assert abs(u[3] - 0.014 * (-T[0] - T[1] + T[2] + T[3])) < 1e-12


class TestDynamicsDeriv:
    def test_hover_equilibrium(self):
        p, ss = make_vehicle(), make_steady()
        x = dyn.hover_state()
        T = np.full(4, p.weight / 4)
        dr, dv, dq, dw = dyn.dynamics_deriv(x, T, p, ss)
        assert np.allclose(dr, 0) and np.allclose(dv, 0, atol=1e-12)
        assert np.allclose(dq, 0) and np.allclose(dw, 0, atol=1e-12)

    def test_inverted_hover_with_negative_collective(self):
        p, ss = make_vehicle(), make_steady()
        x = dyn.hover_state(inverted=True)
        x.motors = -np.ones(4)  # reverse regime
        T = np.full(4, -p.weight / 4)
        _, dv, _, dw = dyn.dynamics_deriv(x, T, p, ss)
        assert np.allclose(dv, 0, atol=1e-12)

    def test_free_fall(self):
        p, ss = make_vehicle(), make_steady()
        _, dv, _, _ = dyn.dynamics_deriv(dyn.hover_state(), np.zeros(4), p, ss)
        assert np.allclose(dv, [0, 0, -9.81])


class TestCmOffsetDeriv:
    def test_reduces_to_plain_dynamics_at_zero_offset(self):
        p, ss = make_vehicle(), make_steady()
        x = dyn.QuadState(RNG.normal(size=3), RNG.normal(size=3),
                          so3.quat_normalize(RNG.normal(size=4)), RNG.normal(size=3),
                          RNG.uniform(-500, 500, size=4))
        T = RNG.uniform(-2, 5, size=4)
        plain = dyn.dynamics_deriv(x, T, p, ss)
        offset = dyn.dynamics_deriv_cm_offset(x, T, p, ss)
        for a, b in zip(plain, offset):
            assert np.max(np.abs(a - b)) < 1e-12

    def test_hover_offset_pitches(self):
        p, ss = make_vehicle(), make_steady()
        p.cm_offset = np.array([0.01, 0.0, 0.0])
        x = dyn.hover_state()
        T = np.full(4, p.weight / 4)
        _, _, _, dw = dyn.dynamics_deriv_cm_offset(x, T, p, ss)
        expected = -p.inertia_inv @ np.cross(p.cm_offset, [0, 0, p.weight])
        assert np.allclose(dw, expected)

    def test_compensating_torque_cancels(self):
        p, ss = make_vehicle(), make_steady()
        p.cm_offset = np.array([0.01, -0.02, 0.0])
        x = dyn.hover_state()
        fc = p.weight
        comp = np.cross(p.cm_offset, [0.0, 0.0, fc])
        M = dyn.mixer(np.ones(4), p, ss)
        T = np.linalg.solve(M, np.array([fc, *comp]))
        _, _, _, dw = dyn.dynamics_deriv_cm_offset(x, T, p, ss)
        assert np.max(np.abs(dw)) < 1e-12


class TestStep:
    def test_hover_fixed_point(self):
        p, ss, tp = make_vehicle(), make_steady(), make_transient()
        x = dyn.hover_state()
        T_hover = np.full(4, p.weight / 4)
        from flipsim.actuators import rate_of_thrust
        x.motors, _ = rate_of_thrust(T_hover, ss)
        x2 = dyn.step(x, T_hover, p, ss, tp, 0.001)
        assert np.max(np.abs(x2.r - x.r)) < 1e-9
        assert np.max(np.abs(x2.v - x.v)) < 1e-9
        assert np.max(np.abs(x2.q - x.q)) < 1e-9
        assert np.max(np.abs(x2.omega - x.omega)) < 1e-9
        assert np.max(np.abs(x2.motors - x.motors)) < 1e-9

    def test_quaternion_norm_preserved(self):
        p, ss, tp = make_vehicle(), make_steady(), make_transient()
        x = dyn.QuadState(np.zeros(3), np.zeros(3), so3.quat_normalize(RNG.normal(size=4)),
                          RNG.normal(size=3) * 5, np.zeros(4))
        for _ in range(200):
            x = dyn.step(x, RNG.uniform(-1, 3, size=4), p, ss, tp, 0.001)
        assert abs(np.linalg.norm(x.q) - 1.0) < 1e-9

    def test_torque_free_energy_conservation(self):
        # tumbling with zero thrust: rotational kinetic energy is invariant
        p = make_vehicle()
        w = np.array([3.0, -7.0, 2.0])
        q = so3.quat_normalize(RNG.normal(size=4))
        r = np.zeros(3)
        v = np.zeros(3)
        e0 = 0.5 * w @ p.inertia @ w
        for _ in range(1000):
            r, v, q, w = dyn.rk4_rigid_body(r, v, q, w, np.array(0.0), np.zeros(3), p, 0.001)
        e1 = 0.5 * w @ p.inertia @ w
        assert abs(e1 - e0) / e0 < 1e-6

    def test_gyroscopic_term_does_no_work(self):
        p = make_vehicle()
        w = RNG.normal(size=3) * 4
        Iw = p.inertia @ w
        assert abs(w @ np.cross(w, Iw)) < 1e-12

    def test_rk4_convergence_order(self):
        # global error over a fixed window shrinks ~16x when dt halves
        p = make_vehicle()
        q0 = so3.quat_normalize(np.array([1.0, 0.2, -0.1, 0.3]))
        w0 = np.array([4.0, -3.0, 2.0])
        fc, tau = np.array(2.0), np.array([0.02, -0.01, 0.005])

        def integrate(dt, steps):
            r, v, q, w = np.zeros(3), np.zeros(3), q0.copy(), w0.copy()
            for _ in range(steps):
                r, v, q, w = dyn.rk4_rigid_body(r, v, q, w, fc, tau, p, dt)
            return np.concatenate([r, v, q, w])

        ref = integrate(0.0005 / 8, 1600)
        err1 = np.linalg.norm(integrate(0.002, 50) - ref)
        err2 = np.linalg.norm(integrate(0.001, 100) - ref)
        assert 12.0 < err1 / err2 < 20.0

    def test_deterministic_replay(self):
        p, ss, tp = make_vehicle(), make_steady(), make_transient()
        cmds = np.random.default_rng(5).uniform(-1, 4, size=(100, 4))

        def run():
            x = dyn.hover_state()
            for c in cmds:
                x = dyn.step(x, c, p, ss, tp, 0.001)
            return x

        a, b = run(), run()
        assert np.array_equal(a.r, b.r) and np.array_equal(a.q, b.q)
        assert np.array_equal(a.motors, b.motors)

    def test_non_finite_state_raises(self):
        p, ss, tp = make_vehicle(), make_steady(), make_transient()
        x = dyn.hover_state()
        x.v = np.array([np.nan, 0.0, 0.0])
        with pytest.raises(dyn.SimulationFault):
            dyn.step(x, np.zeros(4), p, ss, tp, 0.001)


class TestTraceCsv:
    def test_columns_and_determinism(self):
        row = {c: 0.5 for c in dyn.TRACE_COLUMNS}
        row["chart"] = "N"
        row["eta"] = 1
        text = dyn.trace_to_csv([row])
        assert text.splitlines()[0] == ",".join(dyn.TRACE_COLUMNS)
        assert text == dyn.trace_to_csv([dict(row)])
