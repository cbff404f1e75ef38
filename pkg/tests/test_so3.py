import numpy as np
import pytest

from flipsim import so3

RNG = np.random.default_rng(12345)


def random_unit_quat(n=1):
    q = RNG.normal(size=(n, 4))
    return so3.quat_normalize(q)


def random_unit_vec(n=1):
    v = RNG.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def quats_close(q1, q2, tol=1e-9):
    """Equality up to global sign (double cover)."""
    return min(np.max(np.abs(q1 - q2)), np.max(np.abs(q1 + q2))) < tol


class TestQuatMul:
    def test_basis_convention_ij_equals_k(self):
        i = np.array([0.0, 1.0, 0.0, 0.0])
        j = np.array([0.0, 0.0, 1.0, 0.0])
        k = np.array([0.0, 0.0, 0.0, 1.0])
        assert np.allclose(so3.quat_mul(i, j), k)

    def test_identity(self):
        q = random_unit_quat()[0]
        assert np.allclose(so3.quat_mul(q, so3.IDENTITY), q)
        assert np.allclose(so3.quat_mul(so3.IDENTITY, q), q)

    def test_half_angle_composition(self):
        c = np.cos(np.pi / 4)
        q = np.array([c, c, 0.0, 0.0])
        # two 90 deg x-rotations compose to a 180 deg x-rotation
        assert np.allclose(so3.quat_mul(q, q), [0.0, 1.0, 0.0, 0.0], atol=1e-12)

    def test_unit_closure(self):
        q1, q2 = random_unit_quat(2)
        out = so3.quat_mul(q1, q2)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-12


class TestQuatToRot:
    def test_identity(self):
        assert np.allclose(so3.quat_to_rot(so3.IDENTITY), np.eye(3))

    def test_elementary_x_rotation(self):
        c = np.cos(np.pi / 4)
        q = np.array([c, c, 0.0, 0.0])
        Rx90 = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        assert np.allclose(so3.quat_to_rot(q), Rx90, atol=1e-12)

    def test_orthonormality_over_samples(self):
        q = random_unit_quat(1000)
        R = so3.quat_to_rot(q)
        eye = np.broadcast_to(np.eye(3), R.shape)
        assert np.max(np.abs(np.swapaxes(R, -1, -2) @ R - eye)) < 1e-12
        assert np.max(np.abs(np.linalg.det(R) - 1.0)) < 1e-12

    def test_homomorphism(self):
        q1 = random_unit_quat(200)
        q2 = random_unit_quat(200)
        R12 = so3.quat_to_rot(so3.quat_mul(q1, q2))
        assert np.max(np.abs(R12 - so3.quat_to_rot(q1) @ so3.quat_to_rot(q2))) < 1e-9

    def test_non_unit_input_is_flagged_and_normalized(self):
        q = np.array([2.0, 0.0, 0.0, 0.0])
        R, renorm = so3.quat_to_rot_checked(q)
        assert bool(renorm)
        assert np.allclose(R, np.eye(3))
        _, clean = so3.quat_to_rot_checked(so3.IDENTITY)
        assert not bool(clean)

    def test_round_trip_with_rot_to_quat(self):
        q = random_unit_quat(500)
        back = so3.rot_to_quat(so3.quat_to_rot(q))
        for a, b in zip(q, back):
            assert quats_close(a, b, tol=1e-9)


class TestHopfProject:
    def test_identity_maps_to_up(self):
        assert np.allclose(so3.hopf_project(so3.IDENTITY), [0.0, 0.0, 1.0])

    def test_quaternion_i_maps_to_down(self):
        # i (x) k (x) (-i) = -k by hand algebra
        assert np.allclose(so3.hopf_project(np.array([0.0, 1.0, 0.0, 0.0])), [0, 0, -1])

    def test_equals_third_rotation_column(self):
        q = random_unit_quat(500)
        assert np.max(np.abs(so3.hopf_project(q) - so3.quat_to_rot(q)[..., :, 2])) < 1e-12

    def test_fiber_invariance_under_yaw(self):
        q = random_unit_quat(500)
        psi = RNG.uniform(-np.pi, np.pi, size=500)
        shifted = so3.quat_mul(q, so3.quat_yaw(psi))
        assert np.max(np.abs(so3.hopf_project(shifted) - so3.hopf_project(q))) < 1e-9


class TestCharts:
    def test_north_pole_is_identity(self):
        assert np.allclose(so3.chart_north(np.array([0.0, 0.0, 1.0])), so3.IDENTITY)

    def test_north_at_equator_x(self):
        q = so3.chart_north(np.array([1.0, 0.0, 0.0]))
        assert np.allclose(q, np.array([1.0, 0.0, 1.0, 0.0]) / np.sqrt(2))

    def test_south_pole_is_i(self):
        q = so3.chart_south(np.array([0.0, 0.0, -1.0]))
        assert np.allclose(q, [0.0, 1.0, 0.0, 0.0])

    def test_south_at_equator_x(self):
        q = so3.chart_south(np.array([1.0, 0.0, 0.0]))
        assert np.allclose(q, np.array([0.0, 1.0, 0.0, 1.0]) / np.sqrt(2))

    def test_round_trip_away_from_poles(self):
        s = random_unit_vec(2000)
        north = s[s[:, 2] > -0.99]
        south = s[s[:, 2] < 0.99]
        assert np.max(np.abs(so3.hopf_project(so3.chart_north(north)) - north)) < 1e-9
        assert np.max(np.abs(so3.hopf_project(so3.chart_south(south)) - south)) < 1e-9

    def test_pole_singularities_raise(self):
        with pytest.raises(ValueError):
            so3.chart_north(np.array([0.0, 0.0, -1.0]))
        with pytest.raises(ValueError):
            so3.chart_south(np.array([0.0, 0.0, 1.0]))

    def test_equator_continuity_identity(self):
        # chart_N(s) (x) yaw(psi) == chart_S(s) (x) yaw(psi + 2 atan2(a, b)) up to sign
        for _ in range(200):
            a, b = RNG.normal(size=2)
            n = np.hypot(a, b)
            s = np.array([a / n, b / n, 0.0])
            psi = RNG.uniform(-np.pi, np.pi)
            qn = so3.quat_mul(so3.chart_north(s), so3.quat_yaw(psi))
            offset = 2.0 * np.arctan2(s[0], s[1])
            qs = so3.quat_mul(so3.chart_south(s), so3.quat_yaw(psi + offset))
            assert quats_close(qn, qs, tol=1e-9)


class TestLogExp:
    def test_identity_is_zero(self):
        assert np.allclose(so3.log_so3(so3.IDENTITY), np.zeros(3))

    def test_elementary_rotation(self):
        c = np.cos(np.pi / 4)
        assert np.allclose(so3.log_so3(np.array([c, c, 0.0, 0.0])), [np.pi / 2, 0, 0])

    def test_exp_log_round_trip(self):
        q = random_unit_quat(1000)
        back = so3.exp_so3(so3.log_so3(q))
        err = np.minimum(
            np.max(np.abs(back - q), axis=-1), np.max(np.abs(back + q), axis=-1)
        )
        assert np.max(err) < 1e-9

    def test_angle_stays_in_principal_branch(self):
        q = random_unit_quat(1000)
        angles = np.linalg.norm(so3.log_so3(q), axis=-1)
        assert np.all(angles >= 0.0) and np.all(angles <= np.pi + 1e-12)

    def test_angle_pi_tie_break_deterministic(self):
        q = np.array([0.0, 0.0, -1.0, 0.0])  # 180 deg about -y
        e = so3.log_so3(q)
        # largest-magnitude axis component forced positive
        assert np.allclose(e, [0.0, np.pi, 0.0])

    def test_tiny_rotation_branch(self):
        e = np.array([1e-8, 0.0, 0.0])
        assert np.max(np.abs(so3.log_so3(so3.exp_so3(e)) - e)) < 1e-15


def forward_right_jacobian(e):
    """Closed-form SO(3) right Jacobian, used as the independent check."""
    t = np.linalg.norm(e)
    S = so3.skew(e)
    if t < 1e-8:
        return np.eye(3) - 0.5 * S + S @ S / 6.0
    return (
        np.eye(3)
        - (1.0 - np.cos(t)) / t**2 * S
        + (t - np.sin(t)) / t**3 * (S @ S)
    )


class TestInvRightJacobian:
    def test_zero_gives_identity(self):
        assert np.allclose(so3.inv_right_jacobian(np.zeros(3)), np.eye(3))

    def test_product_with_forward_jacobian(self):
        for _ in range(300):
            e = random_unit_vec()[0] * RNG.uniform(0.1, 3.0)
            prod = so3.inv_right_jacobian(e) @ forward_right_jacobian(e)
            assert np.max(np.abs(prod - np.eye(3))) < 1e-9

    def test_series_branch_near_zero(self):
        e = random_unit_vec()[0] * 1e-8
        assert np.max(np.abs(so3.inv_right_jacobian(e) - np.eye(3))) < 1e-7

    def test_series_and_closed_form_agree_at_switch(self):
        e = random_unit_vec()[0] * 2e-4
        J_closed = so3.inv_right_jacobian(e * 1.0)
        prod = J_closed @ forward_right_jacobian(e)
        assert np.max(np.abs(prod - np.eye(3))) < 1e-10

    def test_matches_finite_difference_of_exponential(self):
        # d/de exp(e) pulled back to the body frame is the right Jacobian;
        # compare its numeric inverse with the closed form
        for _ in range(20):
            e = random_unit_vec()[0] * RNG.uniform(0.2, 2.5)
            h = 1e-6
            J_fd = np.zeros((3, 3))
            q0 = so3.exp_so3(e)
            for k in range(3):
                d = np.zeros(3)
                d[k] = h
                qp = so3.exp_so3(e + d)
                qm = so3.exp_so3(e - d)
                # body-frame increment between perturbed exponentials
                J_fd[:, k] = (
                    so3.log_so3(so3.quat_mul(so3.quat_conj(q0), qp))
                    - so3.log_so3(so3.quat_mul(so3.quat_conj(q0), qm))
                ) / (2 * h)
            assert np.max(np.abs(np.linalg.inv(J_fd) - so3.inv_right_jacobian(e))) < 1e-5
