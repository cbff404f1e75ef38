"""Flat reference sources: hover, posture steps, minimum-snap, circles.

A reference source returns, for any time, the position through jerk, yaw and
yaw rate, and the thrust posture flag. Sources are immutable after
construction and safe to sample concurrently.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from math import factorial

import numpy as np


@dataclass
class FlatSample:
    r: np.ndarray
    v: np.ndarray
    a: np.ndarray
    j: np.ndarray
    psi: float
    psid: float
    eta: int


@dataclass
class PostureSchedule:
    """Thrust-posture switch times: entry (t, eta) applies for times >= t."""

    entries: list[tuple[float, int]]

    def __post_init__(self):
        times = [t for t, _ in self.entries]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("posture schedule times must be strictly increasing")
        if not self.entries:
            raise ValueError("posture schedule needs at least one entry")

    def eta_at(self, t: float) -> int:
        eta = self.entries[0][1]
        for time, value in self.entries:
            if t >= time:
                eta = value
            else:
                break
        return int(eta)


class ConstantReference:
    """Fixed position and yaw with a (possibly scheduled) posture."""

    def __init__(self, r0=np.zeros(3), psi0: float = 0.0, eta: int = 1,
                 schedule: PostureSchedule | None = None):
        self.r0 = np.asarray(r0, dtype=float)
        self.psi0 = float(psi0)
        self.schedule = schedule or PostureSchedule([(0.0, int(eta))])

    def sample(self, t: float) -> FlatSample:
        z = np.zeros(3)
        return FlatSample(self.r0.copy(), z, z.copy(), z.copy(), self.psi0, 0.0,
                          self.schedule.eta_at(t))


def constant_reference(r0=np.zeros(3), psi0: float = 0.0, eta: int = 1) -> ConstantReference:
    return ConstantReference(r0, psi0, eta)


def step_posture(eta_init: int, t_flip: float, r0=np.zeros(3), psi0: float = 0.0) -> ConstantReference:
    """Constant position with the posture flipped from t_flip onward."""
    if t_flip < 0:
        raise ValueError("t_flip must be nonnegative")
    if t_flip == 0.0:
        return ConstantReference(r0, psi0, schedule=PostureSchedule([(0.0, -int(eta_init))]))
    schedule = PostureSchedule([(0.0, int(eta_init)), (t_flip, -int(eta_init))])
    return ConstantReference(r0, psi0, schedule=schedule)


@dataclass
class PiecewisePolynomial:
    """Per-segment, per-axis polynomial coefficients (ascending powers)."""

    coeffs: np.ndarray  # (segments, 3, order+1)
    durations: np.ndarray
    psi: float = 0.0
    schedule: PostureSchedule = field(default_factory=lambda: PostureSchedule([(0.0, 1)]))

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.durations = np.asarray(self.durations, dtype=float)
        errs = self.knot_continuity_errors()
        if errs.size and np.max(errs[:, :4]) > 1e-9:
            raise ValueError("piecewise polynomial is not C^3 at interior knots")

    @property
    def total_duration(self) -> float:
        return float(np.sum(self.durations))

    def _locate(self, t: float) -> tuple[int, float]:
        t = min(max(t, 0.0), self.total_duration)
        acc = 0.0
        for s, T in enumerate(self.durations):
            if t <= acc + T or s == len(self.durations) - 1:
                return s, t - acc
            acc += T
        raise AssertionError

    def eval_derivative(self, t: float, order: int) -> np.ndarray:
        s, tau = self._locate(t)
        c = self.coeffs[s]
        n = c.shape[-1]
        out = np.zeros(3)
        for k in range(order, n):
            out += c[:, k] * (factorial(k) / factorial(k - order)) * tau ** (k - order)
        return out

    def sample(self, t: float) -> FlatSample:
        end = self.total_duration
        if t >= end:
            r = self.eval_derivative(end, 0)
            z = np.zeros(3)
            return FlatSample(r, z, z.copy(), z.copy(), self.psi, 0.0, self.schedule.eta_at(t))
        return FlatSample(
            self.eval_derivative(t, 0),
            self.eval_derivative(t, 1),
            self.eval_derivative(t, 2),
            self.eval_derivative(t, 3),
            self.psi,
            0.0,
            self.schedule.eta_at(t),
        )

    def knot_continuity_errors(self) -> np.ndarray:
        """Max mismatch of derivative orders 0..4 at each interior knot."""
        rows = []
        acc = 0.0
        for s in range(len(self.durations) - 1):
            acc += self.durations[s]
            rows.append([
                np.max(np.abs(self.eval_derivative(acc - 1e-15, k) - _eval_segment(self.coeffs[s + 1], 0.0, k)))
                for k in range(5)
            ])
        return np.asarray(rows)


def _eval_segment(c: np.ndarray, tau: float, order: int) -> np.ndarray:
    n = c.shape[-1]
    out = np.zeros(3)
    for k in range(order, n):
        out += c[:, k] * (factorial(k) / factorial(k - order)) * tau ** (k - order)
    return out


def _deriv_row(order: int, tau: float, n: int = 8) -> np.ndarray:
    row = np.zeros(n)
    for k in range(order, n):
        row[k] = (factorial(k) / factorial(k - order)) * tau ** (k - order)
    return row


def _snap_gram(T: float, n: int = 8) -> np.ndarray:
    Q = np.zeros((n, n))
    for k in range(4, n):
        for l in range(4, n):
            ck = factorial(k) / factorial(k - 4)
            cl = factorial(l) / factorial(l - 4)
            Q[k, l] = ck * cl * T ** (k + l - 7) / (k + l - 7)
    return Q


def min_snap(
    waypoints: np.ndarray,
    durations: tuple[float, float],
    schedule: PostureSchedule | None = None,
    gravity: float = 9.81,
    psi: float = 0.0,
) -> PiecewisePolynomial:
    """Two-segment, order-7 snap-minimal trajectory through three waypoints.

    Rest-to-rest boundary conditions, full continuity through snap at the
    interior knot, and the free-fall condition a(knot) = -g e3 so the
    commanded thrust crosses zero at the posture switch.
    """
    waypoints = np.asarray(waypoints, dtype=float)
    if waypoints.shape != (3, 3):
        raise ValueError("need exactly three 3d waypoints")
    T1, T2 = float(durations[0]), float(durations[1])
    if T1 <= 0 or T2 <= 0:
        raise ValueError("segment durations must be positive")
    if schedule is None:
        schedule = PostureSchedule([(0.0, 1), (T1, -1)])

    n = 8
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = _snap_gram(T1)
    Q[n:, n:] = _snap_gram(T2)

    free_fall_acc = np.array([0.0, 0.0, -gravity])
    coeffs = np.zeros((2, 3, n))
    for axis in range(3):
        rows, rhs = [], []

        def con(seg, order, tau, value):
            row = np.zeros(2 * n)
            row[seg * n:(seg + 1) * n] = _deriv_row(order, tau, n)
            rows.append(row)
            rhs.append(value)

        con(0, 0, 0.0, waypoints[0, axis])
        con(0, 0, T1, waypoints[1, axis])
        con(1, 0, 0.0, waypoints[1, axis])
        con(1, 0, T2, waypoints[2, axis])
        for order in (1, 2, 3):  # rest-to-rest ends
            con(0, order, 0.0, 0.0)
            con(1, order, T2, 0.0)
        for order in (1, 2, 3, 4):  # continuity through snap at the knot
            row = np.zeros(2 * n)
            row[:n] = _deriv_row(order, T1, n)
            row[n:] = -_deriv_row(order, 0.0, n)
            rows.append(row)
            rhs.append(0.0)
        con(0, 2, T1, free_fall_acc[axis])

        A = np.asarray(rows)
        b = np.asarray(rhs)
        m = A.shape[0]
        kkt = np.block([[Q, A.T], [A, np.zeros((m, m))]])
        try:
            sol = np.linalg.solve(kkt, np.concatenate([np.zeros(2 * n), b]))
        except np.linalg.LinAlgError as exc:
            raise ValueError("singular minimum-snap constraint system") from exc
        c = sol[: 2 * n]
        if np.max(np.abs(A @ c - b)) > 1e-8 * max(1.0, np.max(np.abs(b))):
            raise ValueError("minimum-snap constraints not satisfied")
        coeffs[0, axis] = c[:n]
        coeffs[1, axis] = c[n:]

    return PiecewisePolynomial(coeffs, np.array([T1, T2]), psi=psi, schedule=schedule)


def snap_cost(traj: PiecewisePolynomial) -> float:
    total = 0.0
    for s, T in enumerate(traj.durations):
        Q = _snap_gram(float(T), traj.coeffs.shape[-1])
        for axis in range(3):
            c = traj.coeffs[s, axis]
            total += float(c @ Q @ c)
    return total


class CircleReference:
    """Analytic circle at height z with consistent derivatives through jerk."""

    def __init__(self, radius: float, period: float, z: float = 0.0, eta: int = 1,
                 yaw_mode: str = "tangent", psi0: float = 0.0, center=np.zeros(2)):
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        if period <= 0:
            raise ValueError("period must be positive")
        if yaw_mode not in ("tangent", "fixed"):
            raise ValueError("yaw_mode must be tangent or fixed")
        self.radius = float(radius)
        self.rate = 2.0 * np.pi / float(period)
        self.z = float(z)
        self.eta = int(eta)
        self.yaw_mode = yaw_mode
        self.psi0 = float(psi0)
        self.center = np.asarray(center, dtype=float)

    def sample(self, t: float) -> FlatSample:
        w, R = self.rate, self.radius
        cwt, swt = np.cos(w * t), np.sin(w * t)
        r = np.array([self.center[0] + R * cwt, self.center[1] + R * swt, self.z])
        v = np.array([-R * w * swt, R * w * cwt, 0.0])
        a = np.array([-R * w * w * cwt, -R * w * w * swt, 0.0])
        j = np.array([R * w**3 * swt, -R * w**3 * cwt, 0.0])
        if self.yaw_mode == "tangent" and R > 0:
            psi = np.arctan2(v[1], v[0])
            psid = w
        else:
            psi, psid = self.psi0, 0.0
        return FlatSample(r, v, a, j, float(psi), float(psid), self.eta)


def circle_reference(radius: float, period: float, z: float = 0.0, eta: int = 1,
                     yaw_mode: str = "fixed") -> CircleReference:
    if radius == 0.0:
        return ConstantReference(np.array([0.0, 0.0, z]), 0.0, eta)
    return CircleReference(radius, period, z, eta, yaw_mode)


def samples_to_csv(source, times: np.ndarray) -> str:
    """Tidy CSV of a sampled reference (one row per time)."""
    cols = ["t", "rx", "ry", "rz", "vx", "vy", "vz", "ax", "ay", "az",
            "jx", "jy", "jz", "psi", "psid", "eta"]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for t in times:
        s = source.sample(float(t))
        vals = [t, *s.r, *s.v, *s.a, *s.j, s.psi, s.psid]
        buf.write(",".join(repr(float(v)) for v in vals) + f",{s.eta}\n")
    return buf.getvalue()


def load_trajectory_spec(path) -> PiecewisePolynomial:
    """Build a min-snap trajectory from a YAML spec file.

    Keys: waypoints (3x3), durations (2,), posture (list of [t, eta]),
    optional gravity and yaw.
    """
    import yaml

    with open(path) as fh:
        raw = yaml.safe_load(fh)
    schedule = PostureSchedule([(float(t), int(e)) for t, e in raw["posture"]])
    return min_snap(
        np.asarray(raw["waypoints"], dtype=float),
        tuple(float(d) for d in raw["durations"]),
        schedule=schedule,
        gravity=float(raw.get("gravity", 9.81)),
        psi=float(raw.get("yaw", 0.0)),
    )
