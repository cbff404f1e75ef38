"""Per-rotor thrust/torque maps and motor-rate transients.

Steady state: T(w) = ct2 * w|w| + ct1 * w + ct0 with separate coefficient
sets for the (+) regime (w >= 0) and the (-) regime (w < 0), and reaction
torque tau_z = ms * T with a regime-dependent moment scale. Transients are
a piecewise first-order lag with a dead-zone switching rule around the
threshold omega_zero.

Coefficient fields are arrays broadcast against the rotor-rate arrays, so
per-rotor values are shape (4,) and a domain-randomized batch is (n, 4).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


@dataclass
class SteadyStateParams:
    ct2_pos: np.ndarray
    ct1_pos: np.ndarray
    ct0_pos: np.ndarray
    ms_pos: np.ndarray
    ct2_neg: np.ndarray
    ct1_neg: np.ndarray
    ct0_neg: np.ndarray
    ms_neg: np.ndarray
    omega_max: float = 1200.0
    omega_min: float = -1200.0

    def __post_init__(self):
        for name in ("ct2_pos", "ct1_pos", "ct0_pos", "ms_pos", "ct2_neg", "ct1_neg", "ct0_neg", "ms_neg"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.ct2_pos <= 0) or np.any(self.ct2_neg <= 0):
            raise ValueError("quadratic thrust coefficients must be positive in both regimes")
        self._check_monotone()

    def _check_monotone(self, points: int = 64):
        for lo, hi in ((0.0, self.omega_max), (self.omega_min, 0.0)):
            grid = np.linspace(lo, hi, points).reshape((points,) + (1,) * self.ct2_pos.ndim)
            t = thrust_of_rate(grid * np.ones_like(self.ct2_pos), self)
            if np.any(np.diff(t, axis=0) <= 0):
                raise ValueError("thrust model is not strictly increasing over a regime")

    def thrust_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Achievable thrust per rotor at the rate limits."""
        shape = np.broadcast_shapes(self.ct2_pos.shape, (4,))
        t_min = thrust_of_rate(np.broadcast_to(self.omega_min, shape), self)
        t_max = thrust_of_rate(np.broadcast_to(self.omega_max, shape), self)
        return t_min, t_max


@dataclass
class TransientParams:
    alpha_pos: np.ndarray
    alpha_neg: np.ndarray
    omega_zero: np.ndarray
    dead_width: np.ndarray

    def __post_init__(self):
        for name in ("alpha_pos", "alpha_neg", "omega_zero", "dead_width"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.alpha_pos <= 0) or np.any(self.alpha_neg <= 0):
            raise ValueError("slew rates must be positive")
        if np.any(self.dead_width < 0):
            raise ValueError("dead-zone width must be nonnegative")


@dataclass
class RandomizationRanges:
    alpha_lo: float = 0.75
    alpha_hi: float = 1.25
    ct_lo: float = 0.9
    ct_hi: float = 1.1
    omega_zero_lo: float = -30.0
    omega_zero_hi: float = 30.0
    dead_width_lo: float = 20.0
    dead_width_hi: float = 80.0

    def __post_init__(self):
        for lo, hi in ((self.alpha_lo, self.alpha_hi), (self.ct_lo, self.ct_hi),
                       (self.omega_zero_lo, self.omega_zero_hi),
                       (self.dead_width_lo, self.dead_width_hi)):
            if lo > hi:
                raise ValueError("randomization range has lower > upper")


def _select(omega, pos, neg):
    return np.where(omega >= 0.0, pos, neg)


def thrust_of_rate(omega: np.ndarray, p: SteadyStateParams, rotor: int | None = None) -> np.ndarray:
    """Steady-state thrust at rotor rate omega (regime picked by sign)."""
    omega = np.asarray(omega, dtype=float)
    sl = slice(None) if rotor is None else rotor
    ct2 = _select(omega, p.ct2_pos[..., sl], p.ct2_neg[..., sl])
    ct1 = _select(omega, p.ct1_pos[..., sl], p.ct1_neg[..., sl])
    ct0 = _select(omega, p.ct0_pos[..., sl], p.ct0_neg[..., sl])
    return ct2 * omega * np.abs(omega) + ct1 * omega + ct0


def torque_of_rate(omega: np.ndarray, p: SteadyStateParams, rotor: int | None = None) -> np.ndarray:
    """Reaction torque about body z: moment scale times thrust."""
    omega = np.asarray(omega, dtype=float)
    sl = slice(None) if rotor is None else rotor
    ms = _select(omega, p.ms_pos[..., sl], p.ms_neg[..., sl])
    return ms * thrust_of_rate(omega, p, rotor)


def rate_of_thrust(t_d: np.ndarray, p: SteadyStateParams, rotor: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rotor rate achieving thrust t_d; inverse of thrust_of_rate.

    The regime is picked by comparing t_d against the zero-rate thrusts; in
    the ambiguous band between them the sign of t_d decides (ties take (+)).
    Returns (omega, clipped) where clipped marks demands outside the
    achievable range that were clamped to it.
    """
    t_d = np.asarray(t_d, dtype=float)
    sl = slice(None) if rotor is None else rotor
    ct2p, ct1p, ct0p = p.ct2_pos[..., sl], p.ct1_pos[..., sl], p.ct0_pos[..., sl]
    ct2n, ct1n, ct0n = p.ct2_neg[..., sl], p.ct1_neg[..., sl], p.ct0_neg[..., sl]

    t_lo = ct2n * p.omega_min * np.abs(p.omega_min) + ct1n * p.omega_min + ct0n
    t_hi = ct2p * p.omega_max * np.abs(p.omega_max) + ct1p * p.omega_max + ct0p
    clipped = (t_d < t_lo) | (t_d > t_hi)
    t = np.clip(t_d, t_lo, t_hi)

    use_pos = (t >= ct0p) | ((t >= ct0n) & (t >= 0.0))
    # (+) regime: ct2 w^2 + ct1 w + (ct0 - t) = 0, root with w >= 0
    disc_p = np.sqrt(np.maximum(ct1p * ct1p + 4.0 * ct2p * (t - ct0p), 0.0))
    w_pos = (-ct1p + disc_p) / (2.0 * ct2p)
    # (-) regime: -ct2 w^2 + ct1 w + (ct0 - t) = 0, root with w < 0
    disc_n = np.sqrt(np.maximum(ct1n * ct1n - 4.0 * ct2n * (t - ct0n), 0.0))
    w_neg = (ct1n - disc_n) / (2.0 * ct2n)

    omega = np.where(use_pos, np.maximum(w_pos, 0.0), np.minimum(w_neg, 0.0))
    return omega, clipped


def motor_step(omega: np.ndarray, omega_d: np.ndarray, t: TransientParams, dt: float) -> np.ndarray:
    """One explicit-Euler step of the piecewise first-order motor lag.

    The switching predicate (evaluated on the pre-update rate) retargets the
    lag at the threshold while the commanded rate lies across the dead zone,
    modeling the loss of authority during reversal.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _motor_step_arrays(
        np.asarray(omega, dtype=float), np.asarray(omega_d, dtype=float),
        t.alpha_pos, t.alpha_neg, t.omega_zero, t.dead_width, dt,
    )


def _motor_step_arrays(omega, omega_d, alpha_pos, alpha_neg, omega_zero, dead_width, dt):
    switching = ((omega > omega_zero + dead_width) & (omega_d < omega_zero)) | (
        (omega < omega_zero - dead_width) & (omega_d > omega_zero)
    )
    alpha = np.where(omega >= omega_zero, alpha_pos, alpha_neg)
    omega_set = np.where(switching, omega_zero, omega_d)
    return omega + alpha * (omega_set - omega) * dt


def sample_params(
    rng: np.random.Generator,
    steady: SteadyStateParams,
    transient: TransientParams,
    ranges: RandomizationRanges,
) -> tuple[SteadyStateParams, TransientParams]:
    """Draw one domain-randomized parameter set around the nominal values.

    Slew rates and thrust coefficients get independent multiplicative draws
    per rotor; threshold and dead-zone width are drawn from their absolute
    ranges.
    """
    def mult(nom, lo, hi):
        return rng.uniform(lo, hi, size=np.broadcast_shapes(np.shape(nom), (4,))) * nom

    steady_r = replace(
        steady,
        ct2_pos=mult(steady.ct2_pos, ranges.ct_lo, ranges.ct_hi),
        ct1_pos=mult(steady.ct1_pos, ranges.ct_lo, ranges.ct_hi),
        ct0_pos=mult(steady.ct0_pos, ranges.ct_lo, ranges.ct_hi),
        ct2_neg=mult(steady.ct2_neg, ranges.ct_lo, ranges.ct_hi),
        ct1_neg=mult(steady.ct1_neg, ranges.ct_lo, ranges.ct_hi),
        ct0_neg=mult(steady.ct0_neg, ranges.ct_lo, ranges.ct_hi),
    )
    transient_r = replace(
        transient,
        alpha_pos=mult(transient.alpha_pos, ranges.alpha_lo, ranges.alpha_hi),
        alpha_neg=mult(transient.alpha_neg, ranges.alpha_lo, ranges.alpha_hi),
        omega_zero=rng.uniform(ranges.omega_zero_lo, ranges.omega_zero_hi, size=(4,)),
        dead_width=rng.uniform(ranges.dead_width_lo, ranges.dead_width_hi, size=(4,)),
    )
    return steady_r, transient_r


@dataclass
class FitResult:
    params: SteadyStateParams
    residual_rms_pos: float
    residual_rms_neg: float
    fitted_pos: bool
    fitted_neg: bool


def fit_steady_state(samples: np.ndarray, nominal: SteadyStateParams | None = None) -> FitResult:
    """Least-squares fit of the per-regime thrust and moment-scale model.

    samples: array of rows (omega, thrust, torque). Each regime needs at
    least three samples; a regime without them keeps the nominal values and
    is flagged unfitted. Fitted coefficients are applied to all four rotors.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 3:
        raise ValueError("samples must be rows of (omega, thrust, torque)")
    if nominal is None:
        nominal = SteadyStateParams(
            ct2_pos=np.full(4, 1e-5), ct1_pos=np.zeros(4), ct0_pos=np.zeros(4), ms_pos=np.full(4, 0.015),
            ct2_neg=np.full(4, 1e-5), ct1_neg=np.zeros(4), ct0_neg=np.zeros(4), ms_neg=np.full(4, 0.015),
        )

    def fit_regime(mask):
        om, th, tq = samples[mask].T
        A = np.stack([om * np.abs(om), om, np.ones_like(om)], axis=1)
        if np.linalg.matrix_rank(A) < 3:
            raise ValueError("rank-deficient design matrix for thrust fit")
        coef, _, _, _ = np.linalg.lstsq(A, th, rcond=None)
        t_hat = A @ coef
        rms = float(np.sqrt(np.mean((th - t_hat) ** 2)))
        denom = float(t_hat @ t_hat)
        if denom == 0.0:
            raise ValueError("degenerate thrust predictions; cannot fit moment scale")
        ms = float(tq @ t_hat / denom)
        return coef, ms, rms

    out = replace(nominal)
    pos_mask = samples[:, 0] >= 0.0
    neg_mask = ~pos_mask
    fitted_pos = int(pos_mask.sum()) >= 3
    fitted_neg = int(neg_mask.sum()) >= 3
    rms_pos = rms_neg = float("nan")
    if fitted_pos:
        (c2, c1, c0), ms, rms_pos = fit_regime(pos_mask)
        out = replace(out, ct2_pos=np.full(4, c2), ct1_pos=np.full(4, c1),
                      ct0_pos=np.full(4, c0), ms_pos=np.full(4, ms))
    if fitted_neg:
        (c2, c1, c0), ms, rms_neg = fit_regime(neg_mask)
        out = replace(out, ct2_neg=np.full(4, c2), ct1_neg=np.full(4, c1),
                      ct0_neg=np.full(4, c0), ms_neg=np.full(4, ms))
    return FitResult(out, rms_pos, rms_neg, fitted_pos, fitted_neg)


def load_fit_samples(path: str | Path) -> np.ndarray:
    """Read (omega, thrust, torque) rows from a CSV with that header."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [(float(r["omega"]), float(r["thrust"]), float(r["torque"])) for r in reader]
    if not rows:
        raise ValueError(f"no samples in {path}")
    return np.asarray(rows, dtype=float)
