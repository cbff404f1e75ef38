"""Wrench-to-thrust allocation.

Direct inversion of the mixer for the unconstrained case, and a weighted
least-squares allocation with Tikhonov regularization solved as a
box-constrained QP by fixed-iteration projected gradient descent:

    min_T 1/2 ||W (M T - u)||^2 + lam/2 ||T - T_prev||^2
        = min_T 1/2 T' H T + f' T + const,   T_min <= T <= T_max

with H = M' W' W M + lam I and f = -(M' W' W u + lam T_prev).

Everything broadcasts over leading batch axes: a single problem uses
M (4, 4) and u (4,), a batch uses (n, 4, 4) and (n, 4).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AllocationConfig:
    weights: np.ndarray = field(default_factory=lambda: np.array([1.0, 10.0, 10.0, 1.0]))
    tikhonov: float = 1e-3
    iterations: int = 50
    step_rule: str = "trace"  # trace | power
    t_min: np.ndarray = field(default_factory=lambda: np.full(4, -10.0))
    t_max: np.ndarray = field(default_factory=lambda: np.full(4, 20.0))
    collective_headroom: float = 0.75

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.t_min = np.asarray(self.t_min, dtype=float)
        self.t_max = np.asarray(self.t_max, dtype=float)
        if self.tikhonov < 0:
            raise ValueError("tikhonov weight must be nonnegative")
        if self.iterations < 1:
            raise ValueError("need at least one PGD iteration")
        if np.any(self.t_min >= self.t_max):
            raise ValueError("t_min must be below t_max componentwise")
        if np.any(self.weights == 0.0):
            raise ValueError("weighting matrix must be nonsingular")


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    t_min: np.ndarray
    t_max: np.ndarray


def direct_inversion(u: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Unconstrained thrusts T = M^-1 u."""
    u = np.asarray(u, dtype=float)
    try:
        return np.linalg.solve(M, u[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ValueError("mixer matrix is singular") from exc


def build_qp(u: np.ndarray, M: np.ndarray, cfg: AllocationConfig, t_prev: np.ndarray) -> QpProblem:
    u = np.asarray(u, dtype=float)
    M = np.asarray(M, dtype=float)
    t_prev = np.asarray(t_prev, dtype=float)
    WM = cfg.weights[:, None] * M
    H = np.swapaxes(WM, -1, -2) @ WM + cfg.tikhonov * np.eye(4)
    wu = cfg.weights * u
    f = -(np.swapaxes(WM, -1, -2) @ wu[..., None])[..., 0] - cfg.tikhonov * t_prev
    return QpProblem(H, f, cfg.t_min, cfg.t_max)


def _step_size(H: np.ndarray, rule: str) -> np.ndarray:
    if rule == "trace":
        L = np.trace(H, axis1=-2, axis2=-1)
    elif rule == "power":
        # a few power iterations give a tight largest-eigenvalue estimate
        v = np.ones(H.shape[:-1])
        for _ in range(12):
            v = (H @ v[..., None])[..., 0]
            v = v / np.linalg.norm(v, axis=-1, keepdims=True)
        L = np.einsum("...i,...ij,...j->...", v, H, v) * 1.01
    else:
        raise ValueError(f"unknown step rule {rule!r}")
    return 1.0 / L


def pgd_solve(p: QpProblem, iterations: int, t_init: np.ndarray | None = None,
              step_rule: str = "trace") -> np.ndarray:
    """Fixed-iteration projected gradient descent on the box QP.

    Every iterate is projected into the box, so the output is always
    feasible; with step 1/L the objective is non-increasing.
    """
    gamma = _step_size(p.H, step_rule)[..., None]
    if t_init is None:
        t = np.clip(np.zeros_like(p.f), p.t_min, p.t_max)
    else:
        t = np.clip(np.asarray(t_init, dtype=float), p.t_min, p.t_max)
    for _ in range(iterations):
        grad = (p.H @ t[..., None])[..., 0] + p.f
        t = np.clip(t - gamma * grad, p.t_min, p.t_max)
    return t


def qp_objective(p: QpProblem, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return 0.5 * np.einsum("...i,...ij,...j->...", t, p.H, t) + np.einsum("...i,...i->...", p.f, t)


def allocate(u: np.ndarray, M: np.ndarray, cfg: AllocationConfig,
             t_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve the allocation QP warm-started at t_prev.

    Returns (thrusts, saturation) where saturation is +1 / -1 / 0 per rotor
    for active upper / lower / inactive bounds at the solution.
    """
    p = build_qp(u, M, cfg, t_prev)
    t = pgd_solve(p, cfg.iterations, t_init=t_prev, step_rule=cfg.step_rule)
    sat = np.zeros_like(t, dtype=int)
    sat[t >= cfg.t_max - 1e-9] = 1
    sat[t <= cfg.t_min + 1e-9] = -1
    return t, sat
