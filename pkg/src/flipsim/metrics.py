"""Rollout metrics: settling time into the gravity cone and position errors."""

from __future__ import annotations

import numpy as np

UNSETTLED = float("inf")


def settling_time(times: np.ndarray, g_b: np.ndarray, g_bd: np.ndarray,
                  cone_deg: float) -> float:
    """Earliest time from which the body gravity direction stays in the cone.

    g_b is (T, 3) sampled at `times`; the criterion is enter-and-remain.
    Returns inf when the trace never permanently enters.
    """
    times = np.asarray(times, dtype=float)
    g_b = np.asarray(g_b, dtype=float)
    if g_b.ndim != 2 or g_b.shape[0] != times.shape[0] or times.size == 0:
        raise ValueError("need a nonempty (T, 3) trace aligned with times")
    cos_angle = np.clip(g_b @ np.asarray(g_bd, dtype=float), -1.0, 1.0)
    inside = cos_angle >= np.cos(np.radians(cone_deg))
    if inside.all():
        return 0.0
    last_out = int(np.where(~inside)[0][-1])
    if last_out == len(times) - 1:
        return UNSETTLED
    return float(times[last_out + 1])


def position_metrics(r: np.ndarray, origin: np.ndarray | None = None):
    """Pooled position RMSE about the origin and per-axis max deviations."""
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] == 0:
        raise ValueError("need a nonempty (T, 3) position trace")
    if origin is None:
        origin = np.zeros(3)
    d = r - np.asarray(origin, dtype=float)
    rmse = float(np.sqrt(np.mean(np.sum(d * d, axis=-1))))
    max_dev = np.max(np.abs(d), axis=0)
    return rmse, max_dev
