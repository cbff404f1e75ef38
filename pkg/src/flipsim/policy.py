"""Policy runtime: observations, stochastic MLP head, action semantics.

The observation is 30 reals: position, velocity, flattened rotation matrix,
body rates (each divided by its configured scale), and the last three
actions. Actions are 4 channels: a position-reference modulation (scaled to
the configured limit) and a continuous posture channel whose sign selects
the thrust posture.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import so3
from .config import PolicyConfig
from .nn import Mlp

OBS_DIM = 30
ACT_DIM = 4


@dataclass
class PolicyWeights:
    net: Mlp
    log_std: np.ndarray

    def copy(self) -> "PolicyWeights":
        return PolicyWeights(self.net.copy(), self.log_std.copy())


def init_policy(cfg: PolicyConfig, rng: np.random.Generator, dtype=np.float32) -> PolicyWeights:
    widths = (OBS_DIM, *cfg.hidden, ACT_DIM)
    # small head keeps the initial action mean near zero
    net = Mlp(widths, rng=rng, head_gain=0.01, dtype=dtype)
    return PolicyWeights(net, np.full(ACT_DIM, cfg.init_log_std, dtype=dtype))


def build_observation(r, v, q, w, history: np.ndarray, cfg: PolicyConfig) -> np.ndarray:
    """Deterministic observation encoding; broadcasts over a batch.

    history is the last 3 actions, newest last, shape (..., 3, 4), already
    clipped to [-1, 1] (zero-padded at episode start).
    """
    r = np.asarray(r, dtype=float)
    history = np.asarray(history, dtype=float)
    if history.shape[-2:] != (cfg.history, ACT_DIM):
        raise ValueError(f"history must have shape (..., {cfg.history}, {ACT_DIM})")
    R = so3.quat_to_rot(q)
    batch = r.shape[:-1]
    return np.concatenate(
        [
            r / cfg.obs_scale_r,
            np.asarray(v, dtype=float) / cfg.obs_scale_v,
            R.reshape(batch + (9,)),
            np.asarray(w, dtype=float) / cfg.obs_scale_w,
            history.reshape(batch + (cfg.history * ACT_DIM,)),
        ],
        axis=-1,
    )


def decode_observation(obs: np.ndarray, cfg: PolicyConfig):
    """Recover (r, v, R, w, history) from an encoded observation."""
    obs = np.asarray(obs, dtype=float)
    batch = obs.shape[:-1]
    r = obs[..., 0:3] * cfg.obs_scale_r
    v = obs[..., 3:6] * cfg.obs_scale_v
    R = obs[..., 6:15].reshape(batch + (3, 3))
    w = obs[..., 15:18] * cfg.obs_scale_w
    hist = obs[..., 18:30].reshape(batch + (cfg.history, ACT_DIM))
    return r, v, R, w, hist


def policy_forward(obs: np.ndarray, weights: PolicyWeights) -> tuple[np.ndarray, np.ndarray]:
    """Action mean (tanh-squashed) and state-independent log standard deviation."""
    mean = np.tanh(weights.net.forward(obs))
    log_std = np.broadcast_to(weights.log_std, mean.shape)
    return mean, log_std


@dataclass
class InterpretedAction:
    r_mod: np.ndarray  # meters, clipped to the per-axis limit
    eta: np.ndarray  # +1 / -1
    eta_cont: np.ndarray  # clipped continuous posture channel
    clipped: np.ndarray  # raw channels clipped to [-1, 1]


def interpret_action(raw: np.ndarray, limit: float) -> InterpretedAction:
    """Map raw action channels to a reference modulation and posture.

    The posture is the sign of the fourth channel (zero counts as +1); the
    clipped continuous value is kept for the posture reward term. Idempotent
    on already-clipped inputs.
    """
    raw = np.asarray(raw, dtype=float)
    clipped = np.clip(raw, -1.0, 1.0)
    r_mod = clipped[..., :3] * float(limit)
    eta = np.where(clipped[..., 3] >= 0.0, 1.0, -1.0)
    return InterpretedAction(r_mod, eta, clipped[..., 3], clipped)


def push_history(history: np.ndarray, action_clipped: np.ndarray) -> np.ndarray:
    """FIFO of the last 3 actions: drop the oldest, append the newest."""
    history = np.asarray(history, dtype=float)
    return np.concatenate([history[..., 1:, :], action_clipped[..., None, :]], axis=-2)


def delayed_apply(actions: np.ndarray, delay_steps: int, initial: np.ndarray | None = None) -> np.ndarray:
    """Shift an action sequence by an integer number of steps (zero-order hold).

    The action computed at step t takes effect at t + delay_steps; before the
    first one matures, `initial` (default zeros) holds.
    """
    actions = np.asarray(actions, dtype=float)
    if delay_steps < 0:
        raise ValueError("delay must be nonnegative")
    if delay_steps == 0:
        return actions.copy()
    if initial is None:
        initial = np.zeros_like(actions[0])
    head = np.broadcast_to(initial, (delay_steps,) + actions.shape[1:])
    return np.concatenate([head, actions[:-delay_steps]], axis=0)


def delay_to_steps(delay: float, dt: float) -> int:
    steps = delay / dt
    if abs(steps - round(steps)) > 1e-9:
        raise ValueError("delay must be a multiple of the dynamics timestep")
    return int(round(steps))


def save_policy(stem: str | Path, weights: PolicyWeights, meta: dict | None = None):
    """Write weights as flat little-endian float32 plus a JSON shape sidecar."""
    stem = Path(stem)
    order = []
    blobs = []
    for i, (W, b) in enumerate(zip(weights.net.Ws, weights.net.bs)):
        order.append({"name": f"W{i}", "shape": list(W.shape)})
        blobs.append(W.astype("<f4").ravel())
        order.append({"name": f"b{i}", "shape": list(b.shape)})
        blobs.append(b.astype("<f4").ravel())
    order.append({"name": "log_std", "shape": list(weights.log_std.shape)})
    blobs.append(weights.log_std.astype("<f4").ravel())
    stem.with_suffix(".bin").write_bytes(np.concatenate(blobs).tobytes())
    sidecar = {
        "dtype": "<f4",
        "widths": list(weights.net.widths),
        "params": order,
    }
    if meta:
        sidecar["meta"] = meta
    stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))


def load_policy(stem: str | Path, dtype=np.float32) -> PolicyWeights:
    stem = Path(stem)
    sidecar = json.loads(stem.with_suffix(".json").read_text())
    flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f4")
    widths = tuple(sidecar["widths"])
    net = Mlp(widths, dtype=dtype)
    offset = 0
    arrays = {}
    for entry in sidecar["params"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arrays[entry["name"]] = flat[offset:offset + size].reshape(entry["shape"]).astype(dtype)
        offset += size
    if offset != flat.size:
        raise ValueError("weight blob size does not match the sidecar")
    net.Ws = [arrays[f"W{i}"] for i in range(len(widths) - 1)]
    net.bs = [arrays[f"b{i}"] for i in range(len(widths) - 1)]
    return PolicyWeights(net, arrays["log_std"])
