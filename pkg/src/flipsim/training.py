"""PPO training of reference-modulation policies on batched environments.

The cost penalizes position, velocity (Huber), body-gravity misalignment,
body rates (Huber), non-committed posture, and action rate; reward is its
negation. Policy and value networks are plain numpy MLPs updated with
hand-written backprop and Adam under the clipped-surrogate objective.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import FullConfig, PpoConfig, RewardWeights
from .envs import ClosedLoopEnv, gravity_body, gravity_target
from .nn import Adam, Mlp
from .policy import OBS_DIM, PolicyWeights, init_policy, interpret_action, save_policy
from .trajectories import constant_reference

LOG_2PI = float(np.log(2.0 * np.pi))


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def huber(v: np.ndarray, delta: float) -> np.ndarray:
    """Huber loss of the Euclidean norm of v (quadratic core, linear tails)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    norm = np.linalg.norm(np.atleast_1d(v), axis=-1)
    return np.where(norm <= delta, 0.5 * norm * norm, delta * (norm - 0.5 * delta))


def step_cost(
    r: np.ndarray,
    v: np.ndarray,
    q: np.ndarray,
    w: np.ndarray,
    r_mod: np.ndarray,
    eta_cont: np.ndarray,
    r_mod_prev: np.ndarray,
    weights: RewardWeights,
    g_bd: np.ndarray,
    ppo: PpoConfig,
) -> np.ndarray:
    """Per-environment cost of the current state and action."""
    r = np.clip(np.asarray(r, dtype=float), -ppo.clip_state_r, ppo.clip_state_r)
    v = np.clip(np.asarray(v, dtype=float), -ppo.clip_state_v, ppo.clip_state_v)
    w = np.clip(np.asarray(w, dtype=float), -ppo.clip_state_w, ppo.clip_state_w)
    g_b = gravity_body(q)
    eta_cont = np.asarray(eta_cont, dtype=float)
    return (
        weights.w_r * np.sum(np.abs(r), axis=-1)
        + weights.w_v * huber(v, ppo.huber_delta)
        + weights.w_gb * np.linalg.norm(g_b - g_bd, axis=-1)
        + weights.w_w * huber(w, ppo.huber_delta)
        + weights.w_eta * (1.0 - eta_cont**2)
        + weights.w_da * np.linalg.norm(np.asarray(r_mod) - np.asarray(r_mod_prev), axis=-1)
    )


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
        gamma: float, lam: float, bootstrap: np.ndarray | None = None):
    """Generalized advantage estimation over (T, ...) sequences.

    dones marks transitions after which no value bootstraps; `bootstrap` is
    the value of the state following the last row (ignored when the last
    row is terminal). Returns (advantages, returns).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError("rewards, values, dones must have identical shapes")
    T = rewards.shape[0]
    if bootstrap is None:
        bootstrap = np.zeros(rewards.shape[1:])
    adv = np.zeros_like(rewards)
    carry = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        nonterm = ~dones[t]
        v_next = values[t + 1] if t < T - 1 else bootstrap
        delta = rewards[t] + gamma * v_next * nonterm - values[t]
        carry = delta + gamma * lam * nonterm * carry
        adv[t] = carry
    return adv, adv + values


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (B, OBS_DIM) float32
    actions: np.ndarray  # (B, 4) raw pre-clip samples
    logp: np.ndarray  # (B,)
    advantages: np.ndarray  # (B,)
    returns: np.ndarray  # (B,)

    def __post_init__(self):
        lengths = {a.shape[0] for a in (self.obs, self.actions, self.logp,
                                        self.advantages, self.returns)}
        if len(lengths) != 1:
            raise ValueError("buffer arrays must be aligned")
        if not np.all(np.isfinite(self.returns)) or not np.all(np.isfinite(self.obs)):
            raise ValueError("buffer contains non-finite entries")

    @property
    def size(self) -> int:
        return self.obs.shape[0]


def gaussian_logp(actions, mean, log_std):
    diff = actions - mean
    inv_var = np.exp(-2.0 * log_std)
    return -0.5 * np.sum(diff * diff * inv_var, axis=-1) - np.sum(
        log_std, axis=-1) - 0.5 * actions.shape[-1] * LOG_2PI


def make_value_net(cfg: FullConfig, rng: np.random.Generator, dtype=np.float32) -> Mlp:
    return Mlp((OBS_DIM, *cfg.policy.hidden, 1), rng=rng, head_gain=1.0, dtype=dtype)


def ppo_update(
    buffer: RolloutBuffer,
    weights: PolicyWeights,
    value_net: Mlp,
    opt_pi: Adam,
    opt_v: Adam,
    cfg: PpoConfig,
    shuffle_rng: np.random.Generator,
    lr: float,
) -> dict:
    """Clipped-surrogate epochs over shuffled minibatches; updates in place."""
    dtype = weights.net.dtype
    B = buffer.size
    adv = buffer.advantages.astype(np.float64)
    if cfg.adv_normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    adv = adv.astype(dtype)
    targets = (buffer.returns / cfg.value_scale).astype(dtype)
    obs = buffer.obs.astype(dtype)
    actions = buffer.actions.astype(dtype)
    logp_old = buffer.logp.astype(dtype)

    clip_fracs, kls, pi_losses, v_losses = [], [], [], []
    mb_size = B // cfg.minibatches
    for _ in range(cfg.update_epochs):
        perm = shuffle_rng.permutation(B)
        for m in range(cfg.minibatches):
            idx = perm[m * mb_size:(m + 1) * mb_size]
            o, a, lp0, ad, tg = obs[idx], actions[idx], logp_old[idx], adv[idx], targets[idx]
            nb = idx.size

            cache = []
            z = weights.net.forward(o, cache)
            mean = np.tanh(z)
            log_std = weights.log_std
            diff = a - mean
            inv_var = np.exp(-2.0 * log_std)
            logp = (-0.5 * np.sum(diff * diff * inv_var, axis=-1)
                    - np.sum(log_std) - 0.5 * a.shape[-1] * LOG_2PI)
            ratio = np.exp(logp - lp0)
            clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
            surr = np.minimum(ratio * ad, clipped * ad)
            pi_loss = -float(np.mean(surr))
            if not np.isfinite(pi_loss):
                raise TrainingDiverged("non-finite policy loss", {"pi_loss": pi_loss})

            # d(-surr)/dlogp: gradient flows only through the unclipped branch
            active = (ratio * ad) <= (clipped * ad)
            g_logp = np.where(active, -ad * ratio, 0.0) / nb
            g_mean = g_logp[:, None] * (diff * inv_var)
            g_z = (g_mean * (1.0 - mean * mean)).astype(dtype)
            gWs, gbs, _ = weights.net.backward(cache, g_z)
            g_log_std = np.sum(g_logp[:, None] * (diff * diff * inv_var - 1.0), axis=0)
            g_log_std = g_log_std.astype(dtype) - dtype(cfg.entropy_coef)

            cache_v = []
            v = value_net.forward(o, cache_v)[:, 0]
            err = v - tg
            v_loss = float(np.mean(err * err))
            if not np.isfinite(v_loss):
                raise TrainingDiverged("non-finite value loss", {"v_loss": v_loss})
            g_v = (cfg.value_coef * 2.0 * err / nb)[:, None].astype(dtype)
            gWs_v, gbs_v, _ = value_net.backward(cache_v, g_v)

            params = weights.net.params() + [weights.log_std]
            grads = gWs + gbs + [g_log_std]
            new_params = opt_pi.step(params, grads, lr=lr)
            weights.net.set_params(new_params[:-1])
            weights.log_std = new_params[-1]
            value_net.set_params(opt_v.step(value_net.params(), gWs_v + gbs_v, lr=lr))

            clip_fracs.append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)))
            kls.append(float(np.mean(lp0 - logp)))
            pi_losses.append(pi_loss)
            v_losses.append(v_loss)

    return {
        "clip_frac": float(np.mean(clip_fracs)),
        "approx_kl": float(np.mean(kls)),
        "pi_loss": float(np.mean(pi_losses)),
        "v_loss": float(np.mean(v_losses)),
    }


def reward_weights_for(transition: str, cfg: FullConfig) -> RewardWeights:
    return cfg.reward_nti if transition == "nti" else cfg.reward_itn


def train(
    transition: str,
    cfg: FullConfig,
    seed: int = 0,
    n_envs: int | None = None,
    n_epochs: int | None = None,
    out_dir: str | Path | None = None,
    progress=None,
) -> tuple[PolicyWeights, list[dict]]:
    """Train one transition's policy; returns weights and the training curve.

    Every epoch rolls one full episode in each of n_envs environments with
    freshly randomized actuator parameters and initial states, then runs
    the clipped-surrogate update. Deterministic for a fixed seed.
    """
    if transition not in ("nti", "itn"):
        raise ValueError("transition must be nti or itn")
    ppo = cfg.ppo
    n_envs = ppo.n_envs if n_envs is None else int(n_envs)
    n_epochs = ppo.n_epochs if n_epochs is None else int(n_epochs)
    steps = int(round(ppo.episode_duration / ppo.dt_env))
    rw = reward_weights_for(transition, cfg)
    g_bd = gravity_target(transition)

    master = np.random.SeedSequence([seed, 0x5EED])
    init_ss, act_ss, shuf_ss = master.spawn(3)
    init_rng = np.random.default_rng(init_ss)
    act_rng = np.random.default_rng(act_ss)
    shuffle_rng = np.random.default_rng(shuf_ss)

    weights = init_policy(cfg.policy, init_rng)
    value_net = make_value_net(cfg, init_rng)
    opt_pi = Adam(weights.net.params() + [weights.log_std], lr=ppo.learning_rate)
    opt_v = Adam(value_net.params(), lr=ppo.learning_rate)

    env = ClosedLoopEnv(cfg, n_envs, transition, constant_reference(),
                        policy_mode=True, randomize=True)

    curve: list[dict] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_every = max(1, n_epochs // 5)

    for epoch in range(n_epochs):
        env.reset(seed=np.random.SeedSequence([seed, 0xE9, epoch]))
        obs_buf = np.empty((steps, n_envs, OBS_DIM), dtype=np.float32)
        act_buf = np.empty((steps, n_envs, 4), dtype=np.float32)
        logp_buf = np.empty((steps, n_envs), dtype=np.float32)
        val_buf = np.empty((steps, n_envs))
        rew_buf = np.empty((steps, n_envs))
        r_mod_prev = np.zeros((n_envs, 3))

        for t in range(steps):
            obs = env.observe().astype(np.float32)
            z = weights.net.forward(obs)
            mean = np.tanh(z)
            std = np.exp(weights.log_std)
            raw = mean + std * act_rng.standard_normal(mean.shape).astype(np.float32)
            logp = gaussian_logp(raw, mean, weights.log_std)
            values = value_net.forward(obs)[:, 0].astype(float) * ppo.value_scale

            env.env_step(raw.astype(float))
            act = interpret_action(raw.astype(float), cfg.policy.action_limit)
            cost = step_cost(env.r, env.v, env.q, env.w, act.r_mod, act.eta_cont,
                             r_mod_prev, rw, g_bd, ppo)
            r_mod_prev = act.r_mod

            obs_buf[t] = obs
            act_buf[t] = raw
            logp_buf[t] = logp
            val_buf[t] = values
            rew_buf[t] = -cost

        dones = np.zeros((steps, n_envs), dtype=bool)
        dones[-1] = True  # fixed-horizon episodes end here
        adv, rets = gae(rew_buf, val_buf, dones, ppo.gamma, ppo.gae_lambda)
        buffer = RolloutBuffer(
            obs=obs_buf.reshape(-1, OBS_DIM),
            actions=act_buf.reshape(-1, 4),
            logp=logp_buf.reshape(-1),
            advantages=adv.reshape(-1),
            returns=rets.reshape(-1),
        )
        lr = ppo.learning_rate * (1.0 - epoch / n_epochs) if ppo.lr_anneal else ppo.learning_rate
        try:
            diag = ppo_update(buffer, weights, value_net, opt_pi, opt_v, ppo,
                              shuffle_rng, lr)
        except TrainingDiverged:
            if out_dir is not None:
                save_policy(out_dir / f"{transition}_diverged", weights)
            raise
        row = {
            "epoch": epoch,
            "mean_cost": float(-rew_buf.mean()),
            "clip_frac": diag["clip_frac"],
            "approx_kl": diag["approx_kl"],
            "pi_loss": diag["pi_loss"],
            "v_loss": diag["v_loss"],
        }
        curve.append(row)
        if progress is not None:
            progress(row)
        if out_dir is not None and ((epoch + 1) % checkpoint_every == 0 or epoch == n_epochs - 1):
            save_policy(out_dir / f"{transition}_epoch{epoch + 1:04d}", weights,
                        meta={"transition": transition, "epoch": epoch + 1, "seed": seed})

    if out_dir is not None:
        save_policy(out_dir / f"{transition}_final", weights,
                    meta={"transition": transition, "epochs": n_epochs, "seed": seed})
        (out_dir / f"{transition}_curve.csv").write_text(curve_to_csv(curve))
    return weights, curve


def curve_to_csv(curve: list[dict]) -> str:
    cols = ["epoch", "mean_cost", "clip_frac", "approx_kl", "pi_loss", "v_loss"]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for row in curve:
        buf.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                           for c in cols) + "\n")
    return buf.getvalue()
