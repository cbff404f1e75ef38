"""Configuration loading: one YAML file describes vehicle, controller, and training."""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .actuators import RandomizationRanges, SteadyStateParams, TransientParams
from .allocation import AllocationConfig
from .control import ChartConfig, Gains
from .dynamics import QuadParams


@dataclass
class RateConfig:
    dt_dyn: float = 0.001
    position_every: int = 10


@dataclass
class PolicyConfig:
    obs_scale_r: float = 1.0
    obs_scale_v: float = 5.0
    obs_scale_w: float = 10.0
    action_limit: float = 2.0
    history: int = 3
    delay: float = 0.006
    hidden: tuple[int, ...] = (512, 512)
    init_log_std: float = float(np.log(0.25))


@dataclass
class RewardWeights:
    w_r: float = 5.0
    w_v: float = 0.0
    w_gb: float = 3.0
    w_w: float = 0.75
    w_eta: float = 0.1
    w_da: float = 0.25


@dataclass
class PpoConfig:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    update_epochs: int = 4
    minibatches: int = 20
    n_envs: int = 2048
    n_epochs: int = 750
    episode_duration: float = 3.0
    dt_env: float = 0.02
    huber_delta: float = 1.0
    value_scale: float = 100.0
    lr_anneal: bool = True
    adv_normalize: bool = True
    clip_state_r: float = 10.0
    clip_state_v: float = 50.0
    clip_state_w: float = 100.0


@dataclass
class ResetConfig:
    dr: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.1, 0.1]))
    sigma_v: float = 0.1
    sigma_w: float = 0.1
    yaw_range: float = np.pi
    tilt_range: float = 0.1


@dataclass
class EvalConfig:
    duration: float = 3.0
    cone_deg: float = 10.0
    n_rollouts: int = 20


@dataclass
class MinSnapConfig:
    dz: float = 0.45
    durations: tuple[float, float] = (1.0, 1.0)


@dataclass
class FullConfig:
    vehicle: QuadParams
    steady_state: SteadyStateParams
    transient: TransientParams
    randomization: RandomizationRanges
    allocation: AllocationConfig
    gains: Gains
    chart: ChartConfig
    rates: RateConfig
    policy: PolicyConfig
    ppo: PpoConfig
    reward_nti: RewardWeights
    reward_itn: RewardWeights
    reset: ResetConfig
    evaluation: EvalConfig
    min_snap: MinSnapConfig


def _vec4(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    return np.broadcast_to(arr, (4,)).copy()


def default_config_path() -> Path:
    return Path(importlib.resources.files("flipsim") / "configs" / "default.yaml")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> FullConfig:
    """Load the default config, optionally merged with a user file and overrides."""
    with open(default_config_path()) as fh:
        raw = yaml.safe_load(fh)
    if path is not None:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        raw = _merge(raw, user)
    if overrides:
        raw = _merge(raw, overrides)
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> FullConfig:
    veh = raw["vehicle"]
    inertia = np.asarray(veh["inertia"], dtype=float)
    if inertia.ndim == 1:
        inertia = np.diag(inertia)
    vehicle = QuadParams(
        mass=float(veh["mass"]),
        inertia=inertia,
        rotor_x=np.asarray(veh["rotor_x"], dtype=float),
        rotor_y=np.asarray(veh["rotor_y"], dtype=float),
        gravity=float(veh["gravity"]),
        cm_offset=np.asarray(veh.get("cm_offset", [0.0, 0.0, 0.0]), dtype=float),
    )

    ss = raw["steady_state"]
    steady = SteadyStateParams(
        ct2_pos=_vec4(ss["ct2_pos"]),
        ct1_pos=_vec4(ss["ct1_pos"]),
        ct0_pos=_vec4(ss["ct0_pos"]),
        ms_pos=_vec4(ss["ms_pos"]),
        ct2_neg=_vec4(ss["ct2_neg"]),
        ct1_neg=_vec4(ss["ct1_neg"]),
        ct0_neg=_vec4(ss["ct0_neg"]),
        ms_neg=_vec4(ss["ms_neg"]),
        omega_max=float(ss["omega_max"]),
        omega_min=float(ss["omega_min"]),
    )

    tr = raw["transient"]
    transient = TransientParams(
        alpha_pos=_vec4(tr["alpha_pos"]),
        alpha_neg=_vec4(tr["alpha_neg"]),
        omega_zero=_vec4(tr["omega_zero"]),
        dead_width=_vec4(tr["dead_width"]),
    )

    rz = raw["randomization"]
    randomization = RandomizationRanges(
        alpha_lo=float(rz["alpha_lo"]),
        alpha_hi=float(rz["alpha_hi"]),
        ct_lo=float(rz["ct_lo"]),
        ct_hi=float(rz["ct_hi"]),
        omega_zero_lo=float(rz["omega_zero_lo"]),
        omega_zero_hi=float(rz["omega_zero_hi"]),
        dead_width_lo=float(rz["dead_width_lo"]),
        dead_width_hi=float(rz["dead_width_hi"]),
    )

    al = raw["allocation"]
    if al.get("bounds", "auto") == "auto":
        t_min, t_max = steady.thrust_range()
    else:
        t_min = _vec4(al["bounds"][0])
        t_max = _vec4(al["bounds"][1])
    allocation = AllocationConfig(
        weights=np.asarray(al["weights"], dtype=float),
        tikhonov=float(al["tikhonov"]),
        iterations=int(al["iterations"]),
        step_rule=str(al.get("step_rule", "trace")),
        t_min=t_min,
        t_max=t_max,
        collective_headroom=float(al.get("collective_headroom", 0.75)),
    )

    gd = raw["gains"]
    gains = Gains(
        kr=np.asarray(gd["kr"], dtype=float),
        kv=np.asarray(gd["kv"], dtype=float),
        kR=np.asarray(gd["kR"], dtype=float),
        kw=np.asarray(gd["kw"], dtype=float),
    )

    ch = raw["chart"]
    chart = ChartConfig(
        hysteresis=float(ch["hysteresis"]),
        ab_eps=float(ch["ab_eps"]),
        ff_angle_limit=float(ch["ff_angle_limit"]),
    )

    rt = raw["rates"]
    rates = RateConfig(dt_dyn=float(rt["dt_dyn"]), position_every=int(rt["position_every"]))

    po = raw["policy"]
    policy = PolicyConfig(
        obs_scale_r=float(po["obs_scale_r"]),
        obs_scale_v=float(po["obs_scale_v"]),
        obs_scale_w=float(po["obs_scale_w"]),
        action_limit=float(po["action_limit"]),
        history=int(po["history"]),
        delay=float(po["delay"]),
        hidden=tuple(int(h) for h in po["hidden"]),
        init_log_std=float(po["init_log_std"]),
    )

    pp = raw["ppo"]
    ppo = PpoConfig(
        learning_rate=float(pp["learning_rate"]),
        gamma=float(pp["gamma"]),
        gae_lambda=float(pp["gae_lambda"]),
        clip_eps=float(pp["clip_eps"]),
        entropy_coef=float(pp["entropy_coef"]),
        value_coef=float(pp["value_coef"]),
        update_epochs=int(pp["update_epochs"]),
        minibatches=int(pp["minibatches"]),
        n_envs=int(pp["n_envs"]),
        n_epochs=int(pp["n_epochs"]),
        episode_duration=float(pp["episode_duration"]),
        dt_env=float(pp["dt_env"]),
        huber_delta=float(pp["huber_delta"]),
        value_scale=float(pp["value_scale"]),
        lr_anneal=bool(pp["lr_anneal"]),
        adv_normalize=bool(pp["adv_normalize"]),
        clip_state_r=float(pp["clip_state_r"]),
        clip_state_v=float(pp["clip_state_v"]),
        clip_state_w=float(pp["clip_state_w"]),
    )

    def weights_of(d: dict) -> RewardWeights:
        return RewardWeights(
            w_r=float(d["w_r"]),
            w_v=float(d["w_v"]),
            w_gb=float(d["w_gb"]),
            w_w=float(d["w_w"]),
            w_eta=float(d["w_eta"]),
            w_da=float(d["w_da"]),
        )

    rs = raw["reset"]
    reset = ResetConfig(
        dr=np.asarray(rs["dr"], dtype=float),
        sigma_v=float(rs["sigma_v"]),
        sigma_w=float(rs["sigma_w"]),
        yaw_range=float(rs["yaw_range"]),
        tilt_range=float(rs["tilt_range"]),
    )

    ev = raw["evaluation"]
    evaluation = EvalConfig(
        duration=float(ev["duration"]),
        cone_deg=float(ev["cone_deg"]),
        n_rollouts=int(ev["n_rollouts"]),
    )

    ms = raw["min_snap"]
    min_snap = MinSnapConfig(dz=float(ms["dz"]), durations=tuple(float(t) for t in ms["durations"]))

    return FullConfig(
        vehicle=vehicle,
        steady_state=steady,
        transient=transient,
        randomization=randomization,
        allocation=allocation,
        gains=gains,
        chart=chart,
        rates=rates,
        policy=policy,
        ppo=ppo,
        reward_nti=weights_of(raw["reward_weights"]["nti"]),
        reward_itn=weights_of(raw["reward_weights"]["itn"]),
        reset=reset,
        evaluation=evaluation,
        min_snap=min_snap,
    )
