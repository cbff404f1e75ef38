"""Experiment harness: seeded multi-rollout evaluation and method comparison."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .config import FullConfig
from .envs import ClosedLoopEnv, gravity_target
from .metrics import UNSETTLED, position_metrics, settling_time
from .policy import PolicyWeights, policy_forward
from .trajectories import PostureSchedule, constant_reference, min_snap, step_posture

METHODS = ("step", "step+oca", "minsnap+oca", "policy+oca")


@dataclass
class ExperimentConfig:
    method: str
    transition: str  # nti | itn
    n_rollouts: int = 20
    seed: int = 0
    duration: float = 3.0
    cone_deg: float = 10.0
    ideal: bool = False  # zero-spread initial conditions, nominal actuators

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.transition not in ("nti", "itn"):
            raise ValueError("transition must be nti or itn")
        if self.n_rollouts < 1:
            raise ValueError("need at least one rollout")


@dataclass
class MetricsReport:
    method: str
    transition: str
    n_rollouts: int
    seed: int
    duration: float
    cone_deg: float
    rmse_pooled: float
    rmse_mean: float
    settling: np.ndarray  # per rollout, inf when unsettled
    rmse: np.ndarray  # per rollout
    max_dev: np.ndarray  # (n, 3)
    rows: list[dict] = field(default_factory=list)

    @property
    def settling_mean(self) -> float:
        settled = self.settling[np.isfinite(self.settling)]
        return float(settled.mean()) if settled.size else UNSETTLED

    @property
    def n_settled(self) -> int:
        return int(np.isfinite(self.settling).sum())

    def summary(self) -> dict:
        return {
            "method": self.method,
            "transition": self.transition,
            "n": self.n_rollouts,
            "seed": self.seed,
            "rmse_pooled": self.rmse_pooled,
            "rmse_mean": self.rmse_mean,
            "t_settle_mean": self.settling_mean,
            "n_settled": self.n_settled,
            "max_dev_x": float(self.max_dev[:, 0].max()),
            "max_dev_y": float(self.max_dev[:, 1].max()),
            "max_dev_z": float(self.max_dev[:, 2].max()),
        }


def build_reference(method: str, transition: str, cfg: FullConfig):
    eta_init = -1 if transition == "itn" else 1
    if method in ("step", "step+oca"):
        return step_posture(eta_init, 0.0)
    if method == "minsnap+oca":
        dz = cfg.min_snap.dz
        waypoints = np.array([[0, 0, 0], [0, 0, dz], [0, 0, 0.0]])
        schedule = PostureSchedule([(0.0, eta_init), (cfg.min_snap.durations[0], -eta_init)])
        return min_snap(waypoints, cfg.min_snap.durations, schedule=schedule,
                        gravity=cfg.vehicle.gravity)
    if method == "policy+oca":
        return constant_reference(eta=eta_init)
    raise ValueError(f"unknown method {method!r}")


def run_experiment(exp: ExperimentConfig, cfg: FullConfig,
                   weights: PolicyWeights | None = None) -> MetricsReport:
    """Seeded parallel rollouts of one method; all metrics from dense traces."""
    if exp.method == "policy+oca" and weights is None:
        raise ValueError("policy method needs trained weights")
    reference = build_reference(exp.method, exp.transition, cfg)
    env = ClosedLoopEnv(
        cfg, exp.n_rollouts, exp.transition, reference,
        policy_mode=exp.method == "policy+oca",
        allocator="direct" if exp.method == "step" else "qp",
        randomize=not exp.ideal,
        record_metrics=True,
    )
    env.reset(seed=exp.seed, ideal=exp.ideal)

    if exp.method == "policy+oca":
        def policy_fn(obs):
            mean, _ = policy_forward(obs.astype(np.float32), weights)
            return mean.astype(float)
    else:
        policy_fn = None
    env.run(exp.duration, policy_fn=policy_fn)

    times, r_trace, gb_trace = env.metrics_arrays()
    g_bd = gravity_target(exp.transition)
    n = exp.n_rollouts
    settling = np.empty(n)
    rmse = np.empty(n)
    max_dev = np.empty((n, 3))
    rows = []
    for i in range(n):
        settling[i] = settling_time(times, gb_trace[:, i, :], g_bd, exp.cone_deg)
        rmse[i], max_dev[i] = position_metrics(r_trace[:, i, :])
        rows.append({
            "rollout": i,
            "rmse": float(rmse[i]),
            "t_settle": float(settling[i]),
            "max_dev_x": float(max_dev[i, 0]),
            "max_dev_y": float(max_dev[i, 1]),
            "max_dev_z": float(max_dev[i, 2]),
        })
    d = r_trace.reshape(-1, 3)
    rmse_pooled = float(np.sqrt(np.mean(np.sum(d * d, axis=-1))))
    return MetricsReport(
        method=exp.method,
        transition=exp.transition,
        n_rollouts=n,
        seed=exp.seed,
        duration=exp.duration,
        cone_deg=exp.cone_deg,
        rmse_pooled=rmse_pooled,
        rmse_mean=float(rmse.mean()),
        settling=settling,
        rmse=rmse,
        max_dev=max_dev,
        rows=rows,
    )


def report_to_csv(report: MetricsReport) -> str:
    """Per-rollout rows plus a pooled summary row, deterministically formatted."""
    buf = io.StringIO()
    cols = ["rollout", "rmse", "t_settle", "max_dev_x", "max_dev_y", "max_dev_z"]
    buf.write("method,transition,seed," + ",".join(cols) + "\n")
    prefix = f"{report.method},{report.transition},{report.seed}"
    for row in report.rows:
        cells = ",".join(_fmt(row[c]) for c in cols)
        buf.write(f"{prefix},{cells}\n")
    s = report.summary()
    buf.write(
        f"{prefix},pooled,{_fmt(s['rmse_pooled'])},{_fmt(s['t_settle_mean'])},"
        f"{_fmt(s['max_dev_x'])},{_fmt(s['max_dev_y'])},{_fmt(s['max_dev_z'])}\n"
    )
    return buf.getvalue()


def _fmt(val) -> str:
    if isinstance(val, float):
        if val == UNSETTLED:
            return "unsettled"
        return repr(val)
    return str(val)


COMPARE_METRICS = ("rmse_pooled", "t_settle_mean", "max_dev_x", "max_dev_y", "max_dev_z")


def compare(reports: list[MetricsReport]) -> tuple[str, str]:
    """Mark best / second-best per metric across methods (lower is better).

    Returns (aligned_text, csv). Ties share the better rank.
    """
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    transitions = {r.transition for r in reports}
    if len(transitions) != 1:
        raise ValueError("reports must share a transition type")
    summaries = [r.summary() for r in reports]

    marks = {}
    for metric in COMPARE_METRICS:
        vals = np.array([s[metric] for s in summaries])
        order = np.unique(vals)
        for i, v in enumerate(vals):
            if v == order[0]:
                marks[(i, metric)] = "best"
            elif len(order) > 1 and v == order[1]:
                marks[(i, metric)] = "second"
            else:
                marks[(i, metric)] = ""

    header = ["method"] + list(COMPARE_METRICS) + ["n_settled"]
    rows_text = []
    rows_csv = [",".join(header + [m + "_rank" for m in COMPARE_METRICS])]
    for i, s in enumerate(summaries):
        cells = [s["method"]]
        csv_cells = [s["method"]]
        for metric in COMPARE_METRICS:
            val = s[metric]
            text = "unsettled" if val == UNSETTLED else f"{val:.4f}"
            mark = marks[(i, metric)]
            cells.append(text + (f" ({mark})" if mark else ""))
            csv_cells.append(_fmt(float(val)))
        cells.append(str(s["n_settled"]))
        csv_cells.append(str(s["n_settled"]))
        csv_cells += [marks[(i, m)] for m in COMPARE_METRICS]
        rows_text.append(cells)
        rows_csv.append(",".join(csv_cells))

    widths = [max(len(header[j]), *(len(row[j]) for row in rows_text)) for j in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in rows_text:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n", "\n".join(rows_csv) + "\n"
