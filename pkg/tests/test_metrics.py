import numpy as np
import pytest

from flipsim import metrics
from flipsim.config import load_config
from flipsim.experiments import ExperimentConfig, MetricsReport, compare, report_to_csv, run_experiment

E3 = np.array([0.0, 0.0, 1.0])


def cone_trace(angles_deg):
    """g_b trace tilted from +e3 by the given angles."""
    a = np.radians(np.asarray(angles_deg, dtype=float))
    return np.stack([np.sin(a), np.zeros_like(a), np.cos(a)], axis=-1)


class TestSettlingTime:
    def test_enters_and_stays(self):
        t = np.linspace(0, 2, 201)
        angles = np.where(t < 1.0, 40.0, 5.0)
        assert metrics.settling_time(t, cone_trace(angles), E3, 10.0) == 1.0

    def test_re_entry_counts_from_last_exit(self):
        t = np.linspace(0, 2, 201)
        angles = np.full_like(t, 5.0)
        angles[(t >= 0.5) & (t < 0.7)] = 40.0  # excursion
        out = metrics.settling_time(t, cone_trace(angles), E3, 10.0)
        assert abs(out - 0.7) < 1e-9

    def test_always_inside_is_zero(self):
        t = np.linspace(0, 1, 11)
        assert metrics.settling_time(t, cone_trace(np.full(11, 3.0)), E3, 10.0) == 0.0

    def test_never_settles(self):
        t = np.linspace(0, 1, 11)
        out = metrics.settling_time(t, cone_trace(np.full(11, 45.0)), E3, 10.0)
        assert out == metrics.UNSETTLED

    def test_truncating_settled_prefix_never_decreases(self):
        t = np.linspace(0, 2, 201)
        angles = np.where(t < 1.0, 40.0, 5.0)
        gb = cone_trace(angles)
        full = metrics.settling_time(t, gb, E3, 10.0)
        for k in (10, 50, 99):
            part = metrics.settling_time(t[k:], gb[k:], E3, 10.0)
            assert part >= full - 1e-12

    def test_empty_trace_rejected(self):
        with pytest.raises(ValueError):
            metrics.settling_time(np.array([]), np.zeros((0, 3)), E3, 10.0)


class TestPositionMetrics:
    def test_constant_at_origin(self):
        rmse, dev = metrics.position_metrics(np.zeros((50, 3)))
        assert rmse == 0.0 and np.allclose(dev, 0.0)

    def test_sinusoid_rms(self):
        # x = 0.2 sin over whole periods: rmse 0.2/sqrt(2), max dev 0.2
        t = np.linspace(0, 2 * np.pi, 4001)[:-1]
        r = np.zeros((t.size, 3))
        r[:, 0] = 0.2 * np.sin(t)
        rmse, dev = metrics.position_metrics(r)
        assert abs(rmse - 0.2 / np.sqrt(2)) < 1e-4
        assert abs(dev[0] - 0.2) < 1e-6

    def test_origin_shift_invariance(self):
        rng = np.random.default_rng(3)
        r = rng.normal(size=(100, 3))
        shift = np.array([1.0, -2.0, 0.5])
        rmse1, dev1 = metrics.position_metrics(r)
        rmse2, dev2 = metrics.position_metrics(r + shift, origin=shift)
        assert abs(rmse1 - rmse2) < 1e-12
        assert np.allclose(dev1, dev2)

    def test_alternate_origin(self):
        r = np.tile([1.0, 0.0, 0.0], (10, 1))
        rmse, _ = metrics.position_metrics(r, origin=np.array([1.0, 0.0, 0.0]))
        assert rmse == 0.0


class TestRunExperiment:
    @pytest.fixture(scope="class")
    def cfg(self):
        return load_config()

    def test_ideal_step_rollout_settles(self, cfg):
        exp = ExperimentConfig(method="step+oca", transition="nti", n_rollouts=1,
                               seed=3, duration=3.0, ideal=True)
        report = run_experiment(exp, cfg)
        assert report.n_settled == 1
        assert report.settling[0] < 3.0
        assert report.rmse_pooled < 1.0

    def test_same_seed_reproduces_report(self, cfg):
        exp = ExperimentConfig(method="step", transition="itn", n_rollouts=3, seed=11)
        a = run_experiment(exp, cfg)
        b = run_experiment(exp, cfg)
        assert np.array_equal(a.rmse, b.rmse)
        assert np.array_equal(a.settling, b.settling)
        assert report_to_csv(a) == report_to_csv(b)

    def test_policy_method_requires_weights(self, cfg):
        exp = ExperimentConfig(method="policy+oca", transition="nti", n_rollouts=1)
        with pytest.raises(ValueError):
            run_experiment(exp, cfg)

    def test_csv_layout(self, cfg):
        exp = ExperimentConfig(method="step+oca", transition="nti", n_rollouts=2,
                               seed=5, duration=1.0, ideal=True)
        text = report_to_csv(run_experiment(exp, cfg))
        lines = text.strip().splitlines()
        assert lines[0].startswith("method,transition,seed,rollout,rmse,t_settle")
        assert len(lines) == 4  # header + 2 rollouts + pooled
        assert lines[-1].split(",")[3] == "pooled"


def synthetic_report(method, rmse_pooled, ts, transition="nti"):
    n = 3
    return MetricsReport(
        method=method, transition=transition, n_rollouts=n, seed=0, duration=3.0,
        cone_deg=10.0, rmse_pooled=rmse_pooled, rmse_mean=rmse_pooled,
        settling=np.full(n, ts), rmse=np.full(n, rmse_pooled),
        max_dev=np.full((n, 3), rmse_pooled),
        rows=[{"rollout": i, "rmse": rmse_pooled, "t_settle": ts,
               "max_dev_x": rmse_pooled, "max_dev_y": rmse_pooled,
               "max_dev_z": rmse_pooled} for i in range(n)],
    )


class TestCompare:
    def test_best_and_second_marking(self):
        reports = [
            synthetic_report("step", 0.9349, 2.1720),
            synthetic_report("step+oca", 0.6896, 1.4280),
            synthetic_report("minsnap+oca", 0.2195, 2.0760),
            synthetic_report("policy+oca", 0.1492, 0.8840),
        ]
        text, csv = compare(reports)
        lines = text.splitlines()
        policy_line = next(l for l in lines if l.startswith("policy+oca"))
        minsnap_line = next(l for l in lines if l.startswith("minsnap+oca"))
        oca_line = next(l for l in lines if l.startswith("step+oca"))
        assert "0.1492 (best)" in policy_line
        assert "0.2195 (second)" in minsnap_line
        assert "0.8840 (best)" in policy_line
        assert "1.4280 (second)" in oca_line
        assert "rmse_pooled_rank" in csv.splitlines()[0]

    def test_ties_share_best(self):
        a = synthetic_report("step", 0.5, 1.0)
        b = synthetic_report("step+oca", 0.5, 2.0)
        b.max_dev = np.full((3, 3), 0.9)
        text, _ = compare([a, b])
        # the tied rmse column is marked best on both rows
        for line in text.splitlines()[1:]:
            assert "0.5000 (best)" in line

    def test_mixed_transitions_rejected(self):
        with pytest.raises(ValueError):
            compare([synthetic_report("step", 0.5, 1.0),
                     synthetic_report("step", 0.4, 1.0, transition="itn")])

    def test_needs_two_reports(self):
        with pytest.raises(ValueError):
            compare([synthetic_report("step", 0.5, 1.0)])
