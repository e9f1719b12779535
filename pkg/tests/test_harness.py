from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest

from query_hedge.harness import (
    REPORT_FIELDS,
    ExperimentPlan,
    RegretReport,
    RegretRow,
    compute_regret,
    fit_scaling_exponent,
    monte_carlo,
)
from query_hedge.instances import (
    FixedInstance,
    IidBernoulliInstance,
    LossSequence,
    LowerBoundFamily,
    LowerBoundInstance,
    TwoExpertEpsInstance,
    instance_stats,
    sample_loss_sequence,
)
from query_hedge.learners import LearnerConfig, run_etc, run_hedge_full, run_learner
from query_hedge.oracles import vanilla_hedge_closed_form_regret
from query_hedge.seeding import make_rng, run_rng


def fixed(n=2, T=50, seed=0) -> FixedInstance:
    return FixedInstance.from_array(make_rng(seed).random((n, T)))


def plan(instance, algorithm="hedge_full", k_grid=(0, 5, 50), runs=50, seed=7, **kw) -> ExperimentPlan:
    learner = LearnerConfig(algorithm, k_grid[-1], instance.n, instance.T)
    return ExperimentPlan(instance, learner, k_grid, runs, seed, **kw)


def synthetic(ks, values) -> RegretReport:
    rows = [RegretRow(k, 10, v, 0.0, "thm2", 1.0, True, True, 0.0, 0.0, 0.0) for k, v in zip(ks, values)]
    return RegretReport("syn", "hedge_full", "full", 100, 2, "best_fixed_hindsight", rows)


class TestComputeRegret:
    def test_best_fixed_play_is_zero(self):
        seq = LossSequence(np.array([[0.1, 0.2, 0.3, 0.1], [0.5, 0.5, 0.5, 0.5]]))
        traj = run_etc(seq, 1)  # commits to action 0, which is the best fixed action
        assert compute_regret(traj, seq) == pytest.approx(0.0, abs=1e-15)

    def test_k_equals_T_is_nonpositive(self):
        seq = sample_loss_sequence(fixed(3, 40))
        traj = run_hedge_full(seq, 40, make_rng(0))
        r = compute_regret(traj, seq)
        assert r == pytest.approx(seq.dynamic_min_loss - seq.best_fixed_loss)
        assert r <= 0

    def test_two_expert_matches_closed_form_in_mean(self):
        eps = make_rng(1).uniform(-1, 1, 30)
        eps = eps if eps.sum() >= 0 else -eps
        inst = TwoExpertEpsInstance(tuple(eps))
        seq = inst.sequence
        eta, k = 0.3, 6
        rng = make_rng(2)
        vals = [compute_regret(run_hedge_full(seq, k, rng, eta_override=eta), seq) for _ in range(4000)]
        closed = vanilla_hedge_closed_form_regret(eps, eta, k, 30)
        # best fixed expert is expert 0 because sum(eps) >= 0
        se = np.std(vals, ddof=1) / math.sqrt(len(vals))
        assert abs(np.mean(vals) - closed) <= 4 * se + 1e-12

    def test_pseudo_needs_analytic_instance(self):
        seq = sample_loss_sequence(fixed())
        traj = run_hedge_full(seq, 5, make_rng(0))
        with pytest.raises(ValueError):
            compute_regret(traj, seq, "best_mean_pseudo", fixed())
        with pytest.raises(ValueError):
            compute_regret(traj, seq, "best_mean_pseudo", None)

    def test_pseudo_uses_best_mean(self):
        inst = IidBernoulliInstance((0.3, 0.5), 20)
        seq = sample_loss_sequence(inst, make_rng(0))
        traj = run_hedge_full(seq, 5, make_rng(1))
        r = compute_regret(traj, seq, "best_mean_pseudo", inst)
        assert r == pytest.approx(traj.total_expected_loss - 20 * 0.3)

    def test_shape_mismatch(self):
        seq = sample_loss_sequence(fixed(T=50))
        other = sample_loss_sequence(fixed(T=40))
        traj = run_hedge_full(seq, 5, make_rng(0))
        with pytest.raises(ValueError):
            compute_regret(traj, other)

    def test_unknown_benchmark(self):
        seq = sample_loss_sequence(fixed())
        with pytest.raises(ValueError):
            compute_regret(run_hedge_full(seq, 5, make_rng(0)), seq, "oracle")


class TestPlan:
    def test_validation(self):
        inst = fixed()
        with pytest.raises(ValueError):
            plan(inst, runs=0)
        with pytest.raises(ValueError):
            plan(inst, k_grid=(0, 51))
        with pytest.raises(ValueError):
            plan(inst, benchmark="nope")
        with pytest.raises(ValueError):
            ExperimentPlan(inst, LearnerConfig("hedge_full", 1, 3, 50), (1,), 5, 0)

    def test_default_bound(self):
        assert plan(fixed()).bound_name == "thm2"
        assert plan(fixed(), "hedge_le_uniform").bound_name == "thm_adv3_uniform"


class TestMonteCarlo:
    def test_single_run_deterministic_path_has_zero_se(self):
        inst = fixed()
        rep = monte_carlo(plan(inst, k_grid=(50,), runs=1))
        row = rep.row(50)
        assert row.runs == 1 and row.std_error == 0.0

    def test_k_equals_T_constant(self):
        inst = fixed()
        rep = monte_carlo(plan(inst, k_grid=(50,), runs=20))
        assert rep.row(50).std_error <= 1e-12
        seq = inst.sequence
        assert rep.row(50).mean_regret == pytest.approx(seq.dynamic_min_loss - seq.best_fixed_loss)

    def test_reproducible(self):
        inst = IidBernoulliInstance((0.2, 0.5, 0.6), 60)
        p = plan(inst, k_grid=(0, 6, 30), runs=40)
        assert monte_carlo(p).to_csv() == monte_carlo(p).to_csv()
        other = monte_carlo(plan(inst, k_grid=(0, 6, 30), runs=40, seed=8))
        assert other.to_csv() != monte_carlo(p).to_csv()

    def test_parallelism_invariant(self, monkeypatch):
        import query_hedge.harness as harness

        monkeypatch.setattr(harness, "CHUNK_ELEMENTS", 3 * 60 * 7)  # several chunks per cell
        inst = IidBernoulliInstance((0.2, 0.5, 0.6), 60)
        p = plan(inst, "hedge_le_bernoulli", k_grid=(10, 30), runs=40)
        serial = monte_carlo(p, parallelism=1)
        parallel = monte_carlo(p, parallelism=2)
        assert serial.to_csv() == parallel.to_csv()

    def test_chunking_invariant(self, monkeypatch):
        import query_hedge.harness as harness

        inst = IidBernoulliInstance((0.2, 0.5), 30)
        p = plan(inst, "hedge_le_uniform", k_grid=(3, 15), runs=25)
        whole = monte_carlo(p).to_csv()
        monkeypatch.setattr(harness, "CHUNK_ELEMENTS", 2 * 30 * 4)
        assert monte_carlo(p).to_csv() == whole

    @pytest.mark.parametrize("algorithm", ["hedge_full", "hedge_le_bernoulli", "hedge_le_uniform", "ftl"])
    def test_run_matches_single_trajectory(self, algorithm):
        inst = IidBernoulliInstance((0.2, 0.5, 0.6), 40)
        k = 12
        rep = monte_carlo(plan(inst, algorithm, k_grid=(k,), runs=1, seed=99))
        rng = run_rng(99, k, 0)
        seq = sample_loss_sequence(inst, rng)
        traj = run_learner(LearnerConfig(algorithm, k, 3, 40), seq, rng)
        assert rep.row(k).mean_regret == pytest.approx(compute_regret(traj, seq), abs=1e-12)
        assert rep.row(k).mean_queries == traj.queries_used

    @pytest.mark.parametrize("algorithm", ["hedge_full", "hedge_le_bernoulli", "hedge_le_uniform", "etc", "ftl"])
    def test_query_accounting(self, algorithm):
        inst = IidBernoulliInstance((0.2, 0.5), 100)
        ks = (1, 10, 40, 100)
        rep = monte_carlo(plan(inst, algorithm, k_grid=ks, runs=30))
        for r in rep.rows:
            assert r.mean_queries <= r.k

    @pytest.mark.parametrize("inst", [
        fixed(3, 80),
        IidBernoulliInstance((0.4, 0.5, 0.45), 80),
        LowerBoundInstance("+", 0.2, 0.05, 80),
    ])
    def test_negative_regret_at_full_budget(self, inst):
        for algorithm in ("hedge_full", "hedge_le_uniform", "etc", "ftl"):
            rep = monte_carlo(plan(inst, algorithm, k_grid=(80,), runs=20))
            assert rep.row(80).mean_regret <= 0

    def test_limfeed_consistency(self):
        seq = sample_loss_sequence(fixed(2, 200, seed=4))
        k = 30
        rng = make_rng(5)
        mins = seq.step_min
        vals = []
        for _ in range(5000):
            traj = run_hedge_full(seq, k, rng)
            vals.append(mins[traj.queried].sum())
        target = k / seq.T * seq.dynamic_min_loss
        se = np.std(vals, ddof=1) / math.sqrt(len(vals))
        assert abs(np.mean(vals) - target) <= 3 * se

    def test_observation_one_mean_loss(self):
        inst = fixed(2, 100, seed=6)
        seq = inst.sequence
        from query_hedge.oracles import hedge_full_expected_loss

        rep = monte_carlo(plan(inst, k_grid=(0, 10, 50), runs=2000))
        for r in rep.rows:
            target = hedge_full_expected_loss(seq, r.k)
            assert abs(r.mean_loss - target) <= 4 * r.loss_std_error + 1e-9

    def test_bound_check_direction(self):
        inst = fixed(2, 100)
        rep = monte_carlo(plan(inst, k_grid=(10,), runs=30, z=3.0))
        r = rep.row(10)
        assert r.bound_satisfied == (r.mean_regret + 3 * r.std_error <= r.bound_value)
        lower = monte_carlo(plan(inst, k_grid=(10,), runs=30, bound="thm_lb"))
        lr = lower.row(10)
        assert lr.bound_name == "thm_lb"
        assert lr.bound_satisfied == (lr.mean_regret - 3 * lr.std_error >= lr.bound_value)

    def test_pseudo_benchmark_and_paired_column(self):
        inst = IidBernoulliInstance((0.3, 0.5), 200)
        rep = monte_carlo(plan(inst, "ftl", k_grid=(30,), runs=300, benchmark="best_mean_pseudo"))
        r = rep.row(30)
        stats = instance_stats(inst)
        assert r.mean_regret == pytest.approx(r.mean_loss - 200 * stats.means[stats.best_action], rel=0.5)
        assert abs(r.paired_pseudo_regret - r.mean_regret) <= 4 * math.hypot(r.std_error, r.paired_std_error)

    def test_pseudo_rejects_fixed(self):
        with pytest.raises(ValueError):
            monte_carlo(plan(fixed(), k_grid=(5,), runs=2, benchmark="best_mean_pseudo"))

    def test_family_skips_invalid_cells(self):
        T = 10_000
        fam = LowerBoundFamily("full", "+", T)
        learner = LearnerConfig("hedge_full", 100, 2, T)
        rep = monte_carlo(ExperimentPlan(fam, learner, (100, 2500), 3, 1))
        assert [r.k for r in rep.rows] == [100]
        assert 2500 in rep.skipped and "q" in rep.skipped[2500]


class TestReportIO:
    def test_csv_schema(self):
        rep = monte_carlo(plan(fixed(), k_grid=(0, 5), runs=4))
        rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
        assert tuple(rows[0]) == REPORT_FIELDS
        assert REPORT_FIELDS == (
            "experiment_id", "algorithm", "feedback", "T", "n", "k", "runs", "mean_regret", "std_error",
            "bound_name", "bound_value", "bound_satisfied", "mean_queries", "slope_window",
        )
        assert [r["k"] for r in rows] == ["0", "5"]
        assert rows[0]["bound_satisfied"] in ("true", "false")
        assert float(rows[1]["mean_regret"]) == rep.row(5).mean_regret

    def test_json_mirror(self):
        rep = monte_carlo(plan(fixed(), k_grid=(0, 5), runs=4))
        data = json.loads(rep.to_json())
        assert [tuple(d) for d in data] == [REPORT_FIELDS] * 2
        assert data[1]["mean_regret"] == rep.row(5).mean_regret

    def test_slope_window_label(self):
        rep = synthetic([10, 20, 40], [1.0, 0.5, 0.25]).with_slope_window(15, 40)
        assert [r.slope_window for r in rep.rows] == ["", "15:40", "15:40"]

    def test_missing_row(self):
        with pytest.raises(KeyError):
            synthetic([10], [1.0]).row(11)


class TestFit:
    def test_power_laws(self):
        ks = [10, 20, 40, 80, 160]
        for power in (1, 2):
            slope, r2 = fit_scaling_exponent(synthetic(ks, [5.0 / k**power for k in ks]), (10, 160))
            assert slope == pytest.approx(-power, abs=1e-12)
            assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_window(self):
        ks = [10, 20, 40, 80, 160, 320]
        vals = [5.0 / k for k in ks[:-1]] + [100.0]
        slope, _ = fit_scaling_exponent(synthetic(ks, vals), (10, 160))
        assert slope == pytest.approx(-1.0)

    def test_too_few_points(self):
        with pytest.raises(ValueError, match="at least 4"):
            fit_scaling_exponent(synthetic([10, 20, 40], [1, 2, 3]), (1, 100))

    def test_nonpositive(self):
        with pytest.raises(ValueError, match="not positive"):
            fit_scaling_exponent(synthetic([10, 20, 40, 80], [1, 0.5, -0.1, 0.2]), (1, 100))
