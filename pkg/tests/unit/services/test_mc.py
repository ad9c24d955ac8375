import math

import numpy as np
import pytest

from asl.core.config import settings
from asl.schemas.scenario import ScenarioConfig
from asl.services.mc import (batches, burn_in_length, consistency_sweep, error_rate_sweep, normality_sweep,
                             recovery_time, run_drift, run_many, run_steady_state, settling_horizon,
                             simulate_chains, stability_check)
from asl.services.netstats import exact_steady_moments, network_moments
from asl.services.scenario import ScenarioError, build_scenario
from tests.conftest import scenario_dict


@pytest.fixture
def skewed_prior():
    raw = scenario_dict()
    raw["experiment"]["initial_beliefs"] = [[0.5, 0.25, 0.25]] * 10
    return build_scenario(ScenarioConfig.model_validate(raw))


class TestChains:
    def test_reproducible(self, laplace_groups):
        a = simulate_chains(laplace_groups, [0, 1, 2], horizon=300)
        b = simulate_chains(laplace_groups, [0, 1, 2], horizon=300)
        assert np.array_equal(a.log_ratios, b.log_ratios)

    def test_seed_changes_result(self, laplace_groups):
        a = simulate_chains(laplace_groups, [0], horizon=300)
        b = simulate_chains(laplace_groups.with_overrides(seed=99), [0], horizon=300)
        assert not np.array_equal(a.log_ratios, b.log_ratios)

    def test_run_does_not_depend_on_batch(self, laplace_groups):
        together = run_many(laplace_groups, range(30), horizon=200)
        alone = simulate_chains(laplace_groups, [27], horizon=200)
        assert np.allclose(together.log_ratios[27], alone.log_ratios[0], rtol=0, atol=1e-12)

    def test_chunk_size_does_not_matter(self, laplace_groups, monkeypatch):
        a = simulate_chains(laplace_groups, [4], horizon=300)
        monkeypatch.setattr(settings, "OBSERVATION_CHUNK", 7)
        b = simulate_chains(laplace_groups, [4], horizon=300)
        assert np.allclose(a.log_ratios, b.log_ratios, rtol=0, atol=1e-12)

    def test_worker_count_does_not_matter(self, laplace_groups):
        one = run_many(laplace_groups, range(60), workers=1, horizon=200)
        two = run_many(laplace_groups, range(60), workers=2, horizon=200)
        assert np.array_equal(one.log_ratios, two.log_ratios)
        assert np.array_equal(one.decisions, two.decisions)

    def test_belief_and_log_paths_agree(self, laplace_groups):
        log = simulate_chains(laplace_groups, range(5), horizon=500, path="log")
        belief = simulate_chains(laplace_groups, range(5), horizon=500, path="belief")
        assert np.max(np.abs(log.log_ratios - belief.log_ratios)) <= 1e-9
        assert np.array_equal(log.decisions, belief.decisions)

    def test_classic_learner_grows_linearly(self, laplace_groups):
        out = simulate_chains(laplace_groups, range(4), horizon=2000, learner="classic")
        moments = network_moments(laplace_groups.models, laplace_groups.matrix.perron, 1)
        assert np.allclose(out.log_ratios.mean(axis=(0, 1)) / 2000, moments.m_ave, rtol=0.1)

    def test_unknown_learner(self, laplace_groups):
        with pytest.raises(ValueError, match="learner"):
            simulate_chains(laplace_groups, [0], learner="bayes")

    def test_batches(self):
        assert batches(range(5), size=2) == [[0, 1], [2, 3], [4]]


class TestBurnIn:
    def test_uniform_prior_uses_floor(self, laplace_groups):
        assert burn_in_length(laplace_groups) == settings.BURN_IN_FLOOR

    def test_skewed_prior(self, skewed_prior):
        moments = network_moments(skewed_prior.models, skewed_prior.matrix.perron, 1)
        expected = math.ceil(math.log(settings.BURN_IN_TOLERANCE * moments.m_ave.min() / math.log(2))
                             / math.log1p(-0.1))
        assert burn_in_length(skewed_prior) == expected
        assert burn_in_length(skewed_prior, delta=0.001) == skewed_prior.horizon // 2

    def test_short_horizon_rejected(self, laplace_groups):
        with pytest.raises(ScenarioError, match="burn-in"):
            run_steady_state(laplace_groups, n_runs=5, horizon=50)

    def test_settling_horizon(self, laplace_groups):
        assert settling_horizon(laplace_groups, 0.1) == laplace_groups.horizon
        assert (1 - 0.001) ** settling_horizon(laplace_groups, 0.001) < settings.BURN_IN_TOLERANCE


class TestSteadyState:
    def test_mean_matches_exact_moments(self, laplace_groups):
        sample = run_steady_state(laplace_groups, n_runs=200, delta=0.1, horizon=500)
        moments = network_moments(laplace_groups.models, laplace_groups.matrix.perron, 1)
        mean, cov = exact_steady_moments(laplace_groups.matrix, moments, 0.1)
        se = np.sqrt(np.diagonal(cov, axis1=1, axis2=2) / 200)
        assert np.all(np.abs(sample.log_ratios.mean(axis=0) - mean) < 5 * se)
        assert sample.log_ratios.shape == (200, 10, 2)

    def test_rejects_changing_truth(self, drift_scenario):
        with pytest.raises(ScenarioError, match="constant true hypothesis"):
            run_steady_state(drift_scenario, n_runs=5)

    def test_sweep_shapes(self, laplace_groups):
        result = consistency_sweep(laplace_groups, [0.2, 0.05], runs_per_delta=3)
        assert result.deltas.tolist() == [0.05, 0.2]
        assert result.log_ratios.shape == (2, 3, 10, 2)
        assert np.all(result.band(0.05) < result.band(0.2))

    def test_error_rates_fall_with_delta(self, laplace_groups):
        sweep = error_rate_sweep(laplace_groups, [0.1, 0.5], n_runs=100, horizon=300)
        assert [row.delta for row in sweep.rows] == [0.5, 0.1]
        assert all(sweep.monotone.values())
        assert sum(r.rate for r in sweep.rows[1].rates) <= sum(r.rate for r in sweep.rows[0].rates)

    def test_stability(self, laplace_groups):
        result = stability_check(laplace_groups, horizon=300, n_runs=100, delta=0.1)
        assert result.passed
        assert result.pvalues.shape == (2,)

    def test_normality(self, laplace_groups):
        sweep = normality_sweep(laplace_groups, deltas=[0.1], n_runs=100, agent=4)
        [row] = sweep.rows
        assert sweep.agent == 4
        assert row.samples.shape == (100, 2)
        assert 0.4 < row.report.coverage_2sigma <= 1.0


class TestDrift:
    def test_recovery_time(self):
        decisions = np.array([1] * 5 + [3] * 10)
        assert recovery_time(decisions, 3, 1, 15, 3) == 5.0
        assert recovery_time(decisions, 2, 1, 15, 3) == math.inf
        assert recovery_time(decisions, 3, 10, 11, 3) == math.inf

    def test_asl_recovers_faster(self, drift_scenario):
        result = run_drift(drift_scenario, window=50)
        [rec] = result.recoveries
        assert (rec.change_time, rec.theta_from, rec.theta_to) == (200, 1, 3)
        assert rec.asl_faster >= 15
        assert rec.median("asl") < rec.median("classic")
        assert result.trace.run_ids.tolist() == list(range(settings.TRACE_RUNS))
        assert result.trace.beliefs["asl"].shape == (settings.TRACE_RUNS, 1000, 10, 3)
        assert result.trace.log_ratios["asl"].shape == (settings.TRACE_RUNS, 1000, 10, 2)
        assert result.trace.decisions["classic"].shape == (20, 1000, 10)
        assert np.allclose(result.trace.beliefs["classic"].sum(axis=-1), 1.0)
        assert result.trace.thetas[199] == 3

    def test_trace_matches_final_state(self, drift_scenario):
        result = run_drift(drift_scenario, n_runs=3, horizon=300)
        final = simulate_chains(drift_scenario, range(3), horizon=300, learner="classic")
        assert np.allclose(result.trace.log_ratios["classic"][:, -1], final.log_ratios, rtol=0, atol=1e-12)
        assert np.array_equal(result.trace.decisions["classic"][:, -1], final.decisions)

    def test_trace_runs_setting(self, drift_scenario, monkeypatch):
        monkeypatch.setattr(settings, "TRACE_RUNS", 2)
        result = run_drift(drift_scenario, n_runs=30, horizon=300)
        assert result.trace.run_ids.tolist() == [0, 1]
        assert result.trace.log_ratios["asl"].shape[0] == 2
        assert result.trace.decisions["asl"].shape[0] == 30

    def test_single_segment_has_no_recoveries(self, laplace_groups):
        result = run_drift(laplace_groups, n_runs=3, horizon=300)
        assert result.recoveries == []
        assert result.trace.decisions["asl"].shape == (3, 300, 10)
        assert result.trace.run_ids.tolist() == [0, 1, 2]

    def test_change_after_horizon(self, drift_scenario):
        with pytest.raises(ScenarioError, match="after the horizon"):
            run_drift(drift_scenario, n_runs=2, horizon=150)
