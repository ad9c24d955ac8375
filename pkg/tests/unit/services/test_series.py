import math

import numpy as np
import pytest

from asl.services.graph import build_averaging_matrix, ring_with_chords
from asl.services.likelihood import laplace_family
from asl.services.series import (ConstantAlpha, DeterministicZ, GaussianZ, GeometricAlpha, LikelihoodRatioZ,
                                 MatrixPowerAlpha, RademacherZ, SeriesSpec, SeriesSpecError, ZDistribution,
                                 analytic_moments, partial_sum, sample_moments, truncation_horizon, verify_clt,
                                 verify_mixing, verify_stability, verify_weak_law)


class CauchyLikeZ(ZDistribution):
    """Stand-in for a z with an infinite second moment."""

    @property
    def mean(self) -> float:
        return 0.0

    @property
    def abs_mean(self) -> float:
        return 1.0

    def sample(self, rng, size):
        return rng.standard_t(1.5, size)


def gaussian_spec(delta=0.1, alpha=1.0, **kwargs):
    return SeriesSpec(delta=delta, alpha=ConstantAlpha(alpha), z=GaussianZ(1.0, 1.0), **kwargs)


class TestAlphaRules:
    def test_constant_range(self):
        with pytest.raises(SeriesSpecError):
            ConstantAlpha(0.0)
        assert ConstantAlpha(1.0).values(3).tolist() == [1.0] * 4

    @pytest.mark.parametrize("alpha,kappa,beta", [(0.5, 0.0, 0.5), (0.5, 0.6, 0.5), (0.5, 0.2, 1.0)])
    def test_geometric_validation(self, alpha, kappa, beta):
        with pytest.raises(SeriesSpecError):
            GeometricAlpha(alpha, kappa, beta)

    def test_geometric_values(self):
        rule = GeometricAlpha(0.5, 0.5, 0.5)
        assert rule.values(2).tolist() == [1.0, 0.75, 0.625]
        assert rule.limit == 0.5

    def test_matrix_power_converges_to_perron(self):
        matrix = build_averaging_matrix(ring_with_chords(10, 5, seed=7))
        rule = MatrixPowerAlpha(matrix, source=3, target=8)
        values = rule.values(300)
        assert values[0] == matrix.weights[2, 7]
        assert values[-1] == pytest.approx(rule.limit, abs=1e-10)
        assert rule.limit == matrix.perron[2]


class TestZDistributions:
    def test_gaussian_abs_mean(self):
        assert GaussianZ(0.0, 1.0).abs_mean == pytest.approx(math.sqrt(2 / math.pi))
        assert GaussianZ(2.0, 0.0).abs_mean == 2.0

    def test_rademacher(self):
        z = RademacherZ().sample(np.random.default_rng(0), 1000)
        assert set(np.unique(z)) == {-1.0, 1.0}

    def test_likelihood_ratio_moments(self):
        z = LikelihoodRatioZ(laplace_family([0.5, 1.5]), 1, 2)
        assert z.mean == pytest.approx(math.exp(-1))
        assert z.abs_mean >= z.mean
        draws = z.sample(np.random.default_rng(1), 20000)
        assert draws.mean() == pytest.approx(z.mean, abs=5 * math.sqrt(z.variance / 20000))


class TestPartialSums:
    def test_explicit_realization(self):
        spec = SeriesSpec(delta=0.5, alpha=ConstantAlpha(1.0), z=DeterministicZ())
        out = partial_sum(spec, z=[1.0, -1.0, 1.0])
        assert out.partial.tolist() == [0.5, 0.25, 0.375]
        assert out.absolute.tolist() == [0.5, 0.75, 0.875]
        assert out.value == 0.375

    def test_needs_stream_or_realization(self):
        with pytest.raises(SeriesSpecError):
            partial_sum(gaussian_spec())

    def test_truncation_horizon(self):
        h = truncation_horizon(0.1, 1e-12)
        assert 0.9 ** h / 0.1 < 1e-12 <= 0.9 ** (h - 1) / 0.1

    def test_bad_delta(self):
        with pytest.raises(SeriesSpecError):
            gaussian_spec(delta=1.0)


class TestAnalyticMoments:
    def test_constant_alpha_variance(self):
        moments = analytic_moments(gaussian_spec(0.1))
        assert moments.mean == pytest.approx(1.0, abs=1e-12)
        assert moments.variance == pytest.approx(1 / 19, rel=1e-10)
        assert moments.variance_limit == pytest.approx(0.05)

    def test_geometric_alpha_mean(self):
        spec = SeriesSpec(delta=0.1, alpha=GeometricAlpha(0.5, 0.5, 0.5), z=DeterministicZ(1.0))
        moments = analytic_moments(spec)
        assert moments.mean == pytest.approx(0.5 + 0.05 / 0.55, abs=1e-12)
        assert moments.variance == 0.0
        assert moments.mean_limit == 0.5

    def test_infinite_variance_rejected(self):
        spec = SeriesSpec(delta=0.1, alpha=ConstantAlpha(), z=CauchyLikeZ())
        assert analytic_moments(spec, need_variance=False).variance is None
        with pytest.raises(SeriesSpecError, match="infinite"):
            analytic_moments(spec)

    def test_monte_carlo_agrees(self):
        spec = gaussian_spec(0.1)
        mc = sample_moments(spec, 4000, seed=9)
        exact = analytic_moments(spec)
        assert abs(mc.mean - exact.mean) < 4 * mc.mean_se
        assert abs(mc.variance - exact.variance) < 4 * mc.variance_se

    def test_sample_moments_reproducible(self):
        assert sample_moments(gaussian_spec(), 50, seed=3) == sample_moments(gaussian_spec(), 50, seed=3)


class TestStability:
    def test_converges(self):
        report = verify_stability(gaussian_spec(0.1), n_runs=200, seed=5)
        assert report.all_converged
        assert report.max_residuals == sorted(report.max_residuals, reverse=True)
        assert report.checkpoints[-1] == report.horizon

    def test_short_horizon_rejected(self):
        with pytest.raises(SeriesSpecError, match="too short"):
            verify_stability(gaussian_spec(0.1, horizon=50), n_runs=10, seed=5)


class TestWeakLaw:
    def test_exceedance_shrinks(self):
        report = verify_weak_law(gaussian_spec(), [0.1, 0.01, 0.001], n_runs=400, seed=11)
        assert report.target == 1.0
        assert all(report.monotone.values())
        for row in report.rows:
            for eps, p in row.exceedance.items():
                assert p == pytest.approx(row.gaussian_tail[eps], abs=0.1)
        assert report.rows[-1].exceedance[0.1] < 0.01

    def test_grid_must_decrease(self):
        with pytest.raises(SeriesSpecError, match="strictly decreasing"):
            verify_weak_law(gaussian_spec(), [0.01, 0.1], n_runs=10, seed=1)

    def test_no_gaussian_tail_for_other_z(self):
        spec = SeriesSpec(delta=0.1, alpha=ConstantAlpha(), z=RademacherZ())
        report = verify_weak_law(spec, [0.1, 0.05], n_runs=50, seed=1)
        assert report.rows[0].gaussian_tail is None


class TestCLT:
    def test_standardized_variance(self):
        report = verify_clt(gaussian_spec(), [0.1, 0.01], n_runs=400, seed=13)
        assert not report.ambiguous_centering
        for row in report.rows:
            assert row.exact_variance == pytest.approx(1 / (2 - row.delta), rel=1e-9)
            assert row.sample_variance == pytest.approx(row.exact_variance, abs=0.12)
            assert row.ks_statistic is not None
        assert report.distance_shrinks is not None

    def test_ambiguous_centering_flagged(self, caplog):
        with caplog.at_level("WARNING"):
            report = verify_clt(gaussian_spec(alpha=0.5), [0.1, 0.05], n_runs=50, seed=13)
        assert report.ambiguous_centering
        assert report.distance_shrinks is None
        assert all(row.ks_statistic is None for row in report.rows)
        assert "ambiguous" in caplog.text

    def test_needs_finite_variance(self):
        spec = SeriesSpec(delta=0.1, alpha=ConstantAlpha(), z=CauchyLikeZ())
        with pytest.raises(SeriesSpecError):
            verify_clt(spec, [0.1], n_runs=10, seed=1)


def test_mixing_envelope_holds():
    report = verify_mixing(build_averaging_matrix(ring_with_chords(10, 5, seed=7)))
    assert report.holds
    assert report.beta < 1
