import math

import numpy as np
import pytest
from scipy import integrate, stats

from asl.services.likelihood import (AgentLikelihoods, DivergentIntegralError, LikelihoodError, Observation,
                                     SupportMismatchError, discrete_family, expectation, gaussian_family,
                                     kl_divergence, laplace_family, llr_covariance, log_likelihood_ratio, sample,
                                     wrong_hypotheses)

GROUP_MEANS = [[0.5, 0.5, 1.5], [0.5, 1.5, 1.5], [0.5, 1.0, 0.5]]


def laplace_llr_moment(mu0, mu, power, scale=1.0):
    """Independent oracle: E[x^power] with scipy's Laplace density and quadrature."""
    def f(x):
        llr = (abs(x - mu) - abs(x - mu0)) / scale
        return stats.laplace.pdf(x, loc=mu0, scale=scale) * llr ** power
    pts = sorted({mu0, mu})
    return integrate.quad(f, -60, 60, points=pts, limit=400)[0]


class TestLaplace:
    def test_closed_form_kl(self):
        model = laplace_family([0.5, 1.5])
        assert kl_divergence(model, 1, 2) == pytest.approx(math.exp(-1), abs=1e-15)

    def test_closed_form_matches_quadrature(self):
        model = laplace_family([0.5, 1.0, 1.5], scale=0.7)
        for theta in (2, 3):
            assert kl_divergence(model, 1, theta, method="quadrature") == pytest.approx(
                kl_divergence(model, 1, theta), abs=1e-9)

    def test_identical_means_give_zero(self):
        model = laplace_family(GROUP_MEANS[0])
        assert kl_divergence(model, 1, 2) == 0.0
        assert kl_divergence(model, 1, 1) == 0.0

    def test_covariance_against_scipy_oracle(self):
        model = laplace_family([0.5, 1.5])
        oracle = laplace_llr_moment(0.5, 1.5, 2) - laplace_llr_moment(0.5, 1.5, 1) ** 2
        assert llr_covariance(model, 1, 2, 2) == pytest.approx(oracle, abs=1e-8)

    def test_covariance_symmetric(self):
        model = laplace_family([0.5, 1.0, 1.5])
        assert llr_covariance(model, 1, 2, 3) == llr_covariance(model, 1, 3, 2)

    def test_covariance_with_true_hypothesis_is_zero(self):
        model = laplace_family([0.5, 1.0, 1.5])
        assert llr_covariance(model, 1, 1, 2) == 0.0

    def test_quantile_is_inverse_cdf(self):
        model = laplace_family([0.5, 1.5], scale=2.0)
        u = np.linspace(0.01, 0.99, 25)
        assert np.allclose(model.quantile(2, u), stats.laplace.ppf(u, loc=1.5, scale=2.0), atol=1e-12)

    def test_bad_scale(self):
        with pytest.raises(LikelihoodError, match="scale"):
            laplace_family([0.0, 1.0], scale=0.0)

    def test_needs_two_hypotheses(self):
        with pytest.raises(LikelihoodError, match="two hypotheses"):
            laplace_family([0.0])


class TestGaussian:
    def test_closed_form_kl(self):
        model = gaussian_family([0.0, 2.0], scale=2.0)
        assert kl_divergence(model, 1, 2) == pytest.approx(0.5)

    def test_quadrature_agrees(self):
        model = gaussian_family([0.0, 1.0, -0.5], scale=1.3)
        assert kl_divergence(model, 1, 3, method="quadrature") == pytest.approx(kl_divergence(model, 1, 3), abs=1e-9)

    def test_llr_variance_is_twice_kl(self):
        # for equal-variance Gaussians the LLR is Gaussian with variance 2 KL
        model = gaussian_family([0.0, 1.0])
        assert llr_covariance(model, 1, 2, 2) == pytest.approx(2 * kl_divergence(model, 1, 2), abs=1e-8)


class TestDiscrete:
    def test_exact_kl(self):
        model = discrete_family([0, 1], [[0.5, 0.5], [0.25, 0.75]])
        expected = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
        assert kl_divergence(model, 1, 2) == pytest.approx(expected, abs=1e-15)

    def test_infinite_kl(self):
        model = discrete_family([0, 1], [[0.5, 0.5], [1.0, 0.0]])
        with pytest.raises(DivergentIntegralError, match="infinite"):
            kl_divergence(model, 1, 2)

    def test_zero_mass_outside_truth_is_fine(self):
        # hypothesis 1 never emits symbol 1, so the missing mass under hypothesis 2 is irrelevant
        model = discrete_family([0, 1], [[1.0, 0.0], [0.5, 0.5]])
        assert kl_divergence(model, 1, 2) == pytest.approx(math.log(2))

    def test_quantile_draws_atoms(self):
        model = discrete_family([3.0, -1.0], [[0.2, 0.8], [0.9, 0.1]])
        draws = model.quantile(1, np.array([0.1, 0.19, 0.21, 0.99]))
        assert draws.tolist() == [3.0, 3.0, -1.0, -1.0]

    def test_unknown_symbol_has_no_density(self):
        model = discrete_family([0, 1], [[0.5, 0.5], [0.25, 0.75]])
        assert np.all(np.isneginf(model.log_densities(np.array([0.5]))))

    def test_pmf_rows_validated(self):
        with pytest.raises(LikelihoodError, match="sum to 1"):
            discrete_family([0, 1], [[0.5, 0.6], [0.5, 0.5]])


class TestLogLikelihoodRatio:
    def test_sign_favors_truth(self):
        model = laplace_family([0.5, 1.5])
        assert log_likelihood_ratio(model, Observation(0.5), 1, 2) == pytest.approx(1.0)

    def test_support_mismatch(self, caplog):
        model = discrete_family([0, 1], [[0.5, 0.5], [1.0, 0.0]])
        with caplog.at_level("ERROR"):
            with pytest.raises(SupportMismatchError) as exc:
                log_likelihood_ratio(model, Observation(1.0, agent=4, time=7), 1, 2)
        assert exc.value.theta == 2
        assert "Agent 4 at time 7" in caplog.text

    def test_observation_must_be_finite(self):
        with pytest.raises(LikelihoodError):
            Observation(float("nan"))

    def test_sample_carries_agent_and_time(self):
        obs = sample(laplace_family([0.0, 1.0]), 1, np.random.default_rng(0), agent=3, time=5)
        assert (obs.agent, obs.time) == (3, 5)

    def test_expectation_of_one_is_one(self):
        model = laplace_family([0.0, 1.0])
        assert expectation(model, 2, lambda xi, ll: np.ones_like(xi)) == pytest.approx(1.0, abs=1e-10)


class TestAgentLikelihoods:
    @pytest.fixture
    def table(self):
        models = tuple(laplace_family(m) for m in GROUP_MEANS)
        return AgentLikelihoods(models=(models[0],) * 3 + (models[1],) * 3 + (models[2],) * 4)

    def test_shapes(self, table):
        xi = np.zeros((7, 5, 10))
        assert table.log_likelihoods(xi).shape == (7, 5, 10, 3)
        assert table.llrs(xi, 1).shape == (7, 5, 10, 2)

    def test_kl_zeros_where_likelihoods_coincide(self, table):
        kl = table.kl_table(1)
        assert np.all(kl[:3, 1] == 0.0)
        assert np.all(kl[6:, 2] == 0.0)
        assert np.all(kl[:, 0] == 0.0)
        assert kl[3, 1] == pytest.approx(math.exp(-1))

    def test_draw_follows_schedule(self, table):
        u = np.full((4, 10), 0.5)
        xi = table.draw(np.array([1, 1, 3, 3]), u)
        assert xi[0, 0] == pytest.approx(0.5)
        assert xi[3, 0] == pytest.approx(1.5)

    def test_draw_is_chunk_invariant(self, table):
        u = np.random.default_rng(3).random((6, 10))
        whole = table.draw(1, u)
        parts = np.concatenate([table.draw(1, u[:2]), table.draw(1, u[2:])])
        assert np.array_equal(whole, parts)

    def test_covariance_tables_shape(self, table):
        rho = table.covariance_tables(1)
        assert rho.shape == (10, 2, 2)
        assert np.allclose(rho, np.transpose(rho, (0, 2, 1)))
        assert np.all(rho[:3, 0, :] == 0.0)

    def test_agents_must_agree_on_hypotheses(self):
        with pytest.raises(LikelihoodError, match="disagree"):
            AgentLikelihoods(models=(laplace_family([0, 1]), laplace_family([0, 1, 2])))

    def test_labels(self):
        models = AgentLikelihoods(models=(laplace_family([0, 1, 2]),), labels=("sunny", "cloudy", "rainy"))
        assert models.label(3) == "rainy"


def test_wrong_hypotheses_ascending():
    assert wrong_hypotheses(4, 3) == [1, 2, 4]
