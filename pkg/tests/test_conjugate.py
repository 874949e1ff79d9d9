import numpy as np
import pytest

from medpost.conjugate import (McmcConfig, NigPrior, PowerLikelihoodConfig,
                               _logml_d_path, _logml_s_path, default_prior,
                               gibbs_beta_conditional, gibbs_sigma2_conditional,
                               log_marginal_likelihood, mle_fit,
                               power_posterior, predictive_draws,
                               sample_posterior)
from medpost.criteria import ModelSpec
from medpost.errors import ConfigError, DataError

from _oracles import batch_mean_se, logml_quadrature


def full_model(d):
    return ModelSpec((True,) * d)


class TestPriorValidation:
    def test_asymmetric_rejected(self):
        with pytest.raises(ConfigError, match="symmetric"):
            NigPrior(a=1, b=1, beta0=np.zeros(2),
                     sigma0=np.array([[1.0, 0.5], [0.2, 1.0]]))

    def test_indefinite_rejected(self):
        with pytest.raises(ConfigError, match="positive definite"):
            NigPrior(a=1, b=1, beta0=np.zeros(2),
                     sigma0=np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_bad_shape_rate(self):
        with pytest.raises(ConfigError):
            NigPrior(a=0.0, b=1.0, beta0=np.zeros(1), sigma0=np.eye(1))


class TestBetaConditional:
    def test_flat_prior_limit_is_ols(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((30, 2))
        y = x @ np.array([1.0, -2.0]) + 0.1 * rng.standard_normal(30)
        prior = NigPrior(a=1, b=1, beta0=np.zeros(2), sigma0=1e8 * np.eye(2))
        mu, _ = gibbs_beta_conditional(x, y, 1.0, prior,
                                       PowerLikelihoodConfig(1))
        ols, *_ = np.linalg.lstsq(x, y, rcond=None)
        np.testing.assert_allclose(mu, ols, atol=1e-6)

    def test_no_data_identity(self):
        prior = NigPrior(a=1, b=1, beta0=np.array([0.5, -0.5]),
                         sigma0=np.array([[2.0, 0.3], [0.3, 1.0]]))
        mu, cov = gibbs_beta_conditional(
            np.zeros((4, 2)), np.zeros(4), 1.0, prior, PowerLikelihoodConfig(3))
        np.testing.assert_allclose(mu, prior.beta0, atol=1e-12)
        np.testing.assert_allclose(cov, prior.sigma0, atol=1e-12)

    def test_sigma2_scales_covariance(self):
        prior = NigPrior(a=1, b=1, beta0=np.zeros(1), sigma0=np.eye(1))
        x = np.ones((3, 1))
        _, cov1 = gibbs_beta_conditional(x, np.ones(3), 1.0, prior,
                                         PowerLikelihoodConfig(1))
        _, cov3 = gibbs_beta_conditional(x, np.ones(3), 3.0, prior,
                                         PowerLikelihoodConfig(1))
        np.testing.assert_allclose(cov3, 3.0 * cov1)

    def test_small_case_dense_oracle(self):
        # s=4, D=2, R=3 against an explicit inverse-based evaluation
        x = np.array([[1.0, 0.5], [0.0, 2.0], [-1.0, 1.0], [2.0, -1.0]])
        y = np.array([0.7, -0.2, 1.1, 0.4])
        beta0 = np.array([0.1, -0.3])
        sigma0 = np.array([[1.5, 0.2], [0.2, 0.8]])
        prior = NigPrior(a=2.0, b=1.5, beta0=beta0, sigma0=sigma0)
        r = 3
        q0 = np.linalg.inv(sigma0)
        sig_beta = np.linalg.inv(q0 + r * x.T @ x)
        mu_expect = sig_beta @ (q0 @ beta0 + r * x.T @ y)
        mu, cov = gibbs_beta_conditional(x, y, 2.0, prior,
                                         PowerLikelihoodConfig(r))
        np.testing.assert_allclose(mu, mu_expect, rtol=1e-12)
        np.testing.assert_allclose(cov, 2.0 * sig_beta, rtol=1e-12)

    def test_power_shrinks_covariance(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((20, 3))
        prior = default_prior(3, scale=5.0)
        traces = []
        for r in (1, 2, 5):
            _, cov = gibbs_beta_conditional(x, np.zeros(20), 1.0, prior,
                                            PowerLikelihoodConfig(r))
            traces.append(np.trace(cov))
        assert traces[0] > traces[1] > traces[2]


class TestSigma2Conditional:
    def test_zero_residual_case(self):
        x = np.eye(3)[:, :1]
        beta0 = np.array([2.0])
        prior = NigPrior(a=1.5, b=0.7, beta0=beta0, sigma0=np.eye(1))
        y = x[:, 0] * 2.0  # residual zero at beta = beta0
        a_post, b_post = gibbs_sigma2_conditional(
            x, y, beta0, prior, PowerLikelihoodConfig(4))
        assert a_post == pytest.approx(1.5 + (4 * 3 + 1) / 2)
        assert b_post == pytest.approx(0.7)

    def test_hand_numbers(self):
        # s=3, D=1, R=2, everything small enough to evaluate by hand
        x = np.array([[1.0], [2.0], [3.0]])
        y = np.array([1.0, 1.0, 2.0])
        beta = np.array([0.5])
        prior = NigPrior(a=1.0, b=1.0, beta0=np.array([0.0]),
                         sigma0=np.array([[4.0]]))
        a_post, b_post = gibbs_sigma2_conditional(
            x, y, beta, prior, PowerLikelihoodConfig(2))
        resid = y - x[:, 0] * 0.5          # [0.5, 0.0, 0.5]
        expect_b = 1.0 + 0.5 * 2 * float(resid @ resid) + 0.5 * 0.25 / 4.0
        assert a_post == pytest.approx(1.0 + (2 * 3 + 1) / 2)
        assert b_post == pytest.approx(expect_b)

    def test_posterior_mean_near_residual_variance(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((4000, 2))
        beta = np.array([1.0, -1.0])
        y = x @ beta + 1.3 * rng.standard_normal(4000)
        prior = NigPrior(a=0.01, b=0.01, beta0=np.zeros(2),
                         sigma0=1e6 * np.eye(2))
        a_post, b_post = gibbs_sigma2_conditional(
            x, y, beta, prior, PowerLikelihoodConfig(1))
        resid = y - x @ beta
        target = float(resid @ resid) / 4000
        assert b_post / (a_post - 1) == pytest.approx(target, rel=0.10)


class TestSamplePosterior:
    def test_degenerate_concentration(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((60, 2))
        beta = np.array([2.0, -1.0])
        y = x @ beta
        prior = NigPrior(a=200.0, b=0.002, beta0=beta,
                         sigma0=1e-8 * np.eye(2))
        draws = sample_posterior(x, y, full_model(2), prior,
                                 PowerLikelihoodConfig(1),
                                 McmcConfig(iterations=400, burn_in=100, seed=0))
        np.testing.assert_allclose(draws.beta_draws.mean(axis=0), beta,
                                   atol=1e-3)

    def test_same_seed_identical(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((25, 2))
        y = rng.standard_normal(25)
        prior = default_prior(2)
        mcmc = McmcConfig(iterations=200, burn_in=50, seed=99)
        a = sample_posterior(x, y, full_model(2), prior,
                             PowerLikelihoodConfig(2), mcmc)
        b = sample_posterior(x, y, full_model(2), prior,
                             PowerLikelihoodConfig(2), mcmc)
        assert np.array_equal(a.beta_draws, b.beta_draws)
        assert np.array_equal(a.sigma2_draws, b.sigma2_draws)

    def test_matches_closed_form(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((50, 2))
        y = x @ np.array([1.0, 0.5]) + rng.standard_normal(50)
        prior = default_prior(2, scale=10.0)
        cfg = PowerLikelihoodConfig(1)
        draws = sample_posterior(x, y, full_model(2), prior, cfg,
                                 McmcConfig(iterations=6000, burn_in=1000,
                                            seed=4))
        exact = power_posterior(x, y, full_model(2), prior, cfg)
        se = batch_mean_se(draws.beta_draws)
        err = np.abs(draws.beta_draws.mean(axis=0) - exact.beta_mean())
        assert (err <= 3 * se + 1e-12).all()

    def test_empty_model(self):
        y = np.array([1.0, 2.0, -1.0])
        prior = NigPrior(a=1, b=1, beta0=np.zeros(0), sigma0=np.zeros((0, 0)))
        draws = sample_posterior(np.zeros((3, 2)), y, ModelSpec((False, False)),
                                 prior, PowerLikelihoodConfig(1),
                                 McmcConfig(iterations=100, burn_in=10, seed=0))
        assert draws.beta_draws.shape == (90, 0)
        assert (draws.sigma2_draws > 0).all()

    def test_thinning(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((10, 1))
        draws = sample_posterior(x, rng.standard_normal(10), full_model(1),
                                 default_prior(1), PowerLikelihoodConfig(1),
                                 McmcConfig(iterations=101, burn_in=1, seed=0,
                                            thin=10))
        assert draws.sigma2_draws.shape == (10,)


class TestLogMarginal:
    def test_quadrature_r1(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 1))
        y = 0.8 * x[:, 0] + rng.standard_normal(3)
        prior = NigPrior(a=1.0, b=1.0, beta0=np.zeros(1), sigma0=np.eye(1))
        lm = log_marginal_likelihood(x, y, full_model(1), prior,
                                     PowerLikelihoodConfig(1))
        oracle = logml_quadrature(x, y, 0.0, 1.0, 1.0, 1.0, 1)
        assert lm == pytest.approx(oracle, rel=1e-4)

    def test_quadrature_tight_prior(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((4, 1))
        y = rng.standard_normal(4)
        prior = NigPrior(a=2.0, b=0.5, beta0=np.array([0.3]),
                         sigma0=np.array([[1e-4]]))
        lm = log_marginal_likelihood(x, y, full_model(1), prior,
                                     PowerLikelihoodConfig(1))
        oracle = logml_quadrature(x, y, 0.3, 1e-4, 2.0, 0.5, 1)
        assert lm == pytest.approx(oracle, rel=1e-4)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((8, 2))
        y = rng.standard_normal(8)
        prior = default_prior(2)
        cfg = PowerLikelihoodConfig(3)
        lm = log_marginal_likelihood(x, y, full_model(2), prior, cfg)
        perm = rng.permutation(8)
        lm_p = log_marginal_likelihood(x[perm], y[perm], full_model(2), prior,
                                       cfg)
        assert lm == pytest.approx(lm_p, abs=1e-10)

    def test_paths_agree(self):
        rng = np.random.default_rng(8)
        for r in (1, 4):
            x = rng.standard_normal((40, 3))
            y = rng.standard_normal(40)
            prior = default_prior(3, scale=7.0)
            cfg = PowerLikelihoodConfig(r)
            a = _logml_s_path(x, y, prior, cfg)
            b = _logml_d_path(x, y, prior, cfg)
            assert a == pytest.approx(b, abs=1e-8)

    def test_empty_model_paths(self):
        y = np.array([0.4, -0.2])
        prior = NigPrior(a=1, b=1, beta0=np.zeros(0), sigma0=np.zeros((0, 0)))
        cfg = PowerLikelihoodConfig(2)
        x = np.zeros((2, 0))
        assert _logml_s_path(x, y, prior, cfg) == pytest.approx(
            _logml_d_path(x, y, prior, cfg), abs=1e-10)


class TestMleFit:
    def test_perfect_fit_floor(self):
        x = np.array([[1.0], [2.0], [3.0]])
        y = 2.0 * x[:, 0]
        beta, sigma2, loglik = mle_fit(x, y, full_model(1))
        assert beta[0] == pytest.approx(2.0)
        assert sigma2 == pytest.approx(1e-12)
        assert np.isfinite(loglik) and loglik > 0

    def test_hand_ols(self):
        x = np.array([[1.0], [2.0], [3.0]])
        y = np.array([2.0, 4.0, 7.0])
        beta, sigma2, _ = mle_fit(x, y, full_model(1))
        # slope through origin: sum(xy)/sum(x^2) = 31/14
        assert beta[0] == pytest.approx(31.0 / 14.0)
        resid = y - x[:, 0] * beta[0]
        assert sigma2 == pytest.approx(float(resid @ resid) / 3)

    def test_duplicate_column_named(self):
        x = np.column_stack([np.arange(5.0), np.arange(5.0)])
        with pytest.raises(DataError, match="rank-deficient"):
            mle_fit(x, np.arange(5.0), full_model(2))

    def test_more_predictors_than_rows(self):
        with pytest.raises(DataError, match="predictors"):
            mle_fit(np.ones((2, 3)), np.ones(2), full_model(3))

    def test_residuals_orthogonal(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((40, 4))
        y = rng.standard_normal(40)
        beta, _, _ = mle_fit(x, y, full_model(4))
        resid = y - x @ beta
        assert np.abs(x.T @ resid).max() < 1e-8 * np.linalg.norm(y)


class TestPredictiveDraws:
    def _draws(self, beta, sigma2, seed=5):
        return __import__("medpost").conjugate.NigPosteriorDraws(
            beta_draws=beta, sigma2_draws=sigma2,
            model=full_model(beta.shape[1]), seed=seed)

    def test_noiseless(self):
        beta = np.array([[1.0, 2.0], [3.0, 4.0]])
        draws = self._draws(beta, np.full(2, 1e-30))
        x_new = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        out = predictive_draws(draws, x_new)
        np.testing.assert_allclose(out, beta @ x_new.T, atol=1e-10)

    def test_single_draw_identity_rows(self):
        beta = np.array([[2.0, -1.0]])
        draws = self._draws(beta, np.array([4.0]), seed=11)
        out = predictive_draws(draws, np.eye(2))
        rng = np.random.default_rng(
            __import__("medpost").derive_seed(11, purpose_tag="predictive"))
        eps = rng.standard_normal((1, 2))
        np.testing.assert_allclose(out, beta @ np.eye(2) + 2.0 * eps)

    def test_mean_matches_posterior_mean(self):
        rng = np.random.default_rng(12)
        beta = rng.standard_normal((4000, 2))
        sigma2 = np.full(4000, 0.5)
        draws = self._draws(beta, sigma2, seed=3)
        x_new = rng.standard_normal((5, 2))
        out = predictive_draws(draws, x_new)
        expect = x_new @ beta.mean(axis=0)
        se = np.sqrt((x_new ** 2).sum(axis=1) * beta.var(axis=0).mean()
                     + 0.5) / np.sqrt(4000)
        assert (np.abs(out.mean(axis=0) - expect) < 3 * se + 0.05).all()

    def test_dimension_mismatch(self):
        draws = self._draws(np.ones((3, 2)), np.ones(3))
        with pytest.raises(DataError):
            predictive_draws(draws, np.ones((4, 3)))
