import numpy as np
import pytest
import scipy.stats

from gkmcmc.operators import CovarianceOperator
from gkmcmc.posterior import (
    HierarchicalModel,
    HyperParams,
    conditional_moments_dense,
    gamma_sample,
    log_conditional_density,
    neg_log_posterior,
    sample_delta_conditional,
    sample_lambda_conditional,
)

from conftest import DenseFixture


def _identity_model(b, alpha=1.0, beta=1e-4):
    n = len(b)
    I = CovarianceOperator.identity(n)
    return HierarchicalModel(np.eye(n), b, I, I, alpha_lambda=alpha, beta_lambda=beta,
                             alpha_delta=alpha, beta_delta=beta)


class TestModel:
    def test_rejects_bad_shapes(self):
        I3 = CovarianceOperator.identity(3)
        with pytest.raises(ValueError):
            HierarchicalModel(np.eye(3), np.ones(2), I3, I3)
        with pytest.raises(ValueError):
            HierarchicalModel(np.eye(3), np.ones(3), I3, CovarianceOperator.identity(2))

    def test_hyperparameters_positive(self):
        with pytest.raises(ValueError):
            HyperParams(0.0, 1.0)
        with pytest.raises(ValueError):
            _identity_model(np.ones(2), alpha=0.0)

    def test_noise_covariance_needs_inverse(self):
        R = CovarianceOperator.from_dense(np.eye(3), with_factors=False)
        with pytest.raises(ValueError):
            HierarchicalModel(np.eye(3), np.ones(3), R, CovarianceOperator.identity(3))


class TestDenseOracle:
    def test_identity_fixture(self):
        b = np.array([2.0, -4.0, 6.0])
        orc = conditional_moments_dense(_identity_model(b), HyperParams(1.0, 1.0))
        np.testing.assert_allclose(orc.Gamma_cond, 0.5 * np.eye(3), atol=1e-15)
        np.testing.assert_allclose(orc.x_cond, b / 2, atol=1e-15)

    def test_data_dominated_limit(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((6, 6)) + 3 * np.eye(6)
        b = rng.standard_normal(6)
        I = CovarianceOperator.identity(6)
        orc = conditional_moments_dense(HierarchicalModel(A, b, I, I), HyperParams(1e8, 1.0))
        np.testing.assert_allclose(orc.x_cond, np.linalg.solve(A, b), rtol=1e-4)

    def test_random_fixture_against_explicit_inverse(self):
        fx = DenseFixture(1, 10, 8)
        hp = HyperParams(2.5, 0.4)
        orc = conditional_moments_dense(fx.model, hp)
        P = hp.lam * fx.A.T @ fx.R_inv @ fx.A + hp.delta * fx.Q_inv
        np.testing.assert_allclose(orc.Gamma_cond, np.linalg.inv(P), rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(orc.Gamma_cond @ P, np.eye(8), atol=1e-8)
        np.testing.assert_allclose(orc.chol @ orc.chol.T, orc.Gamma_cond, atol=1e-12)

    def test_cap(self):
        fx = DenseFixture(2, 10, 8)
        with pytest.raises(MemoryError):
            conditional_moments_dense(fx.model, HyperParams(1.0, 1.0), cap=5)

    def test_log_density_is_gaussian_in_x(self):
        fx = DenseFixture(3, 12, 9)
        hp = HyperParams(1.7, 0.6)
        orc = conditional_moments_dense(fx.model, hp)
        P = np.linalg.inv(orc.Gamma_cond)
        rng = np.random.default_rng(4)
        vals = []
        for _ in range(100):
            x = orc.x_cond + rng.standard_normal(9)
            d = x - orc.x_cond
            vals.append(log_conditional_density(fx.model, x, hp) + 0.5 * d @ P @ d)
        vals = np.array(vals)
        scale = np.abs(vals).max()
        assert np.var(vals) < 1e-16 * scale**2

    def test_log_density_zero_at_consistent_mean(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((5, 4))
        mu = rng.standard_normal(4)
        I4, I5 = CovarianceOperator.identity(4), CovarianceOperator.identity(5)
        model = HierarchicalModel(A, A @ mu, I5, I4, mu)
        assert log_conditional_density(model, mu, HyperParams(3.0, 2.0)) == 0.0

    def test_neg_log_posterior_minimized_at_gamma_modes(self):
        fx = DenseFixture(6, 15, 10)
        x = fx.mu + 0.3
        res = fx.model.residual_norm_sq(x)
        pn = (x - fx.mu) @ fx.Q_inv @ (x - fx.mu)
        lam_star = (fx.m / 2 + fx.model.alpha_lambda - 1) / (res / 2 + fx.model.beta_lambda)
        del_star = (fx.n / 2 + fx.model.alpha_delta - 1) / (pn / 2 + fx.model.beta_delta)
        f0 = neg_log_posterior(fx.model, x, HyperParams(lam_star, del_star))
        for s in (0.9, 1.1):
            assert neg_log_posterior(fx.model, x, HyperParams(s * lam_star, del_star)) > f0
            assert neg_log_posterior(fx.model, x, HyperParams(lam_star, s * del_star)) > f0


class TestGammaConditionals:
    def test_gamma_sample_mean(self):
        rng = np.random.default_rng(7)
        draws = np.array([gamma_sample(5.0, 2.0, rng) for _ in range(20000)])
        se = np.sqrt(5.0) / 2.0 / np.sqrt(draws.size)
        assert abs(draws.mean() - 2.5) < 4 * se

    def test_exponential_tail(self):
        rng = np.random.default_rng(8)
        draws = np.array([gamma_sample(1.0, 1.0, rng) for _ in range(20000)])
        p = np.exp(-1.0)
        assert abs(np.mean(draws > 1.0) - p) < 4 * np.sqrt(p * (1 - p) / draws.size)

    def test_gamma_sample_reproducible(self):
        a = [gamma_sample(3.0, 1.0, np.random.default_rng(9)) for _ in range(2)]
        assert a[0] == a[1]

    def test_gamma_sample_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            gamma_sample(0.0, 1.0, np.random.default_rng(0))

    def test_lambda_conditional_moments(self):
        fx = DenseFixture(10, 12, 6)
        x = fx.mu
        rng = np.random.default_rng(11)
        draws = np.array([sample_lambda_conditional(fx.model, x, rng) for _ in range(100000)])
        shape = fx.m / 2 + fx.model.alpha_lambda
        rate = 0.5 * fx.model.residual_norm_sq(x) + fx.model.beta_lambda
        se = np.sqrt(shape) / rate / np.sqrt(draws.size)
        assert abs(draws.mean() - shape / rate) < 4 * se

    def test_lambda_concentrates_for_noiseless_data(self):
        rng = np.random.default_rng(12)
        A = rng.standard_normal((40, 3))
        x = rng.standard_normal(3)
        I40, I3 = CovarianceOperator.identity(40), CovarianceOperator.identity(3)
        model = HierarchicalModel(A, A @ x + 1e-6 * rng.standard_normal(40), I40, I3, beta_lambda=1e-12)
        draws = [sample_lambda_conditional(model, x, rng) for _ in range(200)]
        assert np.median(draws) > 1e3

    def test_delta_conditional_example(self):
        I2 = CovarianceOperator.identity(2)
        model = HierarchicalModel(np.eye(2), np.ones(2), I2, I2, alpha_delta=1.0, beta_delta=1.0)
        rng = np.random.default_rng(13)
        draws = np.array([sample_delta_conditional(model, 0.0, rng) for _ in range(40000)])
        assert abs(draws.mean() - 2.0) < 4 * np.sqrt(2.0) / np.sqrt(draws.size)
        assert scipy.stats.kstest(draws, scipy.stats.gamma(a=2.0, scale=1.0).cdf).pvalue > 1e-3

    def test_delta_conditional_rejects_negative_norm(self):
        fx = DenseFixture(14, 5, 3)
        with pytest.raises(ValueError):
            sample_delta_conditional(fx.model, -1.0, np.random.default_rng(0))
