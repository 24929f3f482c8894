"""Hierarchical linear-Gaussian model, dense oracles and Gamma conditionals.

Model::

    b | x, lambda ~ N(A x, R / lambda)
    x | delta     ~ N(mu, Q / delta)
    lambda ~ Gamma(alpha_lambda, beta_lambda)    (shape, rate)
    delta  ~ Gamma(alpha_delta,  beta_delta)

All Gamma distributions use the shape-rate convention, density
``x^(a-1) exp(-b x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .operators import CovarianceOperator, LinearOperator, aslinearoperator, dense_materialize

DENSE_N_CAP = 2000


@dataclass(frozen=True)
class HyperParams:
    lam: float
    delta: float

    def __post_init__(self):
        if not (self.lam > 0 and self.delta > 0):
            raise ValueError(f"hyperparameters must be positive, got {self}")


@dataclass(frozen=True)
class HierarchicalModel:
    A: LinearOperator
    b: np.ndarray
    R: CovarianceOperator
    Q: CovarianceOperator
    mu: np.ndarray | None = None
    alpha_lambda: float = 1.0
    beta_lambda: float = 1e-4
    alpha_delta: float = 1.0
    beta_delta: float = 1e-4

    def __post_init__(self):
        A = aslinearoperator(self.A)
        object.__setattr__(self, "A", A)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "b", b)
        m, n = A.shape
        mu = np.zeros(n) if self.mu is None else np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "mu", mu)
        if b.shape != (m,) or mu.shape != (n,):
            raise ValueError("data or prior mean has the wrong length")
        if self.R.shape != (m, m) or self.Q.shape != (n, n):
            raise ValueError("covariance dimensions do not match A")
        if self.R.inverse is None:
            raise ValueError("noise covariance R needs an exact inverse")
        for name in ("alpha_lambda", "beta_lambda", "alpha_delta", "beta_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def m(self) -> int:
        return self.A.rows

    @property
    def n(self) -> int:
        return self.A.cols

    @property
    def R_inv(self) -> LinearOperator:
        return self.R.inverse

    def residual_norm_sq(self, x) -> float:
        """``||A x - b||^2_{R^{-1}}``."""
        r = self.A.apply(x) - self.b
        return float(r @ self.R_inv.apply(r))


@dataclass(frozen=True)
class DensePosteriorOracle:
    Gamma_cond: np.ndarray
    x_cond: np.ndarray
    chol: np.ndarray = field(repr=False)  # lower L with Gamma_cond = L L^T


class _DenseCache:
    """Dense ``A^T R^{-1} A``, ``A^T R^{-1} b`` and ``Q^{-1}`` for one model."""

    def __init__(self, model: HierarchicalModel, cap: int = DENSE_N_CAP):
        if model.n > cap:
            raise MemoryError(f"n={model.n} exceeds the dense oracle cap {cap}")
        A = dense_materialize(model.A)
        Rinv = dense_materialize(model.R_inv)
        self.H = A.T @ Rinv @ A
        self.H = 0.5 * (self.H + self.H.T)
        self.g = A.T @ (Rinv @ model.b)
        if model.Q.inverse is not None:
            Qi = dense_materialize(model.Q.inverse)
        else:
            Qd = dense_materialize(model.Q)
            Qi = scipy.linalg.solve(Qd, np.eye(model.n), assume_a="pos")
        self.Q_inv = 0.5 * (Qi + Qi.T)
        self.Q_inv_mu = self.Q_inv @ model.mu

    def precision(self, hp: HyperParams) -> np.ndarray:
        return hp.lam * self.H + hp.delta * self.Q_inv

    def rhs(self, hp: HyperParams) -> np.ndarray:
        return hp.lam * self.g + hp.delta * self.Q_inv_mu


def conditional_moments_dense(model: HierarchicalModel, hp: HyperParams,
                              cap: int = DENSE_N_CAP, _cache=None) -> DensePosteriorOracle:
    """Exact ``Gamma_cond = (lam A^T R^-1 A + delta Q^-1)^-1`` and ``x_cond``."""
    cache = _cache or _DenseCache(model, cap)
    P = cache.precision(hp)
    try:
        cP = scipy.linalg.cho_factor(P, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("conditional precision is numerically singular") from exc
    Gamma = scipy.linalg.cho_solve(cP, np.eye(model.n))
    Gamma = 0.5 * (Gamma + Gamma.T)
    x_cond = scipy.linalg.cho_solve(cP, cache.rhs(hp))
    return DensePosteriorOracle(Gamma, x_cond, np.linalg.cholesky(Gamma))


def _prior_norm_sq_dense(model, x, cache=None) -> float:
    d = np.asarray(x, dtype=float) - model.mu
    if cache is not None:
        return float(d @ cache.Q_inv @ d)
    if model.Q.inverse is not None:
        return float(d @ model.Q.inverse.apply(d))
    Qd = dense_materialize(model.Q)
    return float(d @ scipy.linalg.solve(Qd, d, assume_a="pos"))


def log_conditional_density(model: HierarchicalModel, x, hp: HyperParams,
                            prior_norm_sq: float | None = None) -> float:
    """``-(lam/2)||Ax-b||^2_{R^-1} - (delta/2)||x-mu||^2_{Q^-1}`` (up to a constant)."""
    if prior_norm_sq is None:
        prior_norm_sq = _prior_norm_sq_dense(model, x)
    return -0.5 * hp.lam * model.residual_norm_sq(x) - 0.5 * hp.delta * prior_norm_sq


def neg_log_posterior(model: HierarchicalModel, x, hp: HyperParams,
                      prior_norm_sq: float | None = None) -> float:
    """Joint MAP objective in ``(x, lambda, delta)``, constants dropped."""
    if prior_norm_sq is None:
        prior_norm_sq = _prior_norm_sq_dense(model, x)
    m, n = model.m, model.n
    return (
        0.5 * hp.lam * model.residual_norm_sq(x)
        + 0.5 * hp.delta * prior_norm_sq
        + model.beta_lambda * hp.lam
        + model.beta_delta * hp.delta
        - (m / 2 + model.alpha_lambda - 1) * np.log(hp.lam)
        - (n / 2 + model.alpha_delta - 1) * np.log(hp.delta)
    )


def gamma_sample(shape: float, rate: float, rng: np.random.Generator) -> float:
    """Shape-rate Gamma draw.

    numpy's ``standard_gamma`` is a Marsaglia-Tsang rejection sampler; the
    draw is reproducible given the generator state.
    """
    if not (shape > 0 and rate > 0):
        raise ValueError("gamma shape and rate must be positive")
    return float(rng.standard_gamma(shape)) / rate


def sample_lambda_conditional(model: HierarchicalModel, x, rng, residual_norm_sq=None) -> float:
    if residual_norm_sq is None:
        residual_norm_sq = model.residual_norm_sq(x)
    return gamma_sample(model.m / 2 + model.alpha_lambda,
                        0.5 * residual_norm_sq + model.beta_lambda, rng)


def sample_delta_conditional(model: HierarchicalModel, prior_norm_sq: float, rng) -> float:
    if prior_norm_sq < 0:
        raise ValueError("prior norm must be nonnegative")
    return gamma_sample(model.n / 2 + model.alpha_delta,
                        0.5 * prior_norm_sq + model.beta_delta, rng)
