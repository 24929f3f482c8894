import numpy as np
import pytest

from gkmcmc.operators import CovarianceOperator
from gkmcmc.posterior import HierarchicalModel


def random_spd(rng, n, cond=10.0):
    W, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.geomspace(1.0, cond, n)
    return (W * w) @ W.T


class DenseFixture:
    """Random dense model plus the matrices used by oracles."""

    def __init__(self, seed, m, n, mu_zero=False, diag_R=True):
        rng = np.random.default_rng(seed)
        self.A = rng.standard_normal((m, n))
        self.Q = random_spd(rng, n, cond=20.0)
        self.R = np.diag(rng.uniform(0.5, 2.0, m)) if diag_R else random_spd(rng, m, 5.0)
        self.R_inv = np.linalg.inv(self.R)
        self.Q_inv = np.linalg.inv(self.Q)
        self.mu = np.zeros(n) if mu_zero else rng.standard_normal(n)
        self.b = self.A @ rng.standard_normal(n) + 0.1 * rng.standard_normal(m)
        self.model = HierarchicalModel(
            self.A, self.b, CovarianceOperator.from_dense(self.R),
            CovarianceOperator.from_dense(self.Q), self.mu,
        )
        self.m, self.n = m, n

    def tikhonov(self, lam, delta):
        P = lam * self.A.T @ self.R_inv @ self.A + delta * self.Q_inv
        rhs = lam * self.A.T @ self.R_inv @ self.b + delta * self.Q_inv @ self.mu
        return np.linalg.solve(P, rhs), P, rhs

    def sqrt_Q(self):
        w, U = np.linalg.eigh(self.Q)
        return (U * np.sqrt(w)) @ U.T


@pytest.fixture
def dense_fixture():
    return DenseFixture


@pytest.fixture
def small_model():
    return DenseFixture(3, 20, 15)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
