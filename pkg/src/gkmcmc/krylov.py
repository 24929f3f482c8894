"""Generalized Golub-Kahan bidiagonalization and Lanczos matrix functions.

The genGK process builds ``U_{k+1}`` (orthonormal in the ``R^{-1}`` inner
product), ``V_{k+1}`` (orthonormal in the ``Q`` inner product) and the lower
bidiagonal ``B_k`` so that::

    A Q V_k       = U_{k+1} B_k
    A^T R^{-1} U_{k+1} = V_k B_k^T + alpha_{k+1} v_{k+1} e_{k+1}^T

The factorization does not depend on the hyperparameters, so a single run is
reused for every ``(lambda, delta)`` visited by a sampler.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .operators import (
    CovarianceOperator,
    LinearOperator,
    aslinearoperator,
    dense_materialize,
    read_matrix_market,
    write_matrix_market,
)

log = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-14
THETA_CLAMP = 1e-14
DENSE_SQRT_CAP = 2000
LANCZOS_DENSE_CHECKS = 10
LANCZOS_CHECK_STRIDE = 5


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class GenGKState:
    """Output of :func:`gengk_bidiagonalize`.

    ``alpha`` and ``gamma`` hold ``alpha_1..alpha_{k+1}`` and
    ``gamma_1..gamma_{k+1}``.  ``V_full`` keeps ``v_{k+1}`` (needed by the
    preconditioned acceptance ratio); ``QV_full = Q @ V_full`` is cached so
    that the genGK mean needs no extra ``Q`` products.
    """

    U: np.ndarray
    V_full: np.ndarray
    QV_full: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    requested_k: int
    A: LinearOperator | None = field(default=None, repr=False, compare=False)
    R_inv: LinearOperator | None = field(default=None, repr=False, compare=False)
    Q: LinearOperator | None = field(default=None, repr=False, compare=False)
    b: np.ndarray | None = field(default=None, repr=False, compare=False)
    mu: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.alpha.size - 1

    @property
    def truncated(self) -> bool:
        """True when breakdown stopped the process before ``requested_k``."""
        return self.k < self.requested_k

    @property
    def V(self) -> np.ndarray:
        return self.V_full[:, : self.k]

    @property
    def QV(self) -> np.ndarray:
        return self.QV_full[:, : self.k]

    @property
    def v_next(self) -> np.ndarray:
        return self.V_full[:, self.k]

    @cached_property
    def B(self) -> np.ndarray:
        k = self.k
        B = np.zeros((k + 1, k))
        B[np.arange(k), np.arange(k)] = self.alpha[:k]
        B[np.arange(1, k + 1), np.arange(k)] = self.gamma[1 : k + 1]
        return B

    @property
    def beta(self) -> float:
        """``gamma_1 = ||b - A mu||_{R^{-1}}``."""
        return float(self.gamma[0])

    def save(self, directory) -> None:
        """Write ``U``, ``V``, ``alpha``, ``gamma`` (plus ``QV``) as Matrix Market files."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_matrix_market(d / "U.mtx", self.U)
        write_matrix_market(d / "V.mtx", self.V_full)
        write_matrix_market(d / "QV.mtx", self.QV_full)
        write_matrix_market(d / "alpha.mtx", self.alpha)
        write_matrix_market(d / "gamma.mtx", self.gamma)
        (d / "requested_k.txt").write_text(f"{self.requested_k}\n")

    @classmethod
    def load(cls, directory, A=None, R_inv=None, Q=None, b=None, mu=None) -> GenGKState:
        d = Path(directory)
        V = read_matrix_market(d / "V.mtx")
        if (d / "QV.mtx").exists():
            QV = read_matrix_market(d / "QV.mtx")
        elif Q is not None:
            QV = aslinearoperator(Q).apply(V)
        else:
            raise FileNotFoundError("checkpoint lacks QV.mtx and no Q operator was given")
        req = d / "requested_k.txt"
        alpha = read_matrix_market(d / "alpha.mtx").ravel()
        return cls(
            U=read_matrix_market(d / "U.mtx"),
            V_full=V,
            QV_full=QV,
            alpha=alpha,
            gamma=read_matrix_market(d / "gamma.mtx").ravel(),
            requested_k=int(req.read_text()) if req.exists() else alpha.size - 1,
            A=A, R_inv=R_inv, Q=Q, b=b, mu=mu,
        )


def gengk_bidiagonalize(A, R_inv, Q, b, mu=None, k: int = 10, reorth: bool = True) -> GenGKState:
    """Run ``k`` steps of generalized Golub-Kahan bidiagonalization.

    On breakdown (``alpha`` or ``gamma`` below ``1e-14 * gamma_1``) the state is
    truncated at the achieved rank and the remaining coefficient is set to 0;
    check ``state.truncated``.
    """
    A = aslinearoperator(A)
    R_inv = aslinearoperator(R_inv)
    Q = aslinearoperator(Q)
    m, n = A.shape
    if R_inv.shape != (m, m) or Q.shape != (n, n):
        raise ValueError("inconsistent operator dimensions")
    if k < 1:
        raise ValueError("k must be at least 1")
    b = np.asarray(b, dtype=float)
    mu = np.zeros(n) if mu is None else np.asarray(mu, dtype=float)
    if b.shape != (m,) or mu.shape != (n,):
        raise ValueError("inconsistent vector dimensions")

    U = np.zeros((m, k + 1))
    RU = np.zeros((m, k + 1))  # R^{-1} U
    V = np.zeros((n, k + 1))
    QV = np.zeros((n, k + 1))
    alpha = np.zeros(k + 1)
    gamma = np.zeros(k + 1)

    r0 = b - A.apply(mu)
    Rr = R_inv.apply(r0)
    g1 = np.sqrt(max(float(r0 @ Rr), 0.0))
    if g1 == 0.0:
        raise ValueError("zero initial residual: b == A mu")
    tol = BREAKDOWN_TOL * g1
    gamma[0] = g1
    U[:, 0], RU[:, 0] = r0 / g1, Rr / g1

    def _v_step(j, v):
        # v: unnormalized candidate for column j
        Qv = Q.apply(v)
        if reorth:
            for _ in range(2):
                c = QV[:, :j].T @ v
                v = v - V[:, :j] @ c
                Qv = Qv - QV[:, :j] @ c
        a = np.sqrt(max(float(v @ Qv), 0.0))
        if a > tol:
            V[:, j], QV[:, j] = v / a, Qv / a
        return a

    def _u_step(j, u):
        Ru = R_inv.apply(u)
        if reorth:
            for _ in range(2):
                c = RU[:, :j].T @ u
                u = u - U[:, :j] @ c
                Ru = Ru - RU[:, :j] @ c
        g = np.sqrt(max(float(u @ Ru), 0.0))
        if g > tol:
            U[:, j], RU[:, j] = u / g, Ru / g
        return g

    alpha[0] = _v_step(0, A.apply_transpose(RU[:, 0]))
    achieved = k
    if alpha[0] <= tol:
        raise ValueError("A^T R^{-1} (b - A mu) vanishes; nothing to bidiagonalize")
    for i in range(k):
        # gamma_{i+2} u_{i+2} = A Q v_{i+1} - alpha_{i+1} u_{i+1}
        u = A.apply(QV[:, i]) - alpha[i] * U[:, i]
        gamma[i + 1] = _u_step(i + 1, u)
        if gamma[i + 1] <= tol:
            gamma[i + 1] = 0.0
            achieved = i + 1
            break
        v = A.apply_transpose(RU[:, i + 1]) - gamma[i + 1] * V[:, i]
        alpha[i + 1] = _v_step(i + 1, v)
        if alpha[i + 1] <= tol:
            alpha[i + 1] = 0.0
            achieved = i + 1
            break

    kk = achieved
    if kk < k:
        log.info("genGK breakdown after %d of %d iterations", kk, k)
    return GenGKState(
        U=U[:, : kk + 1].copy(),
        V_full=V[:, : kk + 1].copy(),
        QV_full=QV[:, : kk + 1].copy(),
        alpha=alpha[: kk + 1].copy(),
        gamma=gamma[: kk + 1].copy(),
        requested_k=k,
        A=A, R_inv=R_inv, Q=Q, b=b, mu=mu,
    )


def projected_tikhonov_solve(state: GenGKState, lam: float, delta: float) -> np.ndarray:
    """Minimize ``lam ||B z - gamma_1 e_1||^2 + delta ||z||^2``.

    Solved through a QR factorization of the stacked ``(2k+1) x k`` system.
    """
    if not (lam > 0 and delta > 0):
        raise ValueError("lambda and delta must be positive")
    return _projected_solve(state.B, state.beta, lam, delta)


def _projected_solve(B, beta, lam, delta):
    kp1, k = B.shape
    M = np.vstack([np.sqrt(lam) * B, np.sqrt(delta) * np.eye(k)])
    rhs = np.zeros(kp1 + k)
    rhs[0] = np.sqrt(lam) * beta
    Qf, Rf = np.linalg.qr(M)
    return scipy.linalg.solve_triangular(Rf, Qf.T @ rhs)


def gengk_solution(state: GenGKState, z) -> np.ndarray:
    """``x_k = mu + Q V_k z``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (state.k,):
        raise ValueError(f"expected {state.k} coefficients, got shape {z.shape}")
    return state.mu + state.QV @ z


# --------------------------------------------------------------------------
# Lanczos matrix functions


@dataclass(frozen=True)
class LanczosConfig:
    maxiter: int = 200
    tol: float = 1e-10
    reorth: bool = True

    def __post_init__(self):
        if self.maxiter < 1:
            raise ValueError("maxiter must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


class LanczosInfo(NamedTuple):
    converged: bool
    iterations: int


def lanczos_funm_apply(matvec: Callable, v, f: Callable, cfg: LanczosConfig = LanczosConfig()):
    """Approximate ``f(M) v`` for SPD ``M`` given only ``matvec``.

    Returns ``(w, info)``.  Stops when the iterate changed by at most
    ``cfg.tol * ||w||`` since the previous convergence check, when an invariant
    subspace is found, or at ``cfg.maxiter`` (then ``info.converged`` is
    False).  Checks run at every step up to ``LANCZOS_DENSE_CHECKS`` and every
    ``LANCZOS_CHECK_STRIDE`` steps after that.
    """
    v = np.asarray(v, dtype=float)
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return np.zeros_like(v), LanczosInfo(True, 0)
    n = v.size
    m_max = min(cfg.maxiter, n)
    Vb = np.zeros((n, m_max + 1))
    diag = np.zeros(m_max)
    off = np.zeros(m_max)
    Vb[:, 0] = v / nv

    def coefficients(m):
        theta, S = scipy.linalg.eigh_tridiagonal(diag[:m], off[: m - 1])
        if theta[0] <= 0:
            raise np.linalg.LinAlgError("Lanczos tridiagonal is not positive definite")
        return nv * (S @ (f(theta) * S[0, :]))

    def iterate(c):
        return Vb[:, : c.size] @ c

    c_prev = w_prev = None
    for j in range(m_max):
        q = matvec(Vb[:, j])
        if j > 0:
            q = q - off[j - 1] * Vb[:, j - 1]
        diag[j] = Vb[:, j] @ q
        q = q - diag[j] * Vb[:, j]
        if cfg.reorth:
            for _ in range(2):
                q = q - Vb[:, : j + 1] @ (Vb[:, : j + 1].T @ q)
        beta = float(np.linalg.norm(q))
        off[j] = beta
        m = j + 1
        invariant = beta <= 1e-14 * max(abs(diag[:m]).max(), 1.0)
        if invariant or m == n:
            return iterate(coefficients(m)), LanczosInfo(True, m)
        if m <= LANCZOS_DENSE_CHECKS or m % LANCZOS_CHECK_STRIDE == 0 or m == m_max:
            c = coefficients(m)
            if cfg.reorth:
                # orthonormal basis: the change can be measured on coefficients
                if c_prev is not None:
                    dc = c.copy()
                    dc[: c_prev.size] -= c_prev
                    if np.linalg.norm(dc) <= cfg.tol * np.linalg.norm(c):
                        return iterate(c), LanczosInfo(True, m)
                c_prev = c
            else:
                w = iterate(c)
                if w_prev is not None and np.linalg.norm(w - w_prev) <= cfg.tol * np.linalg.norm(w):
                    return w, LanczosInfo(True, m)
                w_prev = w
        Vb[:, j + 1] = q / beta
    return iterate(c_prev) if cfg.reorth else w_prev, LanczosInfo(False, m_max)


def lanczos_sqrt_apply(Q, v, cfg: LanczosConfig = LanczosConfig()):
    """Approximate ``Q^{1/2} v``; returns ``(w, info)``."""
    Q = aslinearoperator(Q)
    return lanczos_funm_apply(Q.apply, v, np.sqrt, cfg)


def precond_inv_sqrt_apply(G, F, xi, cfg: LanczosConfig = LanczosConfig()):
    """Approximate ``(G F G^T)^{-1/2} xi``; returns ``(w, info)``."""
    G = aslinearoperator(G)
    F = aslinearoperator(F)

    def mv(x):
        return G.apply(F.apply(G.apply_transpose(x)))

    return lanczos_funm_apply(mv, xi, lambda t: 1.0 / np.sqrt(t), cfg)


def make_sqrt_apply(Q, cfg: LanczosConfig = LanczosConfig(), dense_cap: int = DENSE_SQRT_CAP):
    """Return a callable applying ``Q^{1/2}`` to vectors or column blocks.

    Uses, in order: an exact ``Q.sqrt`` operator, a dense eigendecomposition
    when ``n <= dense_cap``, and Lanczos otherwise.  Lanczos non-convergence
    raises a :class:`ConvergenceWarning`.
    """
    if isinstance(Q, CovarianceOperator) and Q.sqrt is not None:
        return Q.sqrt.apply
    Q = aslinearoperator(Q)
    if Q.rows <= dense_cap:
        M = dense_materialize(Q)
        w, U = np.linalg.eigh(0.5 * (M + M.T))
        S = (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T
        return lambda x: S @ np.asarray(x, dtype=float)

    def _apply(x):
        x = np.asarray(x, dtype=float)
        cols = x[:, None] if x.ndim == 1 else x
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            if not np.any(cols[:, j]):
                out[:, j] = 0.0
                continue
            out[:, j], info = lanczos_sqrt_apply(Q, cols[:, j], cfg)
            if not info.converged:
                warnings.warn("Lanczos square root did not converge", ConvergenceWarning)
        return out[:, 0] if x.ndim == 1 else out

    return _apply


# --------------------------------------------------------------------------
# low-rank factors of the prior-preconditioned Hessian


@dataclass(frozen=True)
class LowRankSqrtFactors:
    """``Z diag(theta) Z^T ≈ Q^{1/2} A^T R^{-1} A Q^{1/2}``, theta non-increasing."""

    Z: np.ndarray
    theta: np.ndarray

    def D(self, lam: float, delta: float) -> np.ndarray:
        return dk_matrix(self.theta, lam, delta)


def lowrank_sqrt_factors(state: GenGKState, sqrt_apply: Callable | None = None,
                         cfg: LanczosConfig = LanczosConfig()) -> LowRankSqrtFactors:
    """Eigen-representation of ``Q^{1/2} V_k B_k^T B_k V_k^T Q^{1/2}``.

    ``B_k = Q1 R1`` and ``Q^{1/2} V_k R1^T = Q2 R2`` (thin QR), then
    ``R2 R2^T = W Theta W^T`` and ``Z = Q2 W``.
    """
    if sqrt_apply is None:
        if state.Q is None:
            raise ValueError("state carries no Q operator; pass sqrt_apply")
        sqrt_apply = make_sqrt_apply(state.Q, cfg)
    _, R1 = np.linalg.qr(state.B)
    M = sqrt_apply(state.V) @ R1.T
    Q2, R2 = np.linalg.qr(M)
    theta, W = np.linalg.eigh(R2 @ R2.T)
    order = np.argsort(theta)[::-1]
    theta, W = theta[order], W[:, order]
    tmax = theta[0] if theta.size else 0.0
    theta = np.where(theta < THETA_CLAMP * max(tmax, 0.0), 0.0, theta)
    theta = np.clip(theta, 0.0, None)
    return LowRankSqrtFactors(Z=Q2 @ W, theta=theta)


def dk_matrix(theta, lam: float, delta: float) -> np.ndarray:
    """Diagonal of ``D_k = I - (I + (lam/delta) Theta)^{-1/2}``; entries in ``[0, 1)``."""
    theta = np.asarray(theta, dtype=float)
    return 1.0 - 1.0 / np.sqrt(1.0 + (lam / delta) * theta)
