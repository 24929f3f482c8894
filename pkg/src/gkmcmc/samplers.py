"""Gibbs and Metropolis-Hastings-within-Gibbs samplers.

Every sampler draws ``lambda`` and ``delta`` from their Gamma conditionals at
the previous state, then updates ``x``.  Block Gibbs draws ``x`` exactly; the
independence samplers propose from an approximation of the conditional
Gaussian and accept with ``min(1, w(x*) / w(x))`` evaluated in the log domain.

The prior norm ``||x - mu||^2_{Q^{-1}}`` needed by the ``delta`` conditional is
carried along with each state from the proposal that produced it, so no
sampler other than the dense ones ever applies ``Q^{-1}``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from .krylov import (
    ConvergenceWarning,
    GenGKState,
    LanczosConfig,
    LowRankSqrtFactors,
    dk_matrix,
    gengk_bidiagonalize,
    lowrank_sqrt_factors,
    make_sqrt_apply,
    precond_inv_sqrt_apply,
    projected_tikhonov_solve,
)
from .operators import LinearOperator, aslinearoperator, dense_materialize
from .posterior import (
    HierarchicalModel,
    HyperParams,
    _DenseCache,
    sample_delta_conditional,
    sample_lambda_conditional,
)

log = logging.getLogger(__name__)

PROPOSALS = ("gengk", "precond", "tsvd", "rsvd", "exact-dense")


@dataclass(frozen=True)
class SamplerConfig:
    samples: int = 500
    burn_in: float = 0.10
    rank: int = 10
    proposal: str = "gengk"
    lanczos: LanczosConfig = LanczosConfig()
    store_x: bool = False
    seed: int = 0
    oversampling: int = 5
    fixed_hyper: bool = False
    init: HyperParams | None = None
    dense_sqrt_cap: int = 2000

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("need at least one sample")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn-in fraction must lie in [0, 1)")
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.proposal not in PROPOSALS:
            raise ValueError(f"unknown proposal {self.proposal!r}; choose from {PROPOSALS}")
        if self.oversampling < 0:
            raise ValueError("oversampling must be nonnegative")

    @property
    def burn_in_count(self) -> int:
        return int(math.floor(self.burn_in * self.samples))


class RunningMoments:
    """Welford accumulator for componentwise mean and unbiased variance."""

    def __init__(self, n: int):
        self.count = 0
        self.mean = np.zeros(n)
        self._m2 = np.zeros(n)

    def update(self, x) -> None:
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self._m2 += d * (x - self.mean)

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, np.nan)
        return self._m2 / (self.count - 1)

    def state(self) -> dict:
        return {"count": self.count, "mean": self.mean.copy(), "m2": self._m2.copy()}

    @classmethod
    def from_state(cls, st) -> RunningMoments:
        rm = cls(len(st["mean"]))
        rm.count = int(st["count"])
        rm.mean = np.array(st["mean"], dtype=float)
        rm._m2 = np.array(st["m2"], dtype=float)
        return rm


CSV_HEADER = "t,lambda,delta,accepted,log_weight"


@dataclass
class Chain:
    """Sampled hyperparameters, acceptance flags and ``x`` summaries.

    ``x`` holds every state (``T x n``) when requested; ``moments`` always
    accumulates the states after burn-in.
    """

    lam: np.ndarray
    delta: np.ndarray
    accepted: np.ndarray
    log_weight: np.ndarray
    burn_in: int
    moments: RunningMoments | None = None
    x: np.ndarray | None = None
    proposal: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.lam.size

    @property
    def acceptance_count(self) -> int:
        return int(np.count_nonzero(self.accepted))

    def acceptance_rate(self, after_burn_in: bool = False) -> float:
        acc = self.accepted[self.burn_in:] if after_burn_in else self.accepted
        return float(np.mean(acc)) if acc.size else float("nan")

    def to_csv(self, path) -> None:
        rows = [CSV_HEADER]
        for t in range(len(self)):
            rows.append(
                f"{t},{float(self.lam[t])!r},{float(self.delta[t])!r},{int(self.accepted[t])},{float(self.log_weight[t])!r}"
            )
        Path(path).write_text("\n".join(rows) + "\n")

    @classmethod
    def from_csv(cls, path, burn_in: int | None = None) -> Chain:
        lines = Path(path).read_text().strip().splitlines()
        if not lines or lines[0].strip() != CSV_HEADER:
            raise ValueError(f"{path}: expected header {CSV_HEADER!r}")
        try:
            data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], ndmin=2)
        except ValueError as exc:
            raise ValueError(f"{path}: malformed row ({exc})") from exc
        if data.size == 0 or data.shape[1] != 5:
            raise ValueError(f"{path}: expected 5 columns and at least one row")
        return cls(
            lam=data[:, 1], delta=data[:, 2], accepted=data[:, 3].astype(bool),
            log_weight=data[:, 4], burn_in=0 if burn_in is None else burn_in,
        )


# --------------------------------------------------------------------------
# proposal factors


@dataclass(frozen=True)
class GenGKFactors:
    state: GenGKState
    lowrank: LowRankSqrtFactors
    sqrt_apply: Callable = field(repr=False)
    kind: str = "gengk"


@dataclass(frozen=True)
class SVDFactors:
    """Low-rank ``H = L A^T R^-1 A L^T ≈ V diag(theta) V^T`` with ``Q = L^T L``."""

    L: np.ndarray = field(repr=False)
    V: np.ndarray
    theta: np.ndarray
    kind: str = "tsvd"


@dataclass(frozen=True)
class PrecondFactors:
    state: GenGKState
    G: LinearOperator
    lanczos: LanczosConfig = LanczosConfig()
    kind: str = "precond"


def gengk_factors(model: HierarchicalModel, k: int, cfg: SamplerConfig | None = None,
                  state: GenGKState | None = None) -> GenGKFactors:
    cfg = cfg or SamplerConfig(rank=k)
    if state is None:
        state = gengk_bidiagonalize(model.A, model.R_inv, model.Q, model.b, model.mu, k)
    sqrt_apply = make_sqrt_apply(model.Q, cfg.lanczos, cfg.dense_sqrt_cap)
    return GenGKFactors(state, lowrank_sqrt_factors(state, sqrt_apply), sqrt_apply)


def gengk_proposal_draw(factors: GenGKFactors, z_k, hp: HyperParams, rng):
    """``x* = mu + Q V_k z_k + delta^{-1/2} Q^{1/2} (I - Z D Z^T) xi``; returns ``(x*, xi)``."""
    xi = rng.standard_normal(factors.state.V.shape[0])
    return _gengk_draw_from_xi(factors, z_k, hp, xi), xi


def _gengk_draw_from_xi(factors, z_k, hp, xi):
    st, lr = factors.state, factors.lowrank
    D = lr.D(hp.lam, hp.delta)
    y = xi - lr.Z @ (D * (lr.Z.T @ xi))
    return st.mu + st.QV @ z_k + factors.sqrt_apply(y) / np.sqrt(hp.delta)


def _gengk_quadratic(factors: GenGKFactors, model: HierarchicalModel, x, Ax=None, A_mu=None) -> float:
    # ||A y||^2_{R^-1} - ||B_k V_k^T y||^2 with y = x - mu
    st = factors.state
    y = np.asarray(x, dtype=float) - st.mu
    Ay = model.A.apply(y) if Ax is None else Ax - A_mu
    By = st.B @ (st.V.T @ y)
    return float(Ay @ model.R_inv.apply(Ay) - By @ By)


def gengk_log_weight(factors: GenGKFactors, model: HierarchicalModel, hp: HyperParams, x) -> float:
    """``log w(x) = -(lam/2) (||A y||^2_{R^-1} - ||B_k V_k^T y||^2)``, ``y = x - mu``.

    Uses ``Q^{-1/2} Z Theta Z^T Q^{-1/2} = V_k B_k^T B_k V_k^T``; one ``A`` product.
    """
    return -0.5 * hp.lam * _gengk_quadratic(factors, model, x)


def gengk_prior_norm(factors: GenGKFactors, z_k, xi, hp: HyperParams, x_star) -> float:
    """``||x* - mu||^2_{Q^-1}`` for a draw made with ``(z_k, xi)`` at ``hp``.

    ``(V z)^T (Q V z + 2 s) + delta^{-1} xi^T (I + Z (D^2 - 2D) Z^T) xi`` where
    ``s = x* - mu - Q V z`` is the scaled square-root term of the draw.
    """
    st, lr = factors.state, factors.lowrank
    Vz = st.V @ z_k
    QVz = st.QV @ z_k
    s = np.asarray(x_star, dtype=float) - st.mu - QVz
    D = lr.D(hp.lam, hp.delta)
    c = lr.Z.T @ xi
    return float(Vz @ (QVz + 2.0 * s) + (xi @ xi + c @ ((D * D - 2.0 * D) * c)) / hp.delta)


def build_F(state: GenGKState, hp: HyperParams) -> LinearOperator:
    """``F = (delta/lam) Q + Q A^T R^-1 A Q`` as a composite operator."""
    Q, A, R_inv = state.Q, state.A, state.R_inv
    return (hp.delta / hp.lam) * Q + Q @ A.T @ R_inv @ A @ Q


def precond_proposal_draw(factors: PrecondFactors, z_k, hp: HyperParams, rng, F=None):
    """``x* = x_k + lam^{-1/2} Q G^T (G F G^T)^{-1/2} xi``.

    Returns ``(x*, xi, s_vec)`` with ``s_vec = G^T (G F G^T)^{-1/2} xi``.
    """
    x, xi, s_vec, info = _precond_draw(factors, z_k, hp, rng, F)
    if not info.converged:
        warnings.warn("preconditioned Lanczos did not converge", ConvergenceWarning)
    return x, xi, s_vec


def _precond_draw(factors, z_k, hp, rng, F=None):
    st = factors.state
    xi = rng.standard_normal(st.V.shape[0])
    F = build_F(st, hp) if F is None else F
    w, info = precond_inv_sqrt_apply(factors.G, F, xi, factors.lanczos)
    s_vec = factors.G.apply_transpose(w)
    x = st.mu + st.QV @ z_k + st.Q.apply(s_vec) / np.sqrt(hp.lam)
    return x, xi, s_vec, info


def _precond_direction(state: GenGKState, z_k, hp: HyperParams) -> np.ndarray:
    # lam (gamma_1 alpha_1 v_1 - V_{k+1} [B^T; alpha_{k+1} e^T] B z) - delta V z
    k = state.k
    Bz = state.B @ z_k
    VBtBz = state.V @ (state.B.T @ Bz)
    tail = state.alpha[k] * state.gamma[k] * z_k[-1] * state.v_next
    Vz = state.V @ z_k
    return hp.lam * (state.gamma[0] * state.alpha[0] * state.V_full[:, 0] - VBtBz - tail) - hp.delta * Vz


def precond_log_accept(state: GenGKState, z_k, hp: HyperParams, x_star, x_prev) -> float:
    """``log alpha_2 = (x* - x)^T direction``; no operator products."""
    if state.V_full.shape[1] < state.k + 1:
        raise ValueError("state must hold v_{k+1}")
    d = np.asarray(x_star, dtype=float) - np.asarray(x_prev, dtype=float)
    return float(d @ _precond_direction(state, z_k, hp))


def precond_prior_norm(state: GenGKState, x, z_k, s_vec, lam: float) -> float:
    """``(x - mu)^T (V_k z_k + lam^{-1/2} s_vec)`` for a preconditioned draw ``x``."""
    y = np.asarray(x, dtype=float) - state.mu
    return float(y @ (state.V @ z_k + np.asarray(s_vec) / np.sqrt(lam)))


def _default_L(model: HierarchicalModel) -> np.ndarray:
    Qd = dense_materialize(model.Q)
    C = np.linalg.cholesky(0.5 * (Qd + Qd.T))
    return C.T  # Q = C C^T = L^T L


def _R_inv_factor(model):
    Ri = dense_materialize(model.R_inv)
    return np.linalg.cholesky(0.5 * (Ri + Ri.T))


def tsvd_proposal_factors(model: HierarchicalModel, L=None, k: int = 10) -> SVDFactors:
    """Top-``k`` right singular pairs of ``R^{-1/2} A L^T``."""
    L = _default_L(model) if L is None else np.asarray(L, dtype=float)
    A = dense_materialize(model.A)
    M = _R_inv_factor(model).T @ A @ L.T
    _, s, Vh = np.linalg.svd(M, full_matrices=False)
    k = min(k, s.size)
    return SVDFactors(L=L, V=Vh[:k].T.copy(), theta=s[:k] ** 2, kind="tsvd")


def rsvd_proposal_factors(model: HierarchicalModel, L=None, k: int = 10, p: int = 5,
                          rng=None) -> SVDFactors:
    """Randomized range finder on ``H = L A^T R^-1 A L^T`` with ``k + p`` probes."""
    rng = np.random.default_rng() if rng is None else rng
    L = _default_L(model) if L is None else np.asarray(L, dtype=float)
    n = model.n
    ell = min(k + p, n)

    def H(X):
        return L @ model.A.apply_transpose(model.R_inv.apply(model.A.apply(L.T @ X)))

    Omega = rng.standard_normal((n, ell))
    Qh, _ = np.linalg.qr(H(Omega))
    T = Qh.T @ H(Qh)
    theta, U = np.linalg.eigh(0.5 * (T + T.T))
    order = np.argsort(theta)[::-1][: min(k, ell)]
    theta = np.clip(theta[order], 0.0, None)
    return SVDFactors(L=L, V=Qh @ U[:, order], theta=theta, kind="rsvd")


# --------------------------------------------------------------------------
# proposals used by the MH-within-Gibbs loop


@dataclass
class _State:
    x: np.ndarray
    prior_norm: float
    resid_sq: float
    q: float = float("nan")  # hyperparameter-free weight quadratic


class _GenGKProposal:
    def __init__(self, model, factors: GenGKFactors):
        self.model, self.f = model, factors
        self.A_mu = model.A.apply(model.mu)

    def condition(self, hp):
        self.hp = hp
        self.z = projected_tikhonov_solve(self.f.state, hp.lam, hp.delta)

    def _finish(self, x, prior_norm):
        Ax = self.model.A.apply(x)
        r = Ax - self.model.b
        resid = float(r @ self.model.R_inv.apply(r))
        q = _gengk_quadratic(self.f, self.model, x, Ax=Ax, A_mu=self.A_mu)
        return _State(x, prior_norm, resid, q)

    def initial(self, hp):
        self.condition(hp)
        st = self.f.state
        return self._finish(st.mu + st.QV @ self.z, float(self.z @ (st.V.T @ (st.QV @ self.z))))

    def propose(self, rng):
        x, xi = gengk_proposal_draw(self.f, self.z, self.hp, rng)
        return self._finish(x, gengk_prior_norm(self.f, self.z, xi, self.hp, x))

    def log_weight(self, s: _State, hp):
        return -0.5 * hp.lam * s.q


class _SVDProposal:
    def __init__(self, model, factors: SVDFactors):
        self.model, self.f = model, factors
        g = model.A.apply_transpose(model.R_inv.apply(model.b - model.A.apply(model.mu)))
        self.Lg = factors.L @ g
        self.A_mu = model.A.apply(model.mu)

    def condition(self, hp):
        self.hp = hp
        f = self.f
        shrink = hp.lam * f.theta / (hp.delta + hp.lam * f.theta)
        v = hp.lam * self.Lg
        self.c_mean = (v - f.V @ (shrink * (f.V.T @ v))) / hp.delta  # L^{-T}(mean - mu)
        self.D = dk_matrix(f.theta, hp.lam, hp.delta)

    def _finish(self, c):
        f, model = self.f, self.model
        x = model.mu + f.L.T @ c
        Ax = model.A.apply(x)
        r = Ax - model.b
        Ay = Ax - self.A_mu
        proj = np.sqrt(f.theta) * (f.V.T @ c)
        q = float(Ay @ model.R_inv.apply(Ay) - proj @ proj)
        return _State(x, float(c @ c), float(r @ model.R_inv.apply(r)), q)

    def initial(self, hp):
        self.condition(hp)
        return self._finish(self.c_mean)

    def propose(self, rng):
        f = self.f
        xi = rng.standard_normal(f.L.shape[0])
        c = self.c_mean + (xi - f.V @ (self.D * (f.V.T @ xi))) / np.sqrt(self.hp.delta)
        return self._finish(c)

    def log_weight(self, s: _State, hp):
        return -0.5 * hp.lam * s.q


class _PrecondProposal:
    def __init__(self, model, factors: PrecondFactors):
        self.model, self.f = model, factors
        self.nonconverged = 0
        self.iterations = []

    def condition(self, hp):
        self.hp = hp
        st = self.f.state
        self.z = projected_tikhonov_solve(st, hp.lam, hp.delta)
        self.direction = _precond_direction(st, self.z, hp)
        self.F = build_F(st, hp)

    def _resid(self, x):
        r = self.model.A.apply(x) - self.model.b
        return float(r @ self.model.R_inv.apply(r))

    def initial(self, hp):
        self.condition(hp)
        st = self.f.state
        x = st.mu + st.QV @ self.z
        return _State(x, float((st.V @ self.z) @ (st.QV @ self.z)), self._resid(x))

    def propose(self, rng):
        st = self.f.state
        x, xi, s_vec, info = _precond_draw(self.f, self.z, self.hp, rng, F=self.F)
        self.iterations.append(info.iterations)
        if not info.converged:
            self.nonconverged += 1
        return _State(x, precond_prior_norm(st, x, self.z, s_vec, self.hp.lam), self._resid(x))

    def log_weight(self, s: _State, hp):
        return float((s.x - self.f.state.mu) @ self.direction)


class _ExactProposal:
    """Draws from the exact conditional; every proposal is accepted."""

    def __init__(self, model):
        self.model = model
        self.cache = _DenseCache(model)

    def condition(self, hp):
        self.hp = hp
        P = self.cache.precision(hp)
        self.chol = np.linalg.cholesky(P)
        self.mean = scipy.linalg.cho_solve((self.chol, True), self.cache.rhs(hp))

    def _finish(self, x):
        d = x - self.model.mu
        r = self.model.A.apply(x) - self.model.b
        return _State(x, float(d @ self.cache.Q_inv @ d), float(r @ self.model.R_inv.apply(r)), 0.0)

    def initial(self, hp):
        self.condition(hp)
        return self._finish(self.mean)

    def propose(self, rng):
        eps = rng.standard_normal(self.model.n)
        return self._finish(self.mean + scipy.linalg.solve_triangular(self.chol.T, eps, lower=False))

    def log_weight(self, s, hp):
        return 0.0


# --------------------------------------------------------------------------
# checkpointing


@dataclass(frozen=True)
class Checkpoint:
    """Periodic snapshot enabling an exact resume of one chain."""

    path: Path
    every: int = 100
    config_hash: str = ""

    def save(self, t, chain_arrays, st: _State, hp, rng, moments, xs):
        meta = {
            "t": t,
            "config_hash": self.config_hash,
            "rng": rng.bit_generator.state,
            "hp": [hp.lam, hp.delta],
            "prior_norm": st.prior_norm,
            "resid_sq": st.resid_sq,
            "q": st.q,
            "moments_count": moments.count,
        }
        arrays = dict(chain_arrays)
        arrays.update(x=st.x, m_mean=moments.mean, m_m2=moments._m2)
        if xs is not None:
            arrays["xs"] = xs[:t]
        tmp = Path(str(self.path) + ".tmp.npz")
        np.savez(tmp, meta=np.array(json.dumps(meta)), **arrays)
        tmp.replace(self.path)


class CheckpointMismatch(RuntimeError):
    pass


def load_checkpoint(path, config_hash: str) -> dict:
    """Read a checkpoint, refusing files written under a different config hash."""
    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
        meta = json.loads(str(data.pop("meta")))
        meta["config_hash"], meta["t"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointMismatch(f"checkpoint {path} is unreadable: {exc}") from exc
    if meta["config_hash"] != config_hash:
        raise CheckpointMismatch(
            f"checkpoint {path} was written for config {meta['config_hash'][:12]}, "
            f"current config is {config_hash[:12]}"
        )
    data["meta"] = meta
    return data


# --------------------------------------------------------------------------
# the loop


def _run(model: HierarchicalModel, cfg: SamplerConfig, proposal, rng, *,
         checkpoint: Checkpoint | None = None, resume: dict | None = None) -> Chain:
    T, Tb, n = cfg.samples, cfg.burn_in_count, model.n
    lam_s, del_s = np.empty(T), np.empty(T)
    acc_s = np.zeros(T, dtype=bool)
    lw_s = np.empty(T)
    xs = np.empty((T, n)) if cfg.store_x else None
    moments = RunningMoments(n)
    hp = cfg.init or HyperParams(1.0, 1.0)
    t0 = 0

    if resume is None:
        state = proposal.initial(hp)
    else:
        meta = resume["meta"]
        t0 = int(meta["t"])
        for dst, key in ((lam_s, "lam"), (del_s, "delta"), (acc_s, "accepted"), (lw_s, "log_weight")):
            dst[:t0] = resume[key][:t0]
        if xs is not None:
            xs[:t0] = resume["xs"]
        moments = RunningMoments.from_state(
            {"count": meta["moments_count"], "mean": resume["m_mean"], "m2": resume["m_m2"]})
        rng.bit_generator.state = meta["rng"]
        hp = HyperParams(*meta["hp"])
        state = _State(np.array(resume["x"]), meta["prior_norm"], meta["resid_sq"], meta["q"])
        log.info("resuming chain at t=%d", t0)

    for t in range(t0, T):
        if not cfg.fixed_hyper:
            lam = sample_lambda_conditional(model, state.x, rng, residual_norm_sq=state.resid_sq)
            delta = sample_delta_conditional(model, max(state.prior_norm, 0.0), rng)
            hp = HyperParams(lam, delta)
        proposal.condition(hp)
        cand = proposal.propose(rng)
        lw_cand = proposal.log_weight(cand, hp)
        lw_prev = proposal.log_weight(state, hp)
        u = rng.random()
        log_u = math.log(u) if u > 0 else -math.inf
        if log_u < lw_cand - lw_prev:
            state = cand
            acc_s[t] = True
            lw_s[t] = lw_cand
        else:
            lw_s[t] = lw_prev
        lam_s[t], del_s[t] = hp.lam, hp.delta
        if xs is not None:
            xs[t] = state.x
        if t >= Tb:
            moments.update(state.x)
        if checkpoint is not None and (t + 1) % checkpoint.every == 0 and t + 1 < T:
            checkpoint.save(
                t + 1, {"lam": lam_s, "delta": del_s, "accepted": acc_s, "log_weight": lw_s},
                state, hp, rng, moments, xs,
            )

    return Chain(lam=lam_s, delta=del_s, accepted=acc_s, log_weight=lw_s, burn_in=Tb,
                 moments=moments, x=xs, proposal=cfg.proposal)


def _rng(cfg, rng):
    return np.random.default_rng(cfg.seed) if rng is None else rng


def mh_within_gibbs(model, cfg: SamplerConfig, proposal, rng=None, **kw) -> Chain:
    """Generic independence MH-within-Gibbs driver for a prepared proposal."""
    return _run(model, cfg, proposal, _rng(cfg, rng), **kw)


def block_gibbs(model: HierarchicalModel, cfg: SamplerConfig, rng=None, **kw) -> Chain:
    """Exact block Gibbs; ``x`` is drawn from the dense conditional each step."""
    chain = _run(model, cfg, _ExactProposal(model), _rng(cfg, rng), **kw)
    chain.proposal = "block-gibbs"
    return chain


def mh_gibbs_gengk(model: HierarchicalModel, cfg: SamplerConfig, rng=None,
                   factors: GenGKFactors | None = None, **kw) -> Chain:
    """MH within Gibbs with the low-rank genGK proposal; factors are built once."""
    if factors is None:
        if cfg.rank > min(model.m, model.n):
            raise ValueError("rank exceeds min(m, n)")
        factors = gengk_factors(model, cfg.rank, cfg)
    chain = _run(model, cfg, _GenGKProposal(model, factors), _rng(cfg, rng), **kw)
    chain.meta["rank"] = factors.state.k
    return chain


def mh_gibbs_precond(model: HierarchicalModel, cfg: SamplerConfig, G, rng=None,
                     state: GenGKState | None = None, **kw) -> Chain:
    """MH within Gibbs with the preconditioned-Lanczos proposal."""
    if state is None:
        state = gengk_bidiagonalize(model.A, model.R_inv, model.Q, model.b, model.mu, cfg.rank)
    factors = PrecondFactors(state, aslinearoperator(G), cfg.lanczos)
    proposal = _PrecondProposal(model, factors)
    chain = _run(model, cfg, proposal, _rng(cfg, rng), **kw)
    chain.meta["rank"] = state.k
    chain.meta["lanczos_nonconverged"] = proposal.nonconverged
    chain.meta["lanczos_iterations"] = proposal.iterations
    return chain


def mh_gibbs_svd(model: HierarchicalModel, cfg: SamplerConfig, factors: SVDFactors,
                 rng=None, **kw) -> Chain:
    """MH within Gibbs with a TSVD or rSVD low-rank proposal."""
    chain = _run(model, cfg, _SVDProposal(model, factors), _rng(cfg, rng), **kw)
    chain.meta["rank"] = factors.theta.size
    return chain


def mh_gibbs_exact(model: HierarchicalModel, cfg: SamplerConfig, rng=None, **kw) -> Chain:
    """Independence sampler whose proposal is the exact dense conditional."""
    return _run(model, cfg, _ExactProposal(model), _rng(cfg, rng), **kw)
