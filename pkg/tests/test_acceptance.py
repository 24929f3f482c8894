"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``conftest.ACCEPTANCE_RESULTS`` and written in the
terminal summary, so a plain ``pytest -v`` shows them.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
import scipy.stats

from gkmcmc.diagnostics import credible_interval, ess, geweke, summarize
from gkmcmc.krylov import (
    LanczosConfig,
    gengk_bidiagonalize,
    gengk_solution,
    precond_inv_sqrt_apply,
    projected_tikhonov_solve,
)
from gkmcmc.operators import DenseOperator, IdentityOperator
from gkmcmc.posterior import HyperParams, conditional_moments_dense
from gkmcmc.problems import (
    initial_hyperparameters,
    laplacian_preconditioner,
    make_dynamic_problem,
    make_tomography_problem,
    matern_shift,
)
from gkmcmc.samplers import (
    PrecondFactors,
    SamplerConfig,
    block_gibbs,
    build_F,
    gengk_factors,
    gengk_log_weight,
    gengk_prior_norm,
    gengk_proposal_draw,
    mh_gibbs_exact,
    mh_gibbs_gengk,
    mh_gibbs_precond,
    mh_gibbs_svd,
    precond_log_accept,
    precond_prior_norm,
    precond_proposal_draw,
    rsvd_proposal_factors,
    tsvd_proposal_factors,
)

from conftest import DenseFixture, record_criterion

FIXTURE_SHAPES = [(12, 8), (20, 15), (30, 30), (40, 25), (25, 40), (40, 40)]


class UnitRNG:
    """Returns the unit vector ``e_j`` as the standard-normal draw."""

    def __init__(self, j):
        self.j = j

    def standard_normal(self, size):
        e = np.zeros(size)
        e[self.j] = 1.0
        return e


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_criterion_01_gengk_exactness():
    worst, slowest = 0.0, 0.0
    for seed, (m, n) in enumerate(FIXTURE_SHAPES):
        fx = DenseFixture(100 + seed, m, n)
        lam, delta = 2.0, 0.3
        t0 = time.perf_counter()
        st = gengk_bidiagonalize(fx.A, fx.R_inv, fx.Q, fx.b, fx.mu, k=min(m, n))
        x = gengk_solution(st, projected_tikhonov_solve(st, lam, delta))
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, rel(x, fx.tikhonov(lam, delta)[0]))
    ok = worst <= 1e-8 and slowest < 1.0
    record_criterion(1, ok, f"{len(FIXTURE_SHAPES)} fixtures, max rel err {worst:.1e} (tol 1e-8), "
                            f"slowest {slowest:.3f} s (limit 1 s)")
    assert ok


def test_criterion_02_gengk_relations():
    worst = 0.0
    for seed, (m, n) in enumerate(FIXTURE_SHAPES):
        fx = DenseFixture(200 + seed, m, n)
        for k in sorted({1, min(m, n) // 2, min(m, n) - 1}):
            st = gengk_bidiagonalize(fx.A, fx.R_inv, fx.Q, fx.b, fx.mu, k=k)
            k = st.k
            r1 = fx.A @ fx.Q @ st.V - st.U @ st.B
            r2 = fx.A.T @ fx.R_inv @ st.U - st.V @ st.B.T - st.alpha[k] * np.outer(st.V_full[:, k], np.eye(k + 1)[k])
            scale = np.linalg.norm(fx.A, 2) * max(np.linalg.norm(fx.Q, 2), np.linalg.norm(fx.R_inv, 2))
            worst = max(worst, np.abs(r1).max() / scale, np.abs(r2).max() / scale)
    ok = worst <= 1e-8
    record_criterion(2, ok, f"max scaled residual of both relations {worst:.1e} (tol 1e-8)")
    assert ok


def test_criterion_03_covariance_factorizations():
    worst_lr, worst_sf = 0.0, 0.0
    for seed, (m, n) in enumerate([(30, 20), (40, 35), (50, 50)]):
        fx = DenseFixture(300 + seed, m, n)
        hp = HyperParams(1.7, 0.4)
        f = gengk_factors(fx.model, min(10, n - 1))
        z = projected_tikhonov_solve(f.state, hp.lam, hp.delta)
        mean = gengk_solution(f.state, z)
        S = np.column_stack([gengk_proposal_draw(f, z, hp, UnitRNG(j))[0] - mean for j in range(n)])
        Qh = fx.sqrt_Q()
        Z, th = f.lowrank.Z, f.lowrank.theta
        want = Qh @ np.linalg.inv(hp.lam * (Z * th) @ Z.T + hp.delta * np.eye(n)) @ Qh
        worst_lr = max(worst_lr, rel(S @ S.T, want))

        st = f.state
        G = DenseOperator(np.linalg.cholesky(fx.Q_inv).T)
        pf = PrecondFactors(st, G, LanczosConfig(maxiter=n, tol=1e-12))
        F = build_F(st, hp)
        cols = []
        for j in range(n):
            x, _, _ = precond_proposal_draw(pf, z, hp, UnitRNG(j), F=F)
            cols.append(x - mean)
            _, info = precond_inv_sqrt_apply(G, F, np.eye(n)[j], pf.lanczos)
            assert info.converged
        SF = np.column_stack(cols)
        Gamma = conditional_moments_dense(fx.model, hp).Gamma_cond
        worst_sf = max(worst_sf, rel(SF @ SF.T, Gamma))
    ok = worst_lr <= 1e-8 and worst_sf <= 1e-7
    record_criterion(3, ok, f"low-rank factor rel err {worst_lr:.1e} (tol 1e-8), "
                            f"S_F S_F^T rel err {worst_sf:.1e} (tol 1e-7)")
    assert ok


def test_criterion_04_acceptance_ratio_oracles():
    fx = DenseFixture(400, 35, 25)
    hp = HyperParams(2.5, 0.7)
    P = hp.lam * fx.A.T @ fx.R_inv @ fx.A + hp.delta * fx.Q_inv
    rhs = hp.lam * fx.A.T @ fx.R_inv @ fx.b + hp.delta * fx.Q_inv @ fx.mu

    def log_target(x):
        return -0.5 * x @ P @ x + x @ rhs

    # genGK proposal: Gaussian with precision Q^{-1/2}(lam Z Theta Z^T + delta I)Q^{-1/2}
    f = gengk_factors(fx.model, 6)
    z = projected_tikhonov_solve(f.state, hp.lam, hp.delta)
    xk = gengk_solution(f.state, z)
    Qh = fx.sqrt_Q()
    Qh_inv = np.linalg.inv(Qh)
    Z, th = f.lowrank.Z, f.lowrank.theta
    Ph = Qh_inv @ (hp.lam * (Z * th) @ Z.T + hp.delta * np.eye(fx.n)) @ Qh_inv

    def log_w(x):
        return log_target(x) + 0.5 * (x - xk) @ Ph @ (x - xk)

    # preconditioned proposal: N(x_k, Gamma_cond)
    st = f.state

    def log_ratio2(xs, x):
        lq = lambda y: -0.5 * (y - xk) @ P @ (y - xk)
        return log_target(xs) - log_target(x) - lq(xs) + lq(x)

    rng = np.random.default_rng(4)
    worst_w, worst_a = 0.0, 0.0
    for _ in range(100):
        x, xs = fx.mu + rng.standard_normal((2, fx.n))
        got = gengk_log_weight(f, fx.model, hp, xs) - gengk_log_weight(f, fx.model, hp, x)
        want = log_w(xs) - log_w(x)
        worst_w = max(worst_w, abs(got - want) / max(1.0, abs(want)))
        want2 = log_ratio2(xs, x)
        got2 = precond_log_accept(st, z, hp, xs, x)
        worst_a = max(worst_a, abs(got2 - want2) / max(1.0, abs(want2)))
    ok = worst_w <= 1e-6 and worst_a <= 1e-6
    record_criterion(4, ok, f"100 pairs: log w max rel err {worst_w:.1e}, log alpha2 max rel err "
                            f"{worst_a:.1e} (tol 1e-6)")
    assert ok


def test_criterion_05_prior_norm_identities():
    fx = DenseFixture(500, 35, 25)
    hp = HyperParams(1.3, 0.9)
    f = gengk_factors(fx.model, 6)
    z = projected_tikhonov_solve(f.state, hp.lam, hp.delta)
    pf = PrecondFactors(f.state, DenseOperator(np.linalg.cholesky(fx.Q_inv).T), LanczosConfig(maxiter=25, tol=1e-12))
    rng = np.random.default_rng(5)
    worst_b, worst_c = 0.0, 0.0
    for _ in range(50):
        x, xi = gengk_proposal_draw(f, z, hp, rng)
        d = x - fx.mu
        want = d @ fx.Q_inv @ d
        worst_b = max(worst_b, abs(gengk_prior_norm(f, z, xi, hp, x) - want) / want)
        x, xi, s_vec = precond_proposal_draw(pf, z, hp, rng)
        d = x - fx.mu
        want = d @ fx.Q_inv @ d
        worst_c = max(worst_c, abs(precond_prior_norm(f.state, x, z, s_vec, hp.lam) - want) / want)
    ok = worst_b <= 1e-7 and worst_c <= 1e-7
    record_criterion(5, ok, f"genGK prior norm rel err {worst_b:.1e}, preconditioned {worst_c:.1e} (tol 1e-7)")
    assert ok


def _log_evidence_grid(model, fx, log_lam, log_delta):
    """log p(log lam, log delta | b) on a grid, from b ~ N(A mu, R/lam + A Q A^T/delta)."""
    L = np.linalg.cholesky(fx.R)
    Ai = np.linalg.solve(L, fx.A)
    kappa, U = np.linalg.eigh(Ai @ fx.Q @ Ai.T)
    c = U.T @ np.linalg.solve(L, fx.b - fx.A @ fx.mu)
    lam = np.exp(log_lam)[:, None]
    dl = np.exp(log_delta)[None, :]
    ev = 1.0 / lam[..., None] + np.clip(kappa, 0, None) / dl[..., None]
    lp = -0.5 * np.sum(np.log(ev) + c**2 / ev, axis=2)
    lp += model.alpha_lambda * np.log(lam) - model.beta_lambda * lam
    lp += model.alpha_delta * np.log(dl) - model.beta_delta * dl
    return lp


@pytest.mark.slow
def test_criterion_06_sampler_correctness():
    T = 50_000
    fx = DenseFixture(18, 4, 2)
    hp = HyperParams(0.3, 1.0)
    orc = conditional_moments_dense(fx.model, hp)
    cfg = SamplerConfig(samples=T, rank=1, seed=6, fixed_hyper=True, init=hp, store_x=True, burn_in=0.0)
    runs = {
        "gengk": lambda: mh_gibbs_gengk(fx.model, cfg),
        "precond": lambda: mh_gibbs_precond(fx.model, cfg, IdentityOperator(2)),
        "tsvd": lambda: mh_gibbs_svd(fx.model, cfg, tsvd_proposal_factors(fx.model, k=1)),
        "rsvd": lambda: mh_gibbs_svd(fx.model, cfg, rsvd_proposal_factors(fx.model, k=1, p=0,
                                                                         rng=np.random.default_rng(0))),
        "exact": lambda: mh_gibbs_exact(fx.model, cfg),
        "block": lambda: block_gibbs(fx.model, cfg),
    }
    worst_z, fixed_ok = 0.0, True
    for name, run in runs.items():
        X = run().x
        D = X - orc.x_cond
        stats = [(D[:, j], 0.0) for j in range(2)]
        stats += [(D[:, i] * D[:, j], orc.Gamma_cond[i, j]) for i, j in ((0, 0), (0, 1), (1, 1))]
        for series, target in stats:
            z = abs(series.mean() - target) / np.sqrt(series.var() / ess(series))
            worst_z = max(worst_z, z)
            fixed_ok &= z < 4.0

    # hierarchical: compare lambda and delta marginals with the analytic evidence
    fx2 = DenseFixture(21, 20, 2)
    model = replace(fx2.model, alpha_lambda=2.0, beta_lambda=0.1, alpha_delta=2.0, beta_delta=0.1)
    ch = block_gibbs(model, SamplerConfig(samples=T, seed=6, burn_in=0.0))
    ll = np.linspace(np.log(ch.lam.min()) - 3, np.log(ch.lam.max()) + 3, 1500)
    ld = np.linspace(np.log(ch.delta.min()) - 3, np.log(ch.delta.max()) + 3, 1500)
    lp = _log_evidence_grid(model, fx2, ll, ld)
    p = np.exp(lp - lp.max())
    pvals = {}
    for name, s, grid, marg in (("lambda", ch.lam, ll, p.sum(1)), ("delta", ch.delta, ld, p.sum(0))):
        cdf = np.cumsum(marg)
        cdf /= cdf[-1]
        u = np.interp(np.log(s[::10]), grid, cdf)
        counts = np.histogram(u, bins=20, range=(0.0, 1.0))[0]
        pvals[name] = scipy.stats.chisquare(counts).pvalue
    gof_ok = min(pvals.values()) > 0.01
    ok = fixed_ok and gof_ok
    record_criterion(6, ok, f"6 samplers x 5 moments: max |z| {worst_z:.2f} (limit 4); chi-square p "
                            f"lambda {pvals['lambda']:.3f}, delta {pvals['delta']:.3f} (limit 0.01)")
    assert ok


def _tomography(seed):
    return make_tomography_problem(16, 12, nu=2.5, ell=0.25, rng=np.random.default_rng(seed))


@pytest.mark.slow
def test_criterion_07_trend_reproduction():
    ks = (25, 50, 100, 192)
    T = 500
    monotone, full_ok, ordered = 0, True, 0
    lines = []
    for seed in range(3):
        P = _tomography(seed)
        M = P.model
        f_full = gengk_factors(M, ks[-1])
        init = initial_hyperparameters(P)
        cfg = lambda k: SamplerConfig(samples=T, rank=k, seed=seed, init=init)
        counts = []
        for k in ks:
            f = f_full if k == ks[-1] else gengk_factors(M, k)
            counts.append(mh_gibbs_gengk(M, cfg(k), factors=f).acceptance_count)
        monotone += all(a < b for a, b in zip(counts, counts[1:]))
        full_ok &= counts[-1] >= 0.99 * T
        k = 100
        tsvd = mh_gibbs_svd(M, cfg(k), tsvd_proposal_factors(M, k=k)).acceptance_count
        rsvd = mh_gibbs_svd(M, cfg(k), rsvd_proposal_factors(M, k=k, rng=np.random.default_rng(seed))).acceptance_count
        gk = counts[ks.index(k)]
        ordered += tsvd >= gk >= rsvd
        lines.append(f"seed {seed}: genGK {counts}, k=100 tsvd/genGK/rsvd {tsvd}/{gk}/{rsvd}")
    ok = monotone == 3 and full_ok and ordered >= 2
    record_criterion(7, ok, f"monotone {monotone}/3, full rank >= 99% {full_ok}, ordering {ordered}/3; "
                            + "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_criterion_08_hyperparameter_recovery():
    t0 = time.perf_counter()
    hits = 0
    for seed in range(10):
        P = make_tomography_problem(8, 32, noise_level=0.02, rng=np.random.default_rng(seed))
        M = P.model
        assert M.m >= 4 * M.n
        f = gengk_factors(M, M.n)
        init = initial_hyperparameters(P)
        ch = mh_gibbs_gengk(M, SamplerConfig(samples=1000, rank=M.n, seed=seed, init=init), factors=f)
        lo, hi = credible_interval(ch.lam[ch.burn_in:])
        hits += lo <= P.lambda_true <= hi
    elapsed = time.perf_counter() - t0
    ok = hits >= 8 and elapsed < 300
    record_criterion(8, ok, f"95% lambda interval covers 1/sigma^2 in {hits}/10 runs (need 8), {elapsed:.0f} s")
    assert ok


DYNAMIC_FIXTURE = dict(nx=8, nt=5, angles_per_step=72, span=340.0, noise_level=0.02)
DYNAMIC_RANK = 200


@pytest.mark.slow
def test_criterion_09_preconditioned_sampler():
    P = make_dynamic_problem(**DYNAMIC_FIXTURE, rng=np.random.default_rng(0))
    M = P.model
    nx = DYNAMIC_FIXTURE["nx"]
    G = laplacian_preconditioner(nx, DYNAMIC_FIXTURE["nt"], 1.0, P.components["Q_t"],
                                 shift=matern_shift(*P.metadata["prior_s"], nx))
    st = gengk_bidiagonalize(M.A, M.R_inv, M.Q, M.b, M.mu, k=DYNAMIC_RANK)
    init = initial_hyperparameters(P)
    T = 500
    acc_ok, gew_ok, ess_ok = True, True, True
    lines = []
    for seed in range(3):
        cfg = SamplerConfig(samples=T, rank=DYNAMIC_RANK, seed=seed, init=init,
                            lanczos=LanczosConfig(maxiter=M.n, tol=1e-6))
        ch = mh_gibbs_precond(M, cfg, G, state=st)
        s = summarize(ch)
        acc_ok &= ch.acceptance_rate() >= 0.95
        gew_ok &= min(s.geweke_p.values()) > 0.5
        ess_ok &= min(s.ess.values()) >= 0.5 * T
        lines.append(f"seed {seed}: acc {ch.acceptance_rate():.3f}, ESS {s.ess['lambda']:.0f}/{s.ess['delta']:.0f}, "
                     f"Geweke p {s.geweke_p['lambda']:.2f}/{s.geweke_p['delta']:.2f}")
    ok = acc_ok and gew_ok and ess_ok
    record_criterion(9, ok, f"acceptance >= 95% {acc_ok}, Geweke p > 0.5 {gew_ok}, ESS >= T/2 {ess_ok}; "
                            + "; ".join(lines))
    assert ok


def test_criterion_10_diagnostics_calibration():
    T = 20_000
    ratios = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        e = rng.standard_normal(T)
        x = np.empty(T)
        x[0] = e[0] / np.sqrt(0.75)
        for t in range(1, T):
            x[t] = 0.5 * x[t - 1] + e[t]
        ratios.append(ess(x) / (T / 3))
    ess_ok = all(abs(r - 1) <= 0.2 for r in ratios)
    rejections = sum(geweke(np.random.default_rng(1000 + s).standard_normal(1000))[1] < 0.01 for s in range(200))
    ok = ess_ok and rejections <= 6
    record_criterion(10, ok, f"AR(1) ESS/(T/3) in [{min(ratios):.3f}, {max(ratios):.3f}] (within 20%); "
                             f"Geweke rejections {rejections}/200 at 1% (limit 6)")
    assert ok
