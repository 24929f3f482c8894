"""Chain post-processing: burn-in, autocorrelation, ESS, Geweke, summaries.

The integrated autocorrelation time uses Geyer's initial positive sequence:
lag-pair sums ``rho_{2j} + rho_{2j+1}`` are accumulated until the first
non-positive pair.  The Geweke statistic compares the mean of an early and a
late segment, each with a variance deflated by its own effective sample size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.stats

from .samplers import Chain


class DegenerateChainError(ValueError):
    """Raised for constant (zero-variance) series."""


def _as_series(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a one-dimensional series")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    return x


def _check_variance(x: np.ndarray, what: str = "series") -> None:
    if x.size < 2 or np.ptp(x) == 0.0:
        raise DegenerateChainError(f"{what} is constant; the chain is degenerate")


def remove_burnin(chain, fraction: float):
    """Drop the leading ``floor(fraction * T)`` samples.

    Accepts a 1-D array (a view is returned) or a :class:`Chain` (a new chain
    sharing the underlying arrays).  ``fraction`` must lie in ``[0, 1)``.
    """
    if not 0 <= fraction < 1:
        raise ValueError("burn-in fraction must lie in [0, 1)")
    if isinstance(chain, Chain):
        T = len(chain)
        nb = int(math.floor(fraction * T))
        if T - nb < 1:
            raise ValueError("no samples left after burn-in")
        return replace(
            chain,
            lam=chain.lam[nb:], delta=chain.delta[nb:], accepted=chain.accepted[nb:],
            log_weight=chain.log_weight[nb:], burn_in=0,
            x=None if chain.x is None else chain.x[nb:],
            moments=chain.moments if nb == chain.burn_in else None,
        )
    x = np.asarray(chain)
    nb = int(math.floor(fraction * x.shape[0]))
    if x.shape[0] - nb < 1:
        raise ValueError("no samples left after burn-in")
    return x[nb:]


def autocorrelation(series, max_lag: int | None = None) -> np.ndarray:
    """Biased sample autocorrelation ``acf[0..max_lag]`` (normalized by ``T``)."""
    x = _as_series(series)
    T = x.size
    if max_lag is None:
        max_lag = T - 1
    if not 0 <= max_lag < T:
        raise ValueError("max_lag must satisfy 0 <= max_lag < len(series)")
    _check_variance(x)
    d = x - x.mean()
    nfft = 1 << (2 * T - 1).bit_length()
    f = np.fft.rfft(d, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    return acov / acov[0]


def integrated_autocorrelation_time(series) -> float:
    """``1 + 2 sum rho_k`` truncated by Geyer's initial positive sequence."""
    rho = autocorrelation(series)
    T = rho.size
    tau = -1.0
    for j in range(0, T // 2):
        pair = rho[2 * j] + rho[2 * j + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return max(tau, 1.0 / T)


def ess(series) -> float:
    """Effective sample size ``T / IACT`` clamped to ``(0, T]``."""
    x = _as_series(series)
    T = x.size
    return float(min(T, T / integrated_autocorrelation_time(x)))


def geweke(series, frac_a: float = 0.10, frac_b: float = 0.50) -> tuple[float, float]:
    """Geweke equilibrium test comparing the first ``frac_a`` and last ``frac_b``.

    Returns ``(z, p)`` with ``p = 2 (1 - Phi(|z|))``; identical segment means
    give ``p = 1``.
    """
    x = _as_series(series)
    if not (0 < frac_a < 1 and 0 < frac_b < 1 and frac_a + frac_b <= 1):
        raise ValueError("segment fractions must be positive and sum to at most 1")
    T = x.size
    na, nb = int(math.floor(frac_a * T)), int(math.floor(frac_b * T))
    if na < 2 or nb < 2:
        raise ValueError("Geweke segments need at least two samples each")
    a, b = x[:na], x[T - nb:]
    _check_variance(a, "early segment")
    _check_variance(b, "late segment")
    var = a.var(ddof=1) / ess(a) + b.var(ddof=1) / ess(b)
    z = float((a.mean() - b.mean()) / math.sqrt(var))
    p = float(2.0 * scipy.stats.norm.sf(abs(z)))
    return z, p


@dataclass(frozen=True)
class ChainStats:
    """Diagnostics of one chain after burn-in.

    ``acf``, ``ess``, ``geweke_z``, ``geweke_p`` and ``ci`` are keyed by the
    scalar chain name (``"lambda"``, ``"delta"``).
    """

    n_retained: int
    acceptance_rate: float
    acf: dict
    ess: dict
    geweke_z: dict
    geweke_p: dict
    ci: dict
    mean: np.ndarray | None
    variance: np.ndarray | None

    def report(self) -> dict:
        """JSON-ready subset used by the command line."""
        return {
            "n_retained": self.n_retained,
            "ess": dict(self.ess),
            "geweke_z": dict(self.geweke_z),
            "geweke_p": dict(self.geweke_p),
            "acceptance_rate": self.acceptance_rate,
            "ci_lambda": list(self.ci["lambda"]),
            "ci_delta": list(self.ci["delta"]),
        }


def credible_interval(series, level: float = 0.95) -> tuple[float, float]:
    x = _as_series(series)
    q = 100 * (1 - level) / 2
    lo, hi = np.percentile(x, [q, 100 - q])
    return float(lo), float(hi)


def summarize(chain: Chain, max_lag: int = 100, fraction: float | None = None) -> ChainStats:
    """Diagnostics over the retained part of ``chain``.

    The burn-in defaults to ``chain.burn_in``.  ``x`` moments come from the
    stored states when present and from the running accumulator otherwise.
    """
    nb = chain.burn_in if fraction is None else int(math.floor(fraction * len(chain)))
    T = len(chain) - nb
    if T < 2:
        raise ValueError(f"need at least 2 retained samples, have {T}")
    series = {"lambda": chain.lam[nb:], "delta": chain.delta[nb:]}
    lag = min(max_lag, T - 1)
    acf, ess_, gz, gp, ci = {}, {}, {}, {}, {}
    for name, s in series.items():
        acf[name] = autocorrelation(s, lag)
        ess_[name] = ess(s)
        gz[name], gp[name] = geweke(s)
        ci[name] = credible_interval(s)

    mean = variance = None
    if chain.x is not None:
        xs = chain.x[nb:]
        mean, variance = xs.mean(axis=0), xs.var(axis=0, ddof=1)
    elif chain.moments is not None and chain.moments.count == T:
        mean, variance = chain.moments.mean.copy(), chain.moments.variance

    return ChainStats(
        n_retained=T,
        acceptance_rate=float(np.mean(chain.accepted[nb:])),
        acf=acf, ess=ess_, geweke_z=gz, geweke_p=gp, ci=ci,
        mean=mean, variance=variance,
    )
