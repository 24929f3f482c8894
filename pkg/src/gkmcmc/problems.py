"""Desk-scale test problems, noise injection and hyperparameter initialization.

The forward operator is a parallel-beam line-integral (X-ray transform)
discretization on an ``nx x nx`` pixel grid covering ``[0, 1]^2``.  Ray-pixel
intersection lengths are computed exactly by walking the grid lines crossed by
each ray (Siddon's method).  Pixels are stored in C order, ``index = iy * nx + ix``,
and rows are ordered angle-major, ``row = angle * n_det + detector``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp

from .krylov import GenGKState, gengk_bidiagonalize
from .operators import (
    CovarianceOperator,
    DenseOperator,
    KroneckerOperator,
    MaternSpec,
    grid_points,
    kronecker_covariance,
    matern_covariance,
    read_matrix_market,
    write_matrix_market,
)
from .posterior import HierarchicalModel, HyperParams

LAPLACIAN_SHIFT = 1e-8
GCV_GRID = (1e-6, 1e6, 61)
MAD_SCALE = 0.6745
DYNAMIC_DT = 1.0 / 19.0
INIT_RANK = 40


@dataclass(frozen=True)
class TestProblem:
    """A hierarchical model together with its ground truth.

    ``sigma`` is the noise standard deviation actually used to build ``b``, so
    the true noise precision is ``1 / sigma**2``.
    """

    __test__ = False  # keep pytest from collecting this class

    model: HierarchicalModel
    x_true: np.ndarray
    b_true: np.ndarray
    sigma: float
    noise_level: float
    metadata: dict = field(default_factory=dict)
    components: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def lambda_true(self) -> float:
        return 1.0 / self.sigma**2


# --------------------------------------------------------------------------
# ray tracing


def _ray_segments(p0, d, nx):
    """Pixel indices and lengths of the line ``p0 + t d`` (``|d| = 1``) inside ``[0,1]^2``."""
    ts = []
    lo, hi = -np.inf, np.inf
    for ax in range(2):
        if abs(d[ax]) < 1e-14:
            if not 0.0 <= p0[ax] <= 1.0:
                return np.empty(0, dtype=int), np.empty(0)
            continue
        t_a, t_b = (0.0 - p0[ax]) / d[ax], (1.0 - p0[ax]) / d[ax]
        lo, hi = max(lo, min(t_a, t_b)), min(hi, max(t_a, t_b))
        ts.append((np.arange(nx + 1) / nx - p0[ax]) / d[ax])
    if not hi > lo:
        return np.empty(0, dtype=int), np.empty(0)
    t = np.concatenate([[lo, hi]] + ts)
    t = np.unique(t[(t >= lo) & (t <= hi)])
    seg = np.diff(t)
    keep = seg > 1e-13
    mid = 0.5 * (t[:-1] + t[1:])[keep]
    seg = seg[keep]
    pts = p0[None, :] + mid[:, None] * d[None, :]
    ix = np.clip(np.floor(pts[:, 0] * nx).astype(int), 0, nx - 1)
    iy = np.clip(np.floor(pts[:, 1] * nx).astype(int), 0, nx - 1)
    return iy * nx + ix, seg


def detector_offsets(nx: int, n_det: int | None = None) -> np.ndarray:
    """Signed detector offsets from the grid center, spacing ``1 / n_det``."""
    n_det = nx if n_det is None else n_det
    return (np.arange(n_det) + 0.5) / n_det - 0.5


def parallel_beam_matrix(nx: int, angles, n_det: int | None = None) -> sp.csr_matrix:
    """Sparse line-integral matrix for the given projection angles (radians).

    A ray at angle ``theta`` and offset ``s`` is the set of points ``p`` with
    ``(p - c) . (cos theta, sin theta) = s``, ``c`` the grid center.
    """
    if nx < 1:
        raise ValueError("nx must be positive")
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    offs = detector_offsets(nx, n_det)
    rows, cols, vals = [], [], []
    c = np.array([0.5, 0.5])
    r = 0
    for th in angles:
        nrm = np.array([math.cos(th), math.sin(th)])
        d = np.array([-nrm[1], nrm[0]])
        for s in offs:
            idx, seg = _ray_segments(c + s * nrm, d, nx)
            rows.extend([r] * idx.size)
            cols.extend(idx.tolist())
            vals.extend(seg.tolist())
            r += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, nx * nx))
    A.sum_duplicates()
    if A.nnz == 0:
        raise ValueError("degenerate geometry: no ray intersects the grid")
    return A


def disk_phantom(nx: int) -> np.ndarray:
    """Piecewise-constant phantom of overlapping disks, flattened in C order."""
    pts = (np.arange(nx) + 0.5) / nx
    X, Y = np.meshgrid(pts, pts)  # X varies along columns (ix)
    img = np.zeros((nx, nx))
    for cx, cy, rad, val in (
        (0.50, 0.50, 0.38, 0.5),
        (0.38, 0.58, 0.14, 0.5),
        (0.62, 0.40, 0.10, 1.0),
        (0.60, 0.66, 0.07, -0.3),
    ):
        img[(X - cx) ** 2 + (Y - cy) ** 2 <= rad**2] += val
    return img.ravel()


def add_noise(b_true, level: float, rng) -> tuple[np.ndarray, float]:
    """``b = b_true + sigma xi`` with ``sigma = level ||b_true|| / ||xi||``."""
    b_true = np.asarray(b_true, dtype=float)
    if not level > 0:
        raise ValueError("noise level must be positive")
    nb = np.linalg.norm(b_true)
    if nb == 0:
        raise ValueError("b_true is zero; relative noise is undefined")
    xi = rng.standard_normal(b_true.shape)
    sigma = level * nb / np.linalg.norm(xi)
    return b_true + sigma * xi, float(sigma)


def _matern_prior(nu, ell, pts, with_factors, normalize=True) -> CovarianceOperator:
    return matern_covariance(MaternSpec(nu, ell, pts, normalize=normalize), with_factors=with_factors)


def make_tomography_problem(nx: int = 16, n_angles: int = 12, noise_level: float = 0.02,
                            nu: float = 0.5, ell: float = 0.25, rng=None,
                            n_det: int | None = None) -> TestProblem:
    """Static parallel-beam tomography with a Matérn prior, ``R = I``, ``mu = 0``.

    Angles are equally spaced in ``[0, pi)``.
    """
    if nx < 8:
        raise ValueError("nx must be at least 8")
    if n_angles < 2:
        raise ValueError("need at least two projection angles")
    rng = np.random.default_rng(0) if rng is None else rng
    angles = np.arange(n_angles) * np.pi / n_angles
    A = parallel_beam_matrix(nx, angles, n_det)
    x_true = disk_phantom(nx)
    b_true = A @ x_true
    b, sigma = add_noise(b_true, noise_level, rng)
    Q = _matern_prior(nu, ell, grid_points(nx, nx), with_factors=nx * nx <= 2000)
    model = HierarchicalModel(A=DenseOperator(A), b=b, R=CovarianceOperator.identity(A.shape[0]), Q=Q)
    meta = {
        "kind": "tomography", "nx": nx, "n_angles": n_angles, "n_det": A.shape[0] // n_angles,
        "angles_rad": angles.tolist(), "prior": {"nu": nu, "ell": ell},
        "data_shape": [n_angles, A.shape[0] // n_angles],
    }
    return TestProblem(model, x_true, b_true, sigma, noise_level, meta)


def moving_blobs(nx: int, times) -> np.ndarray:
    """Two Gaussian blobs translating in different directions; time-major layout.

    ``times`` are the frame times; the blobs cover their full paths over ``[0, 1]``.
    """
    pts = (np.arange(nx) + 0.5) / nx
    X, Y = np.meshgrid(pts, pts)
    frames = []
    for s in np.atleast_1d(np.asarray(times, dtype=float)):
        c1 = np.array([0.30, 0.30]) + s * np.array([0.40, 0.15])
        c2 = np.array([0.70, 0.72]) + s * np.array([-0.35, -0.10])
        img = np.exp(-((X - c1[0]) ** 2 + (Y - c1[1]) ** 2) / (2 * 0.08**2))
        img += 0.8 * np.exp(-((X - c2[0]) ** 2 + (Y - c2[1]) ** 2) / (2 * 0.10**2))
        frames.append(img.ravel())
    return np.concatenate(frames)


def dynamic_angles(nt: int, angles_per_step: int, span: float) -> np.ndarray:
    """``(nt, angles_per_step)`` degrees: frame ``i`` spans ``[i, span + i]`` equally."""
    return np.stack([np.linspace(i, span + i, angles_per_step) for i in range(nt)])


def make_dynamic_problem(nx: int = 16, nt: int = 5, angles_per_step: int = 6, span: float = 340.0,
                         noise_level: float = 0.02, qt: tuple = (2.5, 0.1), qs: tuple = (0.5, 0.25),
                         rng=None, dt: float = DYNAMIC_DT) -> TestProblem:
    """Dynamic tomography with block-diagonal ``A`` and prior ``Q_t ⊗ Q_s``.

    ``qt`` and ``qs`` are ``(nu, ell)`` Matérn parameters for time and space.
    Frame ``i`` sits at time ``i * dt``; the temporal kernel acts on these
    times directly, so ``qt[1]`` is measured in the same units as ``dt``.
    The default spacing makes 20 frames span ``[0, 1]``.
    The unknown stacks frames time-major, ``index = t * nx**2 + pixel``.
    """
    if nx < 8:
        raise ValueError("nx must be at least 8")
    if nt < 1:
        raise ValueError("nt must be positive")
    if angles_per_step < 1:
        raise ValueError("need at least one angle per step")
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    deg = dynamic_angles(nt, angles_per_step, span)
    blocks = [parallel_beam_matrix(nx, np.deg2rad(a)) for a in deg]
    A = sp.block_diag(blocks, format="csr")
    times = dt * np.arange(nt)
    x_true = moving_blobs(nx, times)
    b_true = A @ x_true
    b, sigma = add_noise(b_true, noise_level, rng)
    Q_t = _matern_prior(qt[0], qt[1], times, with_factors=True, normalize=False)
    Q_s = _matern_prior(qs[0], qs[1], grid_points(nx, nx), with_factors=nx * nx <= 2000)
    Q = kronecker_covariance(Q_t, Q_s)
    model = HierarchicalModel(A=DenseOperator(A), b=b, R=CovarianceOperator.identity(A.shape[0]), Q=Q)
    meta = {
        "kind": "dynamic", "nx": nx, "nt": nt, "angles_per_step": angles_per_step, "span": span,
        "dt": dt, "angles_deg": deg.tolist(), "prior_t": list(qt), "prior_s": list(qs),
        "data_shape": [nt * angles_per_step, nx],
    }
    return TestProblem(model, x_true, b_true, sigma, noise_level, meta,
                       components={"Q_t": Q_t, "Q_s": Q_s, "blocks": blocks})


# --------------------------------------------------------------------------
# hyperparameter initialization


def haar_details(b, grid_shape=None) -> np.ndarray:
    """Finest-level orthonormal Haar detail coefficients.

    For a 2-D ``grid_shape`` (both sides at least 2) the diagonal (HH) details
    are used; otherwise the 1-D pairwise differences.  Odd trailing entries
    are dropped.
    """
    b = np.asarray(b, dtype=float).ravel()
    if grid_shape is not None and len(grid_shape) == 2 and min(grid_shape) >= 2:
        if int(np.prod(grid_shape)) != b.size:
            raise ValueError("grid_shape does not match the data length")
        g = b.reshape(grid_shape)
        r, c = (grid_shape[0] // 2) * 2, (grid_shape[1] // 2) * 2
        g = g[:r, :c]
        return 0.5 * (g[0::2, 0::2] - g[0::2, 1::2] - g[1::2, 0::2] + g[1::2, 1::2]).ravel()
    n = (b.size // 2) * 2
    return (b[0:n:2] - b[1:n:2]) / math.sqrt(2.0)


def estimate_lambda0(b, grid_shape=None) -> float:
    """Noise precision guess ``1 / sigma_hat^2``, ``sigma_hat = median|d| / 0.6745``."""
    b = np.asarray(b, dtype=float).ravel()
    if b.size < 2:
        raise ValueError("need at least two data points")
    d = haar_details(b, grid_shape)
    sig = float(np.median(np.abs(d))) / MAD_SCALE
    if not sig > 0:
        raise ValueError("degenerate data: zero median absolute Haar detail")
    return 1.0 / sig**2


@dataclass(frozen=True)
class GCVResult:
    eta: float
    at_edge: bool
    value: float


def projected_gcv(state: GenGKState, grid=GCV_GRID) -> GCVResult:
    """Minimize ``||(I - B B_eta^+) c||^2 / (k + 1 - tr B B_eta^+)^2`` in ``eta``.

    ``B_eta^+ = (B^T B + eta^2 I)^{-1} B^T`` and ``c = gamma_1 e_1``.  A log grid
    is scanned first, then refined by a bounded scalar search between the
    neighbours of the best grid point.
    """
    B = state.B
    k = B.shape[1]
    if k < 2:
        raise ValueError("projected GCV needs k >= 2")
    P, s, _ = np.linalg.svd(B, full_matrices=True)
    c = state.beta * P[0, :]
    ck, c_out = c[:k], c[k:]
    out2 = float(c_out @ c_out)

    def g(log_eta):
        e2 = math.exp(2.0 * log_eta)
        f = s**2 / (s**2 + e2)
        res = float(np.sum(((1.0 - f) * ck) ** 2)) + out2
        return res / (k + 1 - float(f.sum())) ** 2

    lo, hi, npts = grid
    logs = np.linspace(math.log(lo), math.log(hi), int(npts))
    vals = np.array([g(t) for t in logs])
    i = int(np.argmin(vals))
    at_edge = i in (0, logs.size - 1)
    a, b = logs[max(i - 1, 0)], logs[min(i + 1, logs.size - 1)]
    best, fbest = logs[i], vals[i]
    if not at_edge:
        res = scipy.optimize.minimize_scalar(g, bounds=(a, b), method="bounded",
                                             options={"xatol": 1e-8})
        if res.fun <= fbest:
            best, fbest = float(res.x), float(res.fun)
    return GCVResult(math.exp(best), at_edge, float(fbest))


def estimate_delta0(state: GenGKState, lambda0: float) -> float:
    """``delta0 = lambda0 * eta^2`` with ``eta`` from :func:`projected_gcv`."""
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    return lambda0 * projected_gcv(state).eta ** 2


def init_rank(m: int, n: int) -> int:
    """genGK depth used for the GCV start: ``min(INIT_RANK, min(m, n) // 2)``, at least 2.

    Near ``k = m`` the projected residual vanishes and GCV drifts toward
    ``eta = 0``, so the start is computed well below full rank.
    """
    return max(2, min(INIT_RANK, min(m, n) // 2))


def initial_hyperparameters(problem: TestProblem, state: GenGKState | None = None) -> HyperParams:
    """Haar-MAD ``lambda0`` and projected-GCV ``delta0``.

    Without ``state`` a genGK run of depth :func:`init_rank` is made.
    """
    if state is None:
        M = problem.model
        state = gengk_bidiagonalize(M.A, M.R_inv, M.Q, M.b, M.mu, init_rank(M.m, M.n))
    shape = problem.metadata.get("data_shape")
    lam0 = estimate_lambda0(problem.model.b, tuple(shape) if shape else None)
    return HyperParams(lam0, estimate_delta0(state, lam0))


# --------------------------------------------------------------------------
# preconditioner


def neumann_laplacian(nx: int) -> sp.csr_matrix:
    """Five-point ``-Laplacian`` on an ``nx x nx`` grid with Neumann boundary (unit spacing)."""
    e = np.ones(nx)
    D = sp.diags([-e[:-1], -e[:-1]], [-1, 1], shape=(nx, nx)).tolil()
    D.setdiag(-np.asarray(D.sum(axis=1)).ravel())
    D = D.tocsr()
    I = sp.identity(nx, format="csr")
    return (sp.kron(I, D) + sp.kron(D, I)).tocsr()


def matern_shift(nu: float, ell: float, nx: int) -> float:
    """``kappa^2 h^2`` with ``kappa^2 = 2 nu / ell^2`` and grid spacing ``h = 1 / (nx - 1)``.

    This is the shift that makes ``-Δ + shift I`` (unit spacing) proportional to
    the operator whose fractional power is the Matérn precision on the unit square.
    """
    return 2.0 * nu / ell**2 / (nx - 1) ** 2


def laplacian_preconditioner(nx: int, nt: int, gamma: float = 1.0, Q_t=None,
                             shift: float = LAPLACIAN_SHIFT) -> KroneckerOperator:
    """``G = G_t ⊗ G_s`` with ``G_t^T G_t = Q_t^{-1}`` and ``G_s^T G_s = (-Δ + shift I)^gamma``.

    ``-Δ`` is :func:`neumann_laplacian` (unit spacing).  ``G_t`` is the
    transposed lower Cholesky factor of ``Q_t^{-1}``.  ``G_s`` is upper
    triangular; it comes from a QR factorization of a symmetric square root,
    which avoids squaring the condition number of ``-Δ``.

    The default shift only makes the Neumann operator invertible.  A shift
    tied to the prior's correlation length (:func:`matern_shift`) gives a much
    better conditioned ``G F G^T``.
    """
    if gamma < 1:
        raise ValueError("gamma must be at least 1")
    if Q_t is None:
        raise ValueError("Q_t is required")
    Qt = Q_t.base.matrix if isinstance(getattr(Q_t, "base", None), DenseOperator) else Q_t
    Qt = np.asarray(Qt.toarray() if sp.issparse(Qt) else Qt, dtype=float)
    if Qt.shape != (nt, nt):
        raise ValueError("Q_t has the wrong size")
    Qt_inv = scipy.linalg.solve(Qt, np.eye(nt), assume_a="pos")
    G_t = np.linalg.cholesky(0.5 * (Qt_inv + Qt_inv.T)).T

    if not shift > 0:
        raise ValueError("shift must be positive")
    L = neumann_laplacian(nx).toarray() + shift * np.eye(nx * nx)
    w, U = np.linalg.eigh(L)
    if w[0] <= 0:
        raise np.linalg.LinAlgError("shifted Laplacian is not positive definite")
    S = (w ** (gamma / 2.0))[:, None] * U.T  # S^T S = L^gamma
    R = np.linalg.qr(S, mode="r")
    R = np.sign(np.diag(R))[:, None] * R
    return KroneckerOperator(DenseOperator(G_t), DenseOperator(np.triu(R)))


# --------------------------------------------------------------------------
# bundle export


def export_bundle(problem: TestProblem, directory) -> Path:
    """Write ``A.mtx`` (sparse), ``b.mtx``, ``x_true.mtx`` and ``metadata.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    A = problem.model.A
    M = A.matrix if isinstance(A, DenseOperator) else None
    if M is None:
        raise TypeError("only explicit matrices can be exported")
    write_matrix_market(d / "A.mtx", sp.csr_matrix(M))
    write_matrix_market(d / "b.mtx", problem.model.b)
    write_matrix_market(d / "x_true.mtx", problem.x_true)
    meta = dict(problem.metadata)
    meta.update(sigma=problem.sigma, lambda_true=problem.lambda_true,
                noise_level=problem.noise_level, m=problem.model.m, n=problem.model.n)
    (d / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def load_bundle(directory) -> dict:
    d = Path(directory)
    return {
        "A": read_matrix_market(d / "A.mtx"),
        "b": read_matrix_market(d / "b.mtx").ravel(),
        "x_true": read_matrix_market(d / "x_true.mtx").ravel(),
        "metadata": json.loads((d / "metadata.json").read_text()),
    }
