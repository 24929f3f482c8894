"""Matrix-free linear operators.

Every operator exposes ``apply`` (``v -> M v``) and ``apply_transpose``
(``u -> M^T u``).  Both accept a 1-D vector or a 2-D block whose columns are
vectors.  Operators are immutable once built and may be shared between chains.

Covariance operators additionally carry optional exact ``inverse`` and
``sqrt`` operators; those are only used by dense oracles and by the
factored (TSVD/rSVD) proposals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

DENSE_CAP = 4_000_000


class LinearOperator:
    """Abstract ``rows x cols`` linear map."""

    def __init__(self, shape: tuple[int, int]):
        rows, cols = (int(s) for s in shape)
        if rows < 1 or cols < 1:
            raise ValueError(f"invalid operator shape {shape}")
        self._shape = (rows, cols)

    @property
    def shape(self) -> tuple[int, int]:
        return self._shape

    @property
    def rows(self) -> int:
        return self._shape[0]

    @property
    def cols(self) -> int:
        return self._shape[1]

    # subclasses implement these on 2-D blocks (k columns)
    def _matmat(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _rmatmat(self, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            if v.shape[0] != self.cols:
                raise ValueError(f"expected vector of length {self.cols}, got {v.shape[0]}")
            return self._matmat(v[:, None])[:, 0]
        if v.ndim != 2 or v.shape[0] != self.cols:
            raise ValueError(f"expected block with {self.cols} rows, got shape {v.shape}")
        return self._matmat(v)

    def apply_transpose(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            if u.shape[0] != self.rows:
                raise ValueError(f"expected vector of length {self.rows}, got {u.shape[0]}")
            return self._rmatmat(u[:, None])[:, 0]
        if u.ndim != 2 or u.shape[0] != self.rows:
            raise ValueError(f"expected block with {self.rows} rows, got shape {u.shape}")
        return self._rmatmat(u)

    matvec = apply
    rmatvec = apply_transpose

    @property
    def T(self) -> LinearOperator:
        return TransposedOperator(self)

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            return ProductOperator(self, other)
        return self.apply(other)

    def __add__(self, other):
        if not isinstance(other, LinearOperator):
            return NotImplemented
        return SumOperator(self, other)

    def __sub__(self, other):
        if not isinstance(other, LinearOperator):
            return NotImplemented
        return SumOperator(self, ScaledOperator(other, -1.0))

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return ScaledOperator(self, float(scalar))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.rows}x{self.cols}>"


class DenseOperator(LinearOperator):
    """Wrap a dense ndarray or a scipy sparse matrix."""

    def __init__(self, M):
        if sp.issparse(M):
            M = sp.csr_matrix(M, dtype=float)
            self._MT = M.T.tocsr()
        else:
            M = np.array(M, dtype=float)
            if M.ndim != 2:
                raise ValueError("DenseOperator needs a 2-D array")
            M.setflags(write=False)
            self._MT = M.T
        self.matrix = M
        super().__init__(M.shape)

    def _matmat(self, X):
        return np.asarray(self.matrix @ X)

    def _rmatmat(self, Y):
        return np.asarray(self._MT @ Y)


class DiagonalOperator(LinearOperator):
    def __init__(self, d):
        d = np.array(d, dtype=float).ravel()
        d.setflags(write=False)
        self.diagonal = d
        super().__init__((d.size, d.size))

    def _matmat(self, X):
        return self.diagonal[:, None] * X

    _rmatmat = _matmat


class IdentityOperator(DiagonalOperator):
    def __init__(self, n: int):
        super().__init__(np.ones(n))

    def _matmat(self, X):
        return np.array(X, copy=True)

    _rmatmat = _matmat


class TransposedOperator(LinearOperator):
    def __init__(self, op: LinearOperator):
        self.op = op
        super().__init__((op.cols, op.rows))

    def _matmat(self, X):
        return self.op._rmatmat(X)

    def _rmatmat(self, Y):
        return self.op._matmat(Y)

    @property
    def T(self):
        return self.op


class ProductOperator(LinearOperator):
    def __init__(self, left: LinearOperator, right: LinearOperator):
        if left.cols != right.rows:
            raise ValueError(f"cannot compose {left.shape} with {right.shape}")
        self.left, self.right = left, right
        super().__init__((left.rows, right.cols))

    def _matmat(self, X):
        return self.left._matmat(self.right._matmat(X))

    def _rmatmat(self, Y):
        return self.right._rmatmat(self.left._rmatmat(Y))


class SumOperator(LinearOperator):
    def __init__(self, a: LinearOperator, b: LinearOperator):
        if a.shape != b.shape:
            raise ValueError(f"cannot add {a.shape} and {b.shape}")
        self.a, self.b = a, b
        super().__init__(a.shape)

    def _matmat(self, X):
        return self.a._matmat(X) + self.b._matmat(X)

    def _rmatmat(self, Y):
        return self.a._rmatmat(Y) + self.b._rmatmat(Y)


class ScaledOperator(LinearOperator):
    def __init__(self, op: LinearOperator, scale: float):
        self.op, self.scale = op, float(scale)
        super().__init__(op.shape)

    def _matmat(self, X):
        return self.scale * self.op._matmat(X)

    def _rmatmat(self, Y):
        return self.scale * self.op._rmatmat(Y)


class KroneckerOperator(LinearOperator):
    """``outer ⊗ inner`` applied through the reshape identity.

    With ``v`` laid out as ``outer.cols`` consecutive blocks of length
    ``inner.cols`` (time-major for a spatiotemporal field), the product is
    ``vec(outer @ V @ inner^T)`` where ``V = v.reshape(outer.cols, inner.cols)``.
    The Kronecker matrix is never formed.
    """

    def __init__(self, outer: LinearOperator, inner: LinearOperator):
        self.outer = aslinearoperator(outer)
        self.inner = aslinearoperator(inner)
        super().__init__(
            (self.outer.rows * self.inner.rows, self.outer.cols * self.inner.cols)
        )

    @staticmethod
    def _kron_block(left_apply, right_apply, X, p, q, p_out, q_out):
        k = X.shape[1]
        out = np.empty((p_out * q_out, k))
        for j in range(k):
            V = X[:, j].reshape(p, q)
            W = right_apply(V.T).T  # rows of V mapped by the inner factor
            out[:, j] = left_apply(W).reshape(-1)
        return out

    def _matmat(self, X):
        return self._kron_block(
            self.outer._matmat, self.inner._matmat, X,
            self.outer.cols, self.inner.cols, self.outer.rows, self.inner.rows,
        )

    def _rmatmat(self, Y):
        return self._kron_block(
            self.outer._rmatmat, self.inner._rmatmat, Y,
            self.outer.rows, self.inner.rows, self.outer.cols, self.inner.cols,
        )


class BlockDiagonalOperator(LinearOperator):
    def __init__(self, blocks: Sequence[LinearOperator]):
        if not blocks:
            raise ValueError("need at least one block")
        self.blocks = tuple(aslinearoperator(b) for b in blocks)
        self._row_off = np.cumsum([0] + [b.rows for b in self.blocks])
        self._col_off = np.cumsum([0] + [b.cols for b in self.blocks])
        super().__init__((int(self._row_off[-1]), int(self._col_off[-1])))

    def _matmat(self, X):
        out = np.empty((self.rows, X.shape[1]))
        for i, blk in enumerate(self.blocks):
            out[self._row_off[i]:self._row_off[i + 1]] = blk._matmat(
                X[self._col_off[i]:self._col_off[i + 1]]
            )
        return out

    def _rmatmat(self, Y):
        out = np.empty((self.cols, Y.shape[1]))
        for i, blk in enumerate(self.blocks):
            out[self._col_off[i]:self._col_off[i + 1]] = blk._rmatmat(
                Y[self._row_off[i]:self._row_off[i + 1]]
            )
        return out


class CovarianceOperator(LinearOperator):
    """Symmetric positive definite operator with optional exact inverse/sqrt.

    ``inverse`` and ``sqrt`` are themselves operators.  ``sqrt`` is the
    symmetric square root unless stated otherwise by the constructor.
    """

    def __init__(self, base, inverse=None, sqrt=None, spd: bool = True):
        base = aslinearoperator(base)
        if base.rows != base.cols:
            raise ValueError("covariance operator must be square")
        self.base = base
        self.inverse = None if inverse is None else aslinearoperator(inverse)
        self.sqrt = None if sqrt is None else aslinearoperator(sqrt)
        self.spd = spd
        super().__init__(base.shape)

    @property
    def n(self) -> int:
        return self.rows

    def _matmat(self, X):
        return self.base._matmat(X)

    def _rmatmat(self, Y):
        return self.base._matmat(Y)

    @classmethod
    def from_dense(cls, M, with_factors: bool = True) -> CovarianceOperator:
        """Build from an explicit SPD matrix, caching inverse and sqrt."""
        M = np.array(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("need a square matrix")
        if not with_factors:
            return cls(DenseOperator(M))
        w, U = np.linalg.eigh(0.5 * (M + M.T))
        if w[0] <= 0:
            raise np.linalg.LinAlgError(f"matrix is not positive definite (min eig {w[0]:.3e})")
        sqrt = (U * np.sqrt(w)) @ U.T
        inv = (U / w) @ U.T
        return cls(DenseOperator(M), inverse=DenseOperator(inv), sqrt=DenseOperator(sqrt))

    @classmethod
    def diagonal(cls, d) -> CovarianceOperator:
        d = np.asarray(d, dtype=float)
        if np.any(d <= 0):
            raise ValueError("diagonal covariance needs positive entries")
        return cls(DiagonalOperator(d), inverse=DiagonalOperator(1.0 / d),
                   sqrt=DiagonalOperator(np.sqrt(d)))

    @classmethod
    def identity(cls, n: int) -> CovarianceOperator:
        I = IdentityOperator(n)
        return cls(I, inverse=I, sqrt=I)


def aslinearoperator(M) -> LinearOperator:
    if isinstance(M, LinearOperator):
        return M
    return DenseOperator(M)


# --------------------------------------------------------------------------
# constructors


@dataclass(frozen=True)
class MaternSpec:
    """Matérn kernel on a point cloud.

    ``points`` has shape ``(N, d)`` (a 1-D array is read as ``N`` scalars).
    With ``normalize`` the cloud is shifted and scaled isotropically so that
    its longest side spans ``[0, 1]``.
    """

    nu: float
    length_scale: float
    points: np.ndarray = field(repr=False)
    jitter: float = 1e-10
    normalize: bool = True


_MATERN_NU = (0.5, 1.5, 2.5)


def matern_kernel(r, nu: float, length_scale: float):
    """Closed-form Matérn correlation for ``nu`` in {1/2, 3/2, 5/2}."""
    s = np.asarray(r, dtype=float) / length_scale
    if np.isclose(nu, 0.5):
        return np.exp(-s)
    if np.isclose(nu, 1.5):
        t = np.sqrt(3.0) * s
        return (1.0 + t) * np.exp(-t)
    if np.isclose(nu, 2.5):
        t = np.sqrt(5.0) * s
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    raise ValueError(f"unsupported Matérn smoothness nu={nu}; use one of {_MATERN_NU}")


def _normalized_points(spec: MaternSpec) -> np.ndarray:
    P = np.asarray(spec.points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[0] == 0:
        raise ValueError("Matérn grid needs at least one point")
    if spec.normalize and P.shape[0] > 1:
        lo = P.min(axis=0)
        span = float((P.max(axis=0) - lo).max())
        if span > 0:
            P = (P - lo) / span
    return P


def matern_matrix(spec: MaternSpec) -> np.ndarray:
    if not spec.length_scale > 0:
        raise ValueError("length scale must be positive")
    if spec.jitter < 0:
        raise ValueError("jitter must be nonnegative")
    if not any(np.isclose(spec.nu, v) for v in _MATERN_NU):
        raise ValueError(f"unsupported Matérn smoothness nu={spec.nu}")
    P = _normalized_points(spec)
    diff = P[:, None, :] - P[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    K = matern_kernel(r, spec.nu, spec.length_scale)
    K[np.diag_indices_from(K)] += spec.jitter
    return K


def matern_covariance(spec: MaternSpec, with_factors: bool = False) -> CovarianceOperator:
    """Dense-backed Matérn covariance.

    ``with_factors`` precomputes the exact inverse and symmetric square root
    (desk scale only).
    """
    return CovarianceOperator.from_dense(matern_matrix(spec), with_factors=with_factors)


def grid_points(*sizes: int) -> np.ndarray:
    """Regular lattice in ``[0, 1]^d`` in C order (last axis fastest)."""
    axes = [np.linspace(0.0, 1.0, s) if s > 1 else np.zeros(1) for s in sizes]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class _Selection(LinearOperator):
    def __init__(self, idx: np.ndarray, n: int):
        self.idx = idx
        super().__init__((idx.size, n))

    def _matmat(self, X):
        return X[self.idx]

    def _rmatmat(self, Y):
        out = np.zeros((self.cols, Y.shape[1]))
        out[self.idx] = Y
        return out


def subsampled_covariance(Q_M: CovarianceOperator, indices) -> CovarianceOperator:
    """Principal submatrix ``S Q_M S^T`` of ``Q_M`` on ``indices``."""
    idx = np.asarray(indices, dtype=int).ravel()
    n = Q_M.rows
    if idx.size == 0:
        raise ValueError("empty selection")
    if np.unique(idx).size != idx.size:
        raise ValueError("selection indices must be unique")
    if idx.min() < 0 or idx.max() >= n:
        raise ValueError(f"selection indices must lie in [0, {n})")
    if isinstance(Q_M.base, DenseOperator) and not sp.issparse(Q_M.base.matrix):
        return CovarianceOperator(DenseOperator(Q_M.base.matrix[np.ix_(idx, idx)]))
    S = _Selection(idx, n)
    return CovarianceOperator(S @ Q_M @ S.T)


def kronecker_covariance(Q_t: CovarianceOperator, Q_s: CovarianceOperator) -> CovarianceOperator:
    """``Q_t ⊗ Q_s`` with Kronecker inverse/sqrt when both factors have them."""
    inv = sqrt = None
    if Q_t.inverse is not None and Q_s.inverse is not None:
        inv = KroneckerOperator(Q_t.inverse, Q_s.inverse)
    if Q_t.sqrt is not None and Q_s.sqrt is not None:
        sqrt = KroneckerOperator(Q_t.sqrt, Q_s.sqrt)
    return CovarianceOperator(KroneckerOperator(Q_t, Q_s), inverse=inv, sqrt=sqrt)


def kronecker_apply(K: KroneckerOperator, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (K.cols,):
        raise ValueError(f"expected vector of length {K.cols}, got shape {v.shape}")
    return K.apply(v)


def dense_materialize(op, cap: int = DENSE_CAP) -> np.ndarray:
    """Column ``j`` of the result is ``op.apply(e_j)``."""
    op = aslinearoperator(op)
    if op.rows * op.cols > cap:
        raise MemoryError(
            f"operator {op.rows}x{op.cols} exceeds the dense cap of {cap} entries"
        )
    if isinstance(op, DenseOperator):
        M = op.matrix
        return M.toarray() if sp.issparse(M) else np.array(M)
    return op.apply(np.eye(op.cols))


# --------------------------------------------------------------------------
# Matrix Market


def write_matrix_market(path, M) -> None:
    """Dense arrays go out in ``array real general`` form, sparse as coordinate."""
    if sp.issparse(M):
        scipy.io.mmwrite(str(path), sp.coo_matrix(M), field="real", symmetry="general")
        return
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    scipy.io.mmwrite(str(path), M, field="real", symmetry="general")


def read_matrix_market(path):
    M = scipy.io.mmread(str(path))
    return M.tocsr() if sp.issparse(M) else np.asarray(M, dtype=float)
