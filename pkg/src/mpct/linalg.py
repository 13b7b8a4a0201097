"""Structure-exploiting linear algebra for the ADMM equality-constrained QP.

The Hessian of the z-subproblem is block diagonal plus a rank-2(n+m)
coupling, and the Schur complement ``W = G P^-1 G^T`` is banded plus a
low-rank term of the same rank. Both are inverted through the Woodbury
identity on top of a cheap base solve:

* :class:`BlockDiagonal`: Cholesky factor per block.
* :class:`BandedCholesky`: Cholesky factor in band storage
  (``band[i, d] = M[i, i - d]``) with forward-backward substitution.
* :class:`LowRankCorrection`: ``U V^T`` with a factored capacitance
  matrix ``I + V^T base^-1 U``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels as K
from .errors import DimensionMismatch, NotPositiveDefinite, SingularCapacitance

PD_REL_TOL = 1e-12


def _vector(rhs, dim):
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if rhs.ndim != 1 or rhs.shape[0] != dim:
        raise DimensionMismatch(f"right-hand side has shape {rhs.shape}, expected ({dim},)")
    return rhs


class BlockDiagonal:
    """Block-diagonal symmetric matrix with per-block Cholesky factors.

    Blocks may have different sizes; they are stored zero-padded to the
    largest one so the compiled solve can loop over a single array.
    """

    def __init__(self, blocks):
        blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
        if not blocks:
            raise DimensionMismatch("at least one block is required")
        for i, b in enumerate(blocks):
            if b.shape[0] != b.shape[1]:
                raise DimensionMismatch(f"block {i} is not square: {b.shape}")
        self.blocks = blocks
        self.sizes = np.array([b.shape[0] for b in blocks], dtype=np.int64)
        self.offsets = np.concatenate(([0], np.cumsum(self.sizes)[:-1])).astype(np.int64)
        self.dim = int(self.sizes.sum())
        self.factors = None

    @property
    def factored(self):
        return self.factors is not None

    def factor(self):
        kmax = int(self.sizes.max())
        Ls = np.zeros((len(self.blocks), kmax, kmax))
        for i, b in enumerate(self.blocks):
            if not np.allclose(b, b.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(b).max())):
                raise NotPositiveDefinite(i, f"block {i} is not symmetric")
            L, fail = K.dense_cholesky(np.ascontiguousarray(b), PD_REL_TOL)
            if fail >= 0:
                raise NotPositiveDefinite(i, f"block {i} is not positive definite (pivot {fail})")
            k = b.shape[0]
            Ls[i, :k, :k] = L
        self.factors = Ls
        return self

    def to_dense(self):
        return scipy.linalg.block_diag(*self.blocks)

    def matvec(self, x):
        x = _vector(x, self.dim)
        return np.concatenate([
            b @ x[o:o + k] for b, o, k in zip(self.blocks, self.offsets, self.sizes)
        ])

    def solve(self, rhs):
        if not self.factored:
            self.factor()
        return K.block_solve(self.factors, self.offsets, self.sizes, _vector(rhs, self.dim))


def factor_block_diagonal(Y):
    """Factor every block of ``Y`` in place and return it."""
    return Y.factor()


class BandedCholesky:
    """Cholesky factor ``L`` (``L L^T = M``) of a symmetric banded matrix."""

    def __init__(self, band):
        band = np.ascontiguousarray(band, dtype=float)
        if band.ndim != 2:
            raise DimensionMismatch("band storage must be two-dimensional")
        self.dim = band.shape[0]
        self.bandwidth = band.shape[1] - 1
        L, fail = K.banded_cholesky(band, PD_REL_TOL)
        if fail >= 0:
            raise NotPositiveDefinite(fail, f"banded matrix not positive definite at row {fail}")
        self.lower = L

    @classmethod
    def from_dense(cls, M, bandwidth, check=True):
        M = np.asarray(M, dtype=float)
        n = M.shape[0]
        if M.shape != (n, n):
            raise DimensionMismatch(f"matrix must be square, got {M.shape}")
        if check:
            outside = np.tril(M, -bandwidth - 1)
            if np.any(outside != 0.0):
                raise DimensionMismatch(f"matrix has entries outside bandwidth {bandwidth}")
        return cls(dense_to_band(M, bandwidth))

    def to_dense_factor(self):
        return band_to_dense(self.lower, symmetric=False)

    def solve(self, rhs):
        return K.banded_solve(self.lower, _vector(rhs, self.dim))


def dense_to_band(M, bandwidth):
    n = M.shape[0]
    band = np.zeros((n, bandwidth + 1))
    for d in range(bandwidth + 1):
        band[d:, d] = np.diagonal(M, -d)
    return band


def band_to_dense(band, symmetric=True):
    n, w = band.shape
    M = np.zeros((n, n))
    for d in range(w):
        idx = np.arange(d, n)
        M[idx, idx - d] = band[d:, d]
        if symmetric and d:
            M[idx - d, idx] = band[d:, d]
    return M


def banded_cholesky_solve(factor, rhs):
    """Solve ``M w = rhs`` by forward then backward substitution."""
    return factor.solve(rhs)


@dataclass
class LowRankCorrection:
    """Low-rank term ``U V^T`` added to a factored base matrix.

    ``bind`` precomputes ``base^-1 U`` and factors the capacitance
    ``I + V^T base^-1 U``; afterwards the correction is tied to that base.
    """

    U: np.ndarray
    V: np.ndarray
    base_inv_u: np.ndarray = field(default=None, repr=False)
    capacitance: np.ndarray = field(default=None, repr=False)
    cap_lu: np.ndarray = field(default=None, repr=False)
    cap_piv: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.U = np.ascontiguousarray(np.atleast_2d(np.asarray(self.U, dtype=float)))
        self.V = np.ascontiguousarray(np.atleast_2d(np.asarray(self.V, dtype=float)))
        if self.U.shape != self.V.shape:
            raise DimensionMismatch(f"U {self.U.shape} and V {self.V.shape} differ")

    @property
    def rank(self):
        return self.U.shape[1]

    def bind(self, base):
        if base.dim != self.U.shape[0]:
            raise DimensionMismatch(f"base has dimension {base.dim}, U has {self.U.shape[0]} rows")
        r = self.rank
        cols = [base.solve(self.U[:, j]) for j in range(r)]
        self.base_inv_u = np.ascontiguousarray(np.column_stack(cols) if r else np.zeros((base.dim, 0)))
        self.capacitance = np.eye(r) + self.V.T @ self.base_inv_u
        if r:
            # power-of-two balancing U -> U D, V -> V D^-1; exact, and it removes
            # the artificial ill-conditioning caused by badly scaled weights
            _, (scale, _) = scipy.linalg.matrix_balance(self.capacitance, permute=False,
                                                        separate=True)
            self.U = np.ascontiguousarray(self.U * scale)
            self.V = np.ascontiguousarray(self.V / scale)
            self.base_inv_u = np.ascontiguousarray(self.base_inv_u * scale)
            self.capacitance = np.eye(r) + self.V.T @ self.base_inv_u
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, piv = scipy.linalg.lu_factor(self.capacitance, check_finite=True)
            diag = np.abs(np.diag(lu))
            if diag.min() <= 1e-14 * max(1.0, diag.max()):
                raise SingularCapacitance("capacitance matrix I + V^T base^-1 U is singular")
        else:
            lu, piv = np.zeros((0, 0)), np.zeros(0, dtype=np.int32)
        self.cap_lu = np.ascontiguousarray(lu)
        self.cap_piv = np.ascontiguousarray(piv, dtype=np.int64)
        self._base = base
        return self

    def apply(self, base_sol):
        return K.low_rank_apply(base_sol, self.base_inv_u, self.V, self.cap_lu, self.cap_piv)


def woodbury_solve(Y, lr, rhs):
    """Solve ``(Y + U V^T) s = rhs`` given a factored base ``Y``.

    ``Y`` is anything with ``dim`` and ``solve`` (a :class:`BlockDiagonal`
    or :class:`BandedCholesky`); ``lr`` must have been bound to it.
    """
    rhs = _vector(rhs, Y.dim)
    if lr.U.shape[0] != Y.dim:
        raise DimensionMismatch(f"correction has {lr.U.shape[0]} rows, base has dimension {Y.dim}")
    if lr.base_inv_u is None or getattr(lr, "_base", None) is not Y:
        lr.bind(Y)
    return lr.apply(Y.solve(rhs))
