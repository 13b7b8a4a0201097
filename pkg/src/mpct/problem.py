"""Compilation of the soft-constrained MPCT problem into ADMM form.

Decision vector ``z = (x_0, u_0, ..., x_{N-1}, u_{N-1}, x_s, u_s)`` and
splitting vector ``v = D z`` with per-stage blocks ``(x, u, E x + F u)``.
The equality constraints ``G z = b`` stack the initial condition, the N
dynamics rows (the last one landing on ``x_s``) and the steady-state row
``(A - I) x_s + B u_s``, so ``G`` has ``(N + 2) n`` rows.

Structure used by the z-update:

* ``P = H + rho D^T D = Y + U V^T`` where ``Y`` is block diagonal with one
  ``(n+m)`` block per stage and ``U V^T`` holds only the ``-blkdiag(Q, R)``
  couplings between every stage and the artificial reference
  (rank ``2 (n + m)``).
* ``W = G P^-1 G^T = G Y^-1 G^T + U_w V_w^T``. The first term is block
  tridiagonal in ``n x n`` blocks (row block j only touches stages j-1 and
  j), i.e. banded with half-bandwidth ``2 n - 1``; it is factored by banded
  Cholesky. ``U_w = -G Y^-1 U (I + V^T Y^-1 U)^-1`` and ``V_w = G Y^-1 V``
  keep the same rank ``2 (n + m)``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, HorizonTooShort, InvalidBounds
from .linalg import BandedCholesky, BlockDiagonal, LowRankCorrection, dense_to_band
from .model import Preconditioner, controllability_index, expand_beta, precondition


@dataclass(frozen=True)
class ProblemData:
    model: object
    constraints: object
    weights: object
    N: int
    rho: float
    scaling: Preconditioner
    Y: BlockDiagonal = field(repr=False)
    P_lr: LowRankCorrection = field(repr=False)
    W_chol: BandedCholesky = field(repr=False)
    W_lr: LowRankCorrection = field(repr=False)
    H: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    v_lo: np.ndarray = field(repr=False)
    v_hi: np.ndarray = field(repr=False)
    v_beta: np.ndarray = field(repr=False)
    v_kind: np.ndarray = field(repr=False)
    ctrb_index: int = None

    @property
    def n(self):
        return self.model.n

    @property
    def m(self):
        return self.model.m

    @property
    def nh(self):
        return self.model.nh

    @property
    def n_z(self):
        return (self.N + 1) * (self.n + self.m)

    @property
    def n_v(self):
        return (self.N + 1) * (self.n + self.m + self.nh)

    @property
    def m_z(self):
        return (self.N + 2) * self.n

    @property
    def stage_size(self):
        return self.n + self.m + self.nh

    @property
    def bandwidth(self):
        return self.W_chol.bandwidth

    # -- right-hand data --------------------------------------------------

    def q_vector(self, x_r, u_r):
        """Linear cost term, inputs in solver (scaled) units."""
        q = np.zeros(self.n_z)
        o = self.N * (self.n + self.m)
        q[o:o + self.n] = -self.weights.T @ x_r
        q[o + self.n:] = -self.weights.S @ u_r
        return q

    def b_vector(self, x_hat, d_hat):
        """Equality right-hand side, inputs in solver (scaled) units."""
        n = self.n
        b = np.empty(self.m_z)
        b[:n] = x_hat
        b[n:] = np.tile(-self.model.Bd @ d_hat, self.N + 1)
        return b

    def kernel_args(self):
        """Problem arrays in the order expected by the compiled z-update."""
        mo = self.model
        return (mo.A, mo.B, self.N, self.Y.factors, self.Y.offsets, self.Y.sizes,
                self.P_lr.base_inv_u, self.P_lr.V, self.P_lr.cap_lu, self.P_lr.cap_piv,
                self.W_chol.lower, self.W_lr.base_inv_u, self.W_lr.V,
                self.W_lr.cap_lu, self.W_lr.cap_piv)

    # -- structured operators ---------------------------------------------

    def apply_D(self, z):
        return K.apply_D(np.ascontiguousarray(z, dtype=float), self.model.E, self.model.F, self.N)

    def apply_Dt(self, v):
        return K.apply_Dt(np.ascontiguousarray(v, dtype=float), self.model.E, self.model.F, self.N)

    def apply_G(self, z):
        return K.apply_G(np.ascontiguousarray(z, dtype=float), self.model.A, self.model.B, self.N)

    def apply_Gt(self, mu):
        return K.apply_Gt(np.ascontiguousarray(mu, dtype=float), self.model.A, self.model.B, self.N)

    def solve_P(self, rhs):
        return K.solve_P(np.ascontiguousarray(rhs, dtype=float), *self.kernel_args()[3:10])

    def solve_W(self, rhs):
        return K.solve_W(np.ascontiguousarray(rhs, dtype=float), *self.kernel_args()[10:])

    def dense_D(self):
        mo = self.model
        stage = np.block([
            [np.eye(mo.n), np.zeros((mo.n, mo.m))],
            [np.zeros((mo.m, mo.n)), np.eye(mo.m)],
            [mo.E, mo.F],
        ])
        return np.kron(np.eye(self.N + 1), stage)

    def dense_P(self):
        D = self.dense_D()
        return self.H + self.rho * D.T @ D

    # -- scaling helpers -------------------------------------------------

    def scale_x(self, x):
        return np.asarray(x, dtype=float) * self.scaling.Nx

    def scale_u(self, u):
        return np.asarray(u, dtype=float) * self.scaling.Nu

    def unscale_x(self, x):
        return np.asarray(x, dtype=float) / self.scaling.Nx

    def unscale_u(self, u):
        return np.asarray(u, dtype=float) / self.scaling.Nu


def _blkdiag2(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n + m, n + m))
    out[:n, :n] = a
    out[n:, n:] = b
    return out


def assemble_H(weights, n, m, N):
    Kst = _blkdiag2(weights.Q, weights.R)
    Kt = _blkdiag2(N * weights.Q + weights.T, N * weights.R + weights.S)
    sz = n + m
    H = np.zeros(((N + 1) * sz, (N + 1) * sz))
    s = N * sz
    for i in range(N):
        o = i * sz
        H[o:o + sz, o:o + sz] = Kst
        H[o:o + sz, s:s + sz] = -Kst
        H[s:s + sz, o:o + sz] = -Kst
    H[s:, s:] = Kt
    return H


def assemble_G(A, B, N):
    n, m = B.shape
    sz = n + m
    G = np.zeros(((N + 2) * n, (N + 1) * sz))
    G[:n, :n] = np.eye(n)
    for j in range(1, N + 1):
        G[j * n:(j + 1) * n, (j - 1) * sz:(j - 1) * sz + n] = A
        G[j * n:(j + 1) * n, (j - 1) * sz + n:j * sz] = B
        G[j * n:(j + 1) * n, j * sz:j * sz + n] = -np.eye(n)
    G[(N + 1) * n:, N * sz:N * sz + n] = A - np.eye(n)
    G[(N + 1) * n:, N * sz + n:] = B
    return G


def _v_bounds(constraints, beta_full, n, m, nh, N):
    sv = n + m + nh
    lo = np.empty((N + 1) * sv)
    hi = np.empty_like(lo)
    kind = np.full(lo.shape, K.SOFT, dtype=np.int64)
    xl, xh = constraints.x_bounds
    hl, hh = constraints.h_bounds
    for i in range(N + 1):
        o = i * sv
        lo[o:o + n], hi[o:o + n] = xl, xh
        lo[o + n:o + n + m], hi[o + n:o + n + m] = constraints.u_lo, constraints.u_hi
        lo[o + n + m:o + sv], hi[o + n + m:o + sv] = hl, hh
    lo[:n], hi[:n] = -np.inf, np.inf
    kind[:n] = K.FREE
    kind[n:n + m] = K.HARD
    beta = np.concatenate([np.zeros(n + m), beta_full])
    return lo, hi, beta, kind


def build_problem(model, constraints, weights, N, rho, scaling=None, check_horizon=True):
    """Compile the MPCT problem and factor every structured matrix.

    ``model``, ``constraints`` and ``weights`` are in physical units; when
    ``scaling`` is given they are preconditioned first and the returned
    problem works in scaled units internally.
    """
    N = int(N)
    if N < 1:
        raise HorizonTooShort(N, 1)
    if rho <= 0:
        raise InvalidBounds("rho must be positive")
    n, m, nh = model.n, model.m, model.nh
    if (constraints.n, constraints.m, constraints.nh) != (n, m, nh):
        raise DimensionMismatch("constraint set dimensions do not match the model")
    if weights.Q.shape != (n, n) or weights.T.shape != (n, n) \
            or weights.R.shape != (m, m) or weights.S.shape != (m, m):
        raise DimensionMismatch("weight matrices do not match the model")
    weights.check()
    model.check_structure()
    idx = controllability_index(model.A, model.B)
    if check_horizon and idx is not None and N <= idx:
        raise HorizonTooShort(N, idx)

    if scaling is None:
        scaling = Preconditioner.identity(n, m, nh)
    sm, sc, sw = precondition(model, constraints, weights, scaling)
    beta_full = expand_beta(sw.beta, n, m, nh, N)

    sz = n + m
    DtD = np.block([
        [np.eye(n) + sm.E.T @ sm.E, sm.E.T @ sm.F],
        [sm.F.T @ sm.E, np.eye(m) + sm.F.T @ sm.F],
    ])
    Kst = _blkdiag2(sw.Q, sw.R)
    Kt = _blkdiag2(N * sw.Q + sw.T, N * sw.R + sw.S)
    Y = BlockDiagonal([Kst + rho * DtD] * N + [Kt + rho * DtD]).factor()

    n_z = (N + 1) * sz
    Ablk = np.zeros((n_z, sz))
    for i in range(N):
        Ablk[i * sz:(i + 1) * sz] = -Kst
    Js = np.zeros((n_z, sz))
    Js[N * sz:] = np.eye(sz)
    P_lr = LowRankCorrection(np.hstack([Ablk, Js]), np.hstack([Js, Ablk])).bind(Y)

    G = assemble_G(sm.A, sm.B, N)
    YinvGt = np.column_stack([Y.solve(G[r]) for r in range(G.shape[0])])
    Gamma = G @ YinvGt
    Gamma = 0.5 * (Gamma + Gamma.T)
    bw = min(2 * n - 1, Gamma.shape[0] - 1)
    off_band = np.abs(np.tril(Gamma, -bw - 1)).max(initial=0.0)
    if off_band > 1e-12 * np.abs(Gamma).max():
        raise DimensionMismatch(f"G Y^-1 G^T has fill outside bandwidth {bw}")
    Gamma_band = dense_to_band(Gamma, bw)
    W_chol = BandedCholesky(Gamma_band)

    GYU = G @ P_lr.base_inv_u
    cap_inv_t = np.linalg.solve(P_lr.capacitance.T, GYU.T)
    Uw = -cap_inv_t.T
    Vw = YinvGt.T @ P_lr.V
    W_lr = LowRankCorrection(Uw, Vw).bind(W_chol)

    lo, hi, beta, kind = _v_bounds(sc, beta_full, n, m, nh, N)
    return ProblemData(
        model=sm, constraints=sc, weights=sw, N=N, rho=float(rho), scaling=scaling,
        Y=Y, P_lr=P_lr, W_chol=W_chol, W_lr=W_lr,
        H=assemble_H(sw, n, m, N), G=G,
        v_lo=lo, v_hi=hi, v_beta=beta, v_kind=kind, ctrb_index=idx,
    )
