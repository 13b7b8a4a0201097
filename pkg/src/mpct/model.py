"""Prediction model, constraints, weights and diagonal preconditioning."""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, InvalidBounds, NonpositiveScaling, NotPositiveDefinite


def _mat(a, rows=None, cols=None, name="matrix"):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if rows is not None and a.shape[0] != rows or cols is not None and a.shape[1] != cols:
        raise DimensionMismatch(f"{name} has shape {a.shape}, expected ({rows}, {cols})")
    return np.ascontiguousarray(a)


def _vec(a, n, name="vector", fill=0.0):
    if a is None:
        return np.full(n, fill)
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return np.full(n, float(a))
    if a.shape != (n,):
        raise DimensionMismatch(f"{name} has shape {a.shape}, expected ({n},)")
    return a.copy()


def controllability_index(A, B, tol=None):
    """Smallest k with rank [B, AB, ..., A^(k-1) B] = n, or None if uncontrollable."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    n = A.shape[0]
    blocks = [B]
    for k in range(1, n + 1):
        C = np.hstack(blocks)
        if np.linalg.matrix_rank(C, tol=tol) == n:
            return k
        blocks.append(A @ blocks[-1])
    return None


def is_observable(A, C):
    return controllability_index(np.asarray(A).T, np.asarray(C).T) is not None


@dataclass
class LinearModel:
    """Discrete LTI prediction model ``x+ = A x + B u + B_d d``, ``y = C x + d``.

    ``E`` and ``F`` define the coupled constraint rows ``h = E x + F u``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Bd: np.ndarray = None
    E: np.ndarray = None
    F: np.ndarray = None

    def __post_init__(self):
        self.A = _mat(self.A, name="A")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {self.A.shape}")
        self.B = _mat(self.B, n, name="B")
        self.C = _mat(self.C, cols=n, name="C")
        p = self.C.shape[0]
        self.Bd = np.zeros((n, p)) if self.Bd is None else _mat(self.Bd, n, p, name="Bd")
        if self.E is None:
            self.E = np.zeros((0, n))
        self.E = np.ascontiguousarray(np.asarray(self.E, dtype=float).reshape(-1, n))
        nh = self.E.shape[0]
        m = self.B.shape[1]
        if self.F is None:
            self.F = np.zeros((nh, m))
        self.F = np.ascontiguousarray(np.asarray(self.F, dtype=float).reshape(nh, m))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def nh(self):
        return self.E.shape[0]

    def check_structure(self):
        """Warn when (A, B) is not controllable or (A, C) not observable."""
        if controllability_index(self.A, self.B) is None:
            warnings.warn("(A, B) is not controllable", RuntimeWarning, stacklevel=2)
        if not is_observable(self.A, self.C):
            warnings.warn("(A, C) is not observable", RuntimeWarning, stacklevel=2)


@dataclass
class ConstraintSet:
    """Box bounds on x, u and h = E x + F u, plus nonnegative back-offs.

    Infinite bounds are allowed. Inputs are never tightened.
    """

    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    h_lo: np.ndarray = None
    h_hi: np.ndarray = None
    eta_x_lo: np.ndarray = None
    eta_x_hi: np.ndarray = None
    eta_h_lo: np.ndarray = None
    eta_h_hi: np.ndarray = None

    def __post_init__(self):
        self.x_lo = np.asarray(self.x_lo, dtype=float).ravel().copy()
        n = self.x_lo.shape[0]
        self.x_hi = _vec(self.x_hi, n, "x_hi")
        self.u_lo = np.asarray(self.u_lo, dtype=float).ravel().copy()
        m = self.u_lo.shape[0]
        self.u_hi = _vec(self.u_hi, m, "u_hi")
        nh = 0 if self.h_lo is None else np.asarray(self.h_lo).size
        self.h_lo = _vec(self.h_lo, nh, "h_lo", -np.inf)
        self.h_hi = _vec(self.h_hi, nh, "h_hi", np.inf)
        self.eta_x_lo = _vec(self.eta_x_lo, n, "eta_x_lo")
        self.eta_x_hi = _vec(self.eta_x_hi, n, "eta_x_hi")
        self.eta_h_lo = _vec(self.eta_h_lo, nh, "eta_h_lo")
        self.eta_h_hi = _vec(self.eta_h_hi, nh, "eta_h_hi")
        self.validate()

    def validate(self):
        for name in ("eta_x_lo", "eta_x_hi", "eta_h_lo", "eta_h_hi"):
            if np.any(getattr(self, name) < 0):
                raise InvalidBounds(f"{name} must be nonnegative")
        if not np.all(self.u_lo < self.u_hi):
            raise InvalidBounds("input bounds require u_lo < u_hi")
        xl, xh = self.x_bounds
        hl, hh = self.h_bounds
        if not np.all(xl < xh):
            raise InvalidBounds("tightened state bounds are empty")
        if not np.all(hl < hh):
            raise InvalidBounds("tightened coupled bounds are empty")

    @property
    def n(self):
        return self.x_lo.shape[0]

    @property
    def m(self):
        return self.u_lo.shape[0]

    @property
    def nh(self):
        return self.h_lo.shape[0]

    @property
    def x_bounds(self):
        return self.x_lo + self.eta_x_lo, self.x_hi - self.eta_x_hi

    @property
    def h_bounds(self):
        return self.h_lo + self.eta_h_lo, self.h_hi - self.eta_h_hi


@dataclass
class CostWeights:
    """Stage (Q, R), offset (T, S) weights and soft-constraint weights.

    ``beta`` is a scalar, a per-stage pattern of length ``n + m + nh`` laid
    out as (x, u, h), or the full vector over
    ``(h_0, x_1, u_1, h_1, ..., x_s, u_s, h_s)``.
    """

    Q: np.ndarray
    R: np.ndarray
    T: np.ndarray
    S: np.ndarray
    beta: object = 100.0

    def __post_init__(self):
        for name in ("Q", "R", "T", "S"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if M.ndim == 2 and M.shape[0] == 1 and M.shape[1] > 1:
                M = np.diag(M[0])
            setattr(self, name, M)
        b = np.asarray(self.beta, dtype=float)
        self.beta = float(b) if b.ndim == 0 else b.ravel().copy()

    def check(self):
        for name in ("Q", "R", "T", "S"):
            M = getattr(self, name)
            if not np.allclose(M, M.T):
                raise NotPositiveDefinite(name, f"weight {name} is not symmetric")
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                raise NotPositiveDefinite(name, f"weight {name} is not positive definite") from None
        if np.any(np.asarray(self.beta) <= 0):
            raise InvalidBounds("soft-constraint weights must be positive")


def expand_beta(beta, n, m, nh, N):
    """Full soft-penalty vector of length ``nh + N (n + m + nh)``."""
    sv = n + m + nh
    n_theta = nh + N * sv
    b = np.asarray(beta, dtype=float)
    if b.ndim == 0:
        return np.full(n_theta, float(b))
    if b.shape == (sv,):
        return np.concatenate([b[n + m:], np.tile(b, N)])
    if b.shape == (n_theta,):
        return b.copy()
    raise DimensionMismatch(f"beta has length {b.size}; expected 1, {sv} or {n_theta}")


def _beta_scale(beta, nx, nu, nc):
    """Divide each beta entry by the scaling of the variable it penalizes."""
    b = np.asarray(beta, dtype=float)
    n, m, nh = nx.size, nu.size, nc.size
    pattern = np.concatenate([nx, nu, nc])
    if b.ndim == 0:
        return b / pattern
    sv = n + m + nh
    if b.shape == (sv,):
        return b / pattern
    if (b.size - nh) % sv:
        raise DimensionMismatch(f"beta has length {b.size}, not compatible with the layout")
    N = (b.size - nh) // sv
    return b / np.concatenate([nc, np.tile(pattern, N)])


@dataclass
class Preconditioner:
    """Diagonal scalings ``x~ = N_x x``, ``u~ = N_u u``, ``h~ = N_c h``."""

    Nx: np.ndarray
    Nu: np.ndarray
    Nc: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("Nx", "Nu", "Nc"):
            d = np.asarray(getattr(self, name), dtype=float)
            if d.ndim == 2:
                d = np.diag(d)
            if np.any(~np.isfinite(d)) or np.any(d <= 0):
                raise NonpositiveScaling(f"{name} must have strictly positive finite entries")
            setattr(self, name, d.ravel().copy())

    @classmethod
    def identity(cls, n, m, nh):
        return cls(np.ones(n), np.ones(m), np.ones(nh))

    def weights_to_physical(self, Q, R, T, S):
        """Map weights chosen for the scaled variables to physical units."""
        sx = lambda M: self.Nx[:, None] * np.asarray(M, dtype=float) * self.Nx[None, :]
        su = lambda M: self.Nu[:, None] * np.asarray(M, dtype=float) * self.Nu[None, :]
        return sx(Q), su(R), sx(T), su(S)

    def beta_to_physical(self, beta):
        """Convert soft weights given for the scaled problem to physical units."""
        b = np.asarray(beta, dtype=float)
        return b / _beta_scale(np.ones_like(b) if b.ndim else 1.0, self.Nx, self.Nu, self.Nc)


def _scale_pair(lo, hi, s):
    return lo * s, hi * s


def precondition(model, constraints, weights, scaling):
    """Return the scaled ``(model, constraints, weights)``."""
    Nx, Nu, Nc = scaling.Nx, scaling.Nu, scaling.Nc
    if Nx.size != model.n or Nu.size != model.m or Nc.size != model.nh:
        raise DimensionMismatch("preconditioner sizes do not match the model")
    ix, iu, ic = 1.0 / Nx, 1.0 / Nu, 1.0 / Nc
    sm = LinearModel(
        A=Nx[:, None] * model.A * ix[None, :],
        B=Nx[:, None] * model.B * iu[None, :],
        C=model.C * ix[None, :],
        Bd=Nx[:, None] * model.Bd,
        E=Nc[:, None] * model.E * ix[None, :],
        F=Nc[:, None] * model.F * iu[None, :],
    )
    c = constraints
    sc = ConstraintSet(
        x_lo=c.x_lo * Nx, x_hi=c.x_hi * Nx,
        u_lo=c.u_lo * Nu, u_hi=c.u_hi * Nu,
        h_lo=c.h_lo * Nc, h_hi=c.h_hi * Nc,
        eta_x_lo=c.eta_x_lo * Nx, eta_x_hi=c.eta_x_hi * Nx,
        eta_h_lo=c.eta_h_lo * Nc, eta_h_hi=c.eta_h_hi * Nc,
    )
    w = weights
    sw = CostWeights(
        Q=ix[:, None] * w.Q * ix[None, :],
        R=iu[:, None] * w.R * iu[None, :],
        T=ix[:, None] * w.T * ix[None, :],
        S=iu[:, None] * w.S * iu[None, :],
        beta=_beta_scale(w.beta, Nx, Nu, Nc),
    )
    return sm, sc, sw


def unprecondition(model, constraints, weights, scaling):
    """Inverse of :func:`precondition`."""
    inv = Preconditioner(1.0 / scaling.Nx, 1.0 / scaling.Nu, 1.0 / scaling.Nc)
    return precondition(model, constraints, weights, inv)


def with_backoff(constraints, **etas):
    return replace(constraints, **etas)
