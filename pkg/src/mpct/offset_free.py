"""Disturbance observer and steady-state target calculator for offset-free tracking."""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, RankDeficient, RiccatiNoStabilizingSolution

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class ObserverGains:
    Lx: np.ndarray
    Ld: np.ndarray

    @property
    def L(self):
        return np.vstack([self.Lx, self.Ld])


@dataclass(frozen=True)
class EstimatorState:
    x_hat: np.ndarray
    d_hat: np.ndarray

    @classmethod
    def origin(cls, n, p):
        return cls(np.zeros(n), np.zeros(p))


def augmented_matrices(model):
    """``A_aug = [[A, B_d], [0, I]]``, ``B_aug = [B; 0]``, ``C_aug = [C, I]``."""
    n, m, p = model.n, model.m, model.p
    A_aug = np.block([[model.A, model.Bd], [np.zeros((p, n)), np.eye(p)]])
    B_aug = np.vstack([model.B, np.zeros((p, m))])
    C_aug = np.hstack([model.C, np.eye(p)])
    return A_aug, B_aug, C_aug


def estimator_spectral_radius(model, gains):
    A_aug, _, C_aug = augmented_matrices(model)
    return float(np.max(np.abs(np.linalg.eigvals(A_aug + gains.L @ C_aug))))


def observer_update(est, gains, model, u, y):
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if u.size != model.m or y.size != model.p:
        raise DimensionMismatch("u or y has the wrong length")
    if est.x_hat.size != model.n or est.d_hat.size != model.p:
        raise DimensionMismatch("estimator state does not match the model")
    innov = model.C @ est.x_hat + est.d_hat - y
    x_next = model.A @ est.x_hat + model.Bd @ est.d_hat + model.B @ u + gains.Lx @ innov
    d_next = est.d_hat + gains.Ld @ innov
    return EstimatorState(x_next, d_next)


def dare_residual(A, B, Q, R, X):
    BtX = B.T @ X
    gain = np.linalg.solve(R + BtX @ B, BtX @ A)
    res = A.T @ X @ A - X - A.T @ X @ B @ gain + Q
    return np.linalg.norm(res) / max(1.0, np.linalg.norm(X))


def solve_dare(A, B, Q, R, tol=1e-12, max_iter=10000):
    """Stabilizing solution of ``X = A'XA - A'XB (R + B'XB)^-1 B'XA + Q``.

    Structure-preserving doubling; converges quadratically when (A, B) is
    stabilizable and (Q^1/2, A) detectable.
    """
    n = A.shape[0]
    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    I = np.eye(n)
    for _ in range(max_iter):
        M = I + Gk @ Hk
        MiA = np.linalg.solve(M, Ak)
        MiG = np.linalg.solve(M, Gk)
        H_next = Hk + Ak.T @ Hk @ MiA
        G_next = Gk + Ak @ MiG @ Ak.T
        Ak = Ak @ MiA
        H_next = 0.5 * (H_next + H_next.T)
        G_next = 0.5 * (G_next + G_next.T)
        done = np.linalg.norm(H_next - Hk) <= tol * max(1.0, np.linalg.norm(H_next))
        Hk, Gk = H_next, G_next
        if not np.all(np.isfinite(Hk)):
            break
        if done:
            return Hk
    raise RiccatiNoStabilizingSolution("doubling iteration did not converge")


def design_observer_gains(model, Q_obs, R_obs):
    """LQR design on the dual pair (A_aug^T, C_aug^T)."""
    A_aug, _, C_aug = augmented_matrices(model)
    Q_obs = np.atleast_2d(np.asarray(Q_obs, dtype=float))
    R_obs = np.atleast_2d(np.asarray(R_obs, dtype=float))
    if Q_obs.shape != A_aug.shape or R_obs.shape != (model.p, model.p):
        raise DimensionMismatch("observer weights do not match the augmented model")
    At, Bt = A_aug.T, C_aug.T
    X = solve_dare(At, Bt, Q_obs, R_obs)
    K = np.linalg.solve(R_obs + Bt.T @ X @ Bt, Bt.T @ X @ At)
    L = -K.T
    gains = ObserverGains(L[:model.n].copy(), L[model.n:].copy())
    if estimator_spectral_radius(model, gains) >= 1.0:
        raise RiccatiNoStabilizingSolution("designed estimator is not stable")
    return gains


def compute_reference(model, y_r, d_hat):
    """Steady pair (x_r, u_r) with ``(A - I) x + B u = -B_d d``, ``C x = y_r - d``.

    The minimum-norm solution is returned when the system is underdetermined.
    """
    n, m, p = model.n, model.m, model.p
    y_r = np.asarray(y_r, dtype=float).ravel()
    d_hat = np.asarray(d_hat, dtype=float).ravel()
    if y_r.size != p or d_hat.size != p:
        raise DimensionMismatch("y_r or d_hat has the wrong length")
    M = np.block([[model.A - np.eye(n), model.B], [model.C, np.zeros((p, m))]])
    rhs = np.concatenate([-model.Bd @ d_hat, y_r - d_hat])
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > RANK_RTOL * s[0]
    sol = Vt[keep].T @ ((U[:, keep].T @ rhs) / s[keep])
    res = np.linalg.norm(M @ sol - rhs)
    if res > 1e-8 * max(1.0, np.linalg.norm(rhs)):
        raise RankDeficient(f"target equations have no solution (residual {res:.3g})")
    return sol[:n], sol[n:]


class ReferenceTracker:
    """Keeps the last solvable target when the target equations fail."""

    def __init__(self, model):
        self.model = model
        self.last = None

    def __call__(self, y_r, d_hat):
        try:
            self.last = compute_reference(self.model, y_r, d_hat)
        except RankDeficient:
            if self.last is None:
                raise
            log.warning("target equations unsolvable; keeping previous reference")
        return self.last
