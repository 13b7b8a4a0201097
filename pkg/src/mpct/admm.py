"""ADMM for the soft-constrained MPCT problem.

One iteration: structured equality-constrained QP solve for ``z``,
closed-form separable prox for ``v``, dual ascent on ``lambda``. Exit when
``||D z - v||_inf <= eps_p`` and ``||v - v_prev||_inf <= eps_d``.

Iterations can be spread over several calls (``iter_budget``); resuming a
state gives bitwise the same iterates as one uninterrupted run.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, InvalidBounds, MaxIterationsExceeded, NumericalFailure


@dataclass(frozen=True)
class SolverSettings:
    eps_p: float = 5e-3
    eps_d: float = 1e-3
    max_iter: int = 5000
    iter_budget: int = None

    def __post_init__(self):
        if not (self.eps_p > 0 and self.eps_d > 0):
            raise InvalidBounds("exit tolerances must be positive")
        if self.max_iter < 1:
            raise InvalidBounds("max_iter must be at least 1")
        if self.iter_budget is not None and self.iter_budget < 1:
            raise InvalidBounds("iter_budget must be at least 1")


@dataclass
class AdmmState:
    """Mutable iterate; everything is in solver (scaled) units."""

    z: np.ndarray
    v: np.ndarray
    v_prev: np.ndarray
    lam: np.ndarray
    q: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    iterations: int = 0
    r_primal: float = math.inf
    r_dual: float = math.inf
    converged: bool = False

    def copy(self):
        return AdmmState(self.z.copy(), self.v.copy(), self.v_prev.copy(), self.lam.copy(),
                         self.q.copy(), self.b.copy(), self.iterations,
                         self.r_primal, self.r_dual, self.converged)


@dataclass
class Solution:
    """Solver output. ``u0``, ``x_s`` and ``u_s`` are in physical units."""

    u0: np.ndarray
    x_s: np.ndarray
    u_s: np.ndarray
    z: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    iterations: int
    r_primal: float
    r_dual: float
    status: str

    @property
    def converged(self):
        return self.status == "converged"

    def raise_for_status(self):
        if self.status == "max_iter":
            raise MaxIterationsExceeded(self.iterations)
        return self


def prox_soft_box(c, lo, hi, beta, rho):
    """Minimizer over w of ``rho/2 (w - c)^2 + beta/2 max(w - hi, lo - w, 0)``."""
    if not lo < hi:
        raise InvalidBounds(f"require lo < hi, got lo={lo}, hi={hi}")
    if not (beta > 0 and rho > 0):
        raise InvalidBounds("beta and rho must be positive")
    return K.prox_scalar(float(c), float(lo), float(hi), float(beta), float(rho))


def warm_start_shift(v_star, lam_star, stage_size):
    """Shift both vectors one stage forward, repeating the last stage."""
    v_star = np.asarray(v_star, dtype=float)
    lam_star = np.asarray(lam_star, dtype=float)
    if v_star.shape != lam_star.shape or v_star.ndim != 1 or v_star.size % stage_size:
        raise DimensionMismatch("warm-start vectors must be 1-D multiples of the stage size")

    def shift(a):
        out = np.empty_like(a)
        out[:-stage_size] = a[stage_size:]
        out[-stage_size:] = a[-stage_size:]
        return out

    return shift(v_star), shift(lam_star)


def initial_state(problem, x_hat, d_hat, x_r, u_r, warm=None):
    """Fresh iterate with q and b refreshed for this sample time.

    Inputs are physical; ``warm`` is ``(v0, lambda0)`` in solver units.
    Without warm data the iterate starts from ``v = lambda = 0``.
    """
    n, m, p = problem.n, problem.m, problem.model.p
    x_hat, x_r = np.asarray(x_hat, float).ravel(), np.asarray(x_r, float).ravel()
    u_r, d_hat = np.asarray(u_r, float).ravel(), np.asarray(d_hat, float).ravel()
    if x_hat.size != n or x_r.size != n or u_r.size != m or d_hat.size != p:
        raise DimensionMismatch("x_hat, d_hat, x_r or u_r has the wrong length")
    q = problem.q_vector(problem.scale_x(x_r), problem.scale_u(u_r))
    b = problem.b_vector(problem.scale_x(x_hat), d_hat)
    if warm is None:
        v = np.zeros(problem.n_v)
        lam = np.zeros(problem.n_v)
    else:
        v = np.array(warm[0], dtype=float)
        lam = np.array(warm[1], dtype=float)
        if v.shape != (problem.n_v,) or lam.shape != (problem.n_v,):
            raise DimensionMismatch(f"warm-start vectors must have length {problem.n_v}")
    return AdmmState(z=np.zeros(problem.n_z), v=v, v_prev=v.copy(), lam=lam, q=q, b=b)


def update_z(state, problem):
    """z-step: equality-constrained QP via the three structured solves."""
    p = state.q + problem.apply_Dt(state.lam - problem.rho * state.v)
    return K.z_update(p, state.b, *problem.kernel_args())


def update_v(state, problem, z):
    """v-step: free x_0, hard-clamped u_0, soft box prox everywhere else."""
    dz = problem.apply_D(z)
    return K.v_update(dz, state.lam, problem.rho, problem.v_lo, problem.v_hi,
                      problem.v_beta, problem.v_kind)


def iterate(problem, state, settings, n_iter):
    """Run at most ``n_iter`` iterations in place; returns the kernel status."""
    if state.converged:
        return 1
    n_iter = min(n_iter, settings.max_iter - state.iterations)
    if n_iter <= 0:
        return 0
    mo = problem.model
    done, r_p, r_d, status = K.admm_run(
        state.z, state.v, state.v_prev, state.lam, state.q, state.b,
        problem.rho, settings.eps_p, settings.eps_d, n_iter,
        mo.A, mo.B, mo.E, mo.F, problem.N, *problem.kernel_args()[3:],
        problem.v_lo, problem.v_hi, problem.v_beta, problem.v_kind,
    )
    state.iterations += int(done)
    state.r_primal = float(r_p)
    state.r_dual = float(r_d)
    state.converged = status == 1
    if status == -1:
        raise NumericalFailure(f"non-finite residual after {state.iterations} iterations")
    return status


def make_solution(problem, state, status):
    n, m = problem.n, problem.m
    u0 = problem.unscale_u(state.v[n:n + m])
    c = problem.constraints
    u0 = np.clip(u0, problem.unscale_u(c.u_lo), problem.unscale_u(c.u_hi))
    o = problem.N * (n + m)
    return Solution(
        u0=u0,
        x_s=problem.unscale_x(state.z[o:o + n]),
        u_s=problem.unscale_u(state.z[o + n:]),
        z=state.z.copy(), v=state.v.copy(), lam=state.lam.copy(),
        iterations=state.iterations, r_primal=state.r_primal, r_dual=state.r_dual,
        status=status,
    )


def resume(problem, state, settings=None):
    """Continue a non-converged state for one more iteration budget."""
    settings = settings or SolverSettings()
    budget = settings.iter_budget or settings.max_iter
    iterate(problem, state, settings, budget)
    if state.converged:
        status = "converged"
    elif state.iterations >= settings.max_iter:
        status = "max_iter"
    else:
        status = "budget"
    return make_solution(problem, state, status), state


def solve(problem, x_hat, d_hat, x_r, u_r, warm=None, settings=None):
    """Solve one MPCT instance; returns ``(Solution, AdmmState)``.

    With ``settings.iter_budget`` smaller than ``max_iter`` the call stops
    after that many iterations with status ``"budget"``; pass the returned
    state to :func:`resume` to continue.
    """
    state = initial_state(problem, x_hat, d_hat, x_r, u_r, warm)
    return resume(problem, state, settings)
