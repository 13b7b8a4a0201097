"""Shared fixtures and independent reference implementations.

Nothing here calls into the structured solver paths; the oracles use
dense numpy/scipy linear algebra and brute-force scalar minimization.
"""

import numpy as np
import pytest
import scipy.linalg

from mpct.model import ConstraintSet, CostWeights, LinearModel


def random_instance(rng, n=None, m=None, nh=None, N=None, bounded=True):
    """Random controllable model with box and coupled constraints."""
    n = n or int(rng.integers(1, 9))
    m = m or int(rng.integers(1, 4))
    nh = int(rng.integers(0, 3)) if nh is None else nh
    while True:
        A = rng.normal(size=(n, n))
        A *= 0.95 / max(1e-9, np.abs(np.linalg.eigvals(A)).max()) * rng.uniform(0.5, 1.3)
        B = rng.normal(size=(n, m))
        ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(n)])
        # well-posed tracking problem: the steady-state rows [A - I, B] must not
        # be close to rank deficient, otherwise x_s, u_s are ill defined
        sv = np.linalg.svd(np.hstack([A - np.eye(n), B]), compute_uv=False)
        if np.linalg.matrix_rank(ctrb) == n and sv[-1] > 1e-2 * sv[0]:
            break
    idx = next(k for k in range(1, n + 1)
               if np.linalg.matrix_rank(np.hstack([np.linalg.matrix_power(A, j) @ B
                                                   for j in range(k)])) == n)
    N = N or int(rng.integers(idx + 1, max(idx + 2, 11)))
    C = rng.normal(size=(min(n, 2), n))
    E = rng.normal(size=(nh, n))
    F = rng.normal(size=(nh, m))
    model = LinearModel(A, B, C, E=E, F=F)
    big = 1.0 if bounded else 1e6
    cons = ConstraintSet(x_lo=-big * rng.uniform(1, 3, n), x_hi=big * rng.uniform(1, 3, n),
                         u_lo=-big * rng.uniform(0.5, 2, m), u_hi=big * rng.uniform(0.5, 2, m),
                         h_lo=-big * rng.uniform(1, 3, nh), h_hi=big * rng.uniform(1, 3, nh))

    def pd(k):
        M = rng.normal(size=(k, k))
        return M @ M.T + k * np.eye(k) * rng.uniform(0.1, 1.0)

    weights = CostWeights(pd(n), pd(m), pd(n), pd(m), beta=float(rng.uniform(10, 300)))
    return model, cons, weights, N


def dense_kkt_z(P, G, p, b):
    """argmin 1/2 z'Pz + p'z subject to Gz = b by one dense KKT solve."""
    nz, mz = P.shape[0], G.shape[0]
    K = np.block([[P, G.T], [G, np.zeros((mz, mz))]])
    rhs = np.concatenate([-p, b])
    lu = scipy.linalg.lu_factor(K)
    sol = scipy.linalg.lu_solve(lu, rhs)
    for _ in range(3):
        sol += scipy.linalg.lu_solve(lu, rhs - K @ sol)
    return sol[:nz]


def soft_box_objective(w, c, lo, hi, beta, rho):
    return 0.5 * rho * (w - c) ** 2 + 0.5 * beta * np.maximum(
        np.maximum(w - hi, lo - w), 0.0)


GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def brute_prox(c, lo, hi, beta, rho, step=1e-4):
    """Scalar minimizer by a 1e-4 grid followed by golden-section refinement.

    Moving from ``c`` away from the box raises both terms, so the grid
    covers the segment between ``c`` and its projection (padded).
    """
    p = min(max(c, lo), hi)
    a, b = min(c, p) - 0.01, max(c, p) + 0.01
    grid = np.arange(a, b + step, step)
    i = int(np.argmin(soft_box_objective(grid, c, lo, hi, beta, rho)))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    f = lambda w: soft_box_objective(w, c, lo, hi, beta, rho)
    x1, x2 = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > 1e-12 * max(1.0, abs(a)):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def cstr_controller():
    from mpct.experiment import CstrController
    return CstrController()


def cost_hessian(Q, R, T, S, N):
    """Hessian built term by term from selector matrices."""
    n, m = Q.shape[0], R.shape[0]
    sz = n + m
    nz = (N + 1) * sz

    def sel(offset, k):
        E = np.zeros((k, nz))
        E[:, offset:offset + k] = np.eye(k)
        return E

    H = np.zeros((nz, nz))
    xs, us = sel(N * sz, n), sel(N * sz + n, m)
    for i in range(N):
        dx = sel(i * sz, n) - xs
        du = sel(i * sz + n, m) - us
        H += dx.T @ Q @ dx + du.T @ R @ du
    H += xs.T @ T @ xs + us.T @ S @ us
    return H


def splitting_matrix(E, F, N):
    n, m = E.shape[1], F.shape[1]
    rows = []
    for i in range(N + 1):
        blk = np.zeros((n + m + E.shape[0], (N + 1) * (n + m)))
        o = i * (n + m)
        blk[:n, o:o + n] = np.eye(n)
        blk[n:n + m, o + n:o + n + m] = np.eye(m)
        blk[n + m:, o:o + n] = E
        blk[n + m:, o + n:o + n + m] = F
        rows.append(blk)
    return np.vstack(rows)


def candidate_prox(c, lo, hi, beta, rho):
    """Exact scalar prox by comparing the objective at every stationary candidate."""
    k = beta / (2 * rho)
    cands = [min(max(c, lo), hi), lo, hi]
    if c + k < lo:
        cands.append(c + k)
    if c - k > hi:
        cands.append(c - k)

    def f(w):
        return 0.5 * rho * (w - c) ** 2 + 0.5 * beta * max(w - hi, lo - w, 0.0)

    return min(cands, key=f)


def dense_admm(H, q, G, b, D, lo, hi, beta, kind, rho, v, lam, iters):
    """Textbook ADMM on the same splitting with dense linear algebra.

    ``kind`` uses 0 for free, 1 for hard clamp and 2 for the soft box.
    """
    P = H + rho * D.T @ D
    out = []
    v, lam = v.copy(), lam.copy()
    for _ in range(iters):
        z = dense_kkt_z(P, G, q + D.T @ (lam - rho * v), b)
        dz = D @ z
        c = dz + lam / rho
        v = np.array([cj if kj == 0 else min(max(cj, l), h) if kj == 1
                      else candidate_prox(cj, l, h, bj, rho)
                      for cj, l, h, bj, kj in zip(c, lo, hi, beta, kind)])
        lam = lam + rho * (dz - v)
        out.append((z, v.copy(), lam.copy()))
    return out


def linear_offset_free_run(steps=150, d_out=(0.3,), w_state=(0.05, -0.02), y_r=(0.8,)):
    """Closed loop of observer, target calculator and solver on a linear plant.

    The plant carries a constant output offset and a constant state
    disturbance that the model (with ``B_d = 0``) does not know about.
    Returns the output error history.
    """
    from mpct.admm import SolverSettings, initial_state, resume, warm_start_shift
    from mpct.offset_free import (EstimatorState, ReferenceTracker, design_observer_gains,
                                  observer_update)
    from mpct.problem import build_problem

    A = np.array([[0.8, 0.2], [0.0, 0.9]])
    B = np.array([[0.1], [1.0]])
    C = np.array([[1.0, 0.0]])
    model = LinearModel(A, B, C, E=C, F=np.zeros((1, 1)))
    cons = ConstraintSet([-5.0, -5.0], [5.0, 5.0], [-2.0], [2.0], h_lo=[-3.0], h_hi=[3.0])
    w = CostWeights(np.eye(2), np.eye(1), 10 * np.eye(2), 10 * np.eye(1), beta=100.0)
    pr = build_problem(model, cons, w, 5, 5.0)
    gains = design_observer_gains(model, np.eye(3), np.eye(1))
    settings = SolverSettings(1e-9, 1e-9, 100000)
    est = EstimatorState.origin(2, 1)
    tracker = ReferenceTracker(model)
    x = np.zeros(2)
    d_out, w_state, y_r = (np.asarray(a, float) for a in (d_out, w_state, y_r))
    warm = None
    errors = []
    for _ in range(steps):
        y = C @ x + d_out
        errors.append(np.abs(y - y_r).max())
        x_r, u_r = tracker(y_r, est.d_hat)
        state = initial_state(pr, est.x_hat, est.d_hat, x_r, u_r, warm)
        sol, state = resume(pr, state, settings)
        warm = warm_start_shift(sol.v, sol.lam, pr.stage_size)
        est = observer_update(est, gains, model, sol.u0, y)
        x = A @ x + B @ sol.u0 + w_state
    return np.array(errors)


ACCEPTANCE_LINES = {}


def record_criterion(number, title, passed, detail):
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
