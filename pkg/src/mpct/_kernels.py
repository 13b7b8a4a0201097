"""Compiled inner loops.

Everything here works on plain float64 arrays so that the ADMM iteration
and the plant integrator run without Python overhead. The public wrappers
live in :mod:`mpct.linalg`, :mod:`mpct.admm` and :mod:`mpct.cstr`.

Band storage convention: ``band[i, d] == M[i, i - d]`` for ``d = 0..bw``
(lower triangle, one row per matrix row, diagonals along the columns).
"""

import math

import numpy as np
from numba import njit


# ---------------------------------------------------------------------------
# factorizations
# ---------------------------------------------------------------------------


@njit(cache=True)
def dense_cholesky(a, rel_tol):
    n = a.shape[0]
    L = np.zeros((n, n))
    dmax = 0.0
    for i in range(n):
        dmax = max(dmax, abs(a[i, i]))
    tol = rel_tol * dmax
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > tol:
            return L, j
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    return L, -1


@njit(cache=True)
def banded_cholesky(band, rel_tol):
    n, w = band.shape
    bw = w - 1
    L = np.zeros((n, w))
    dmax = 0.0
    for i in range(n):
        dmax = max(dmax, abs(band[i, 0]))
    tol = rel_tol * dmax
    for i in range(n):
        j0 = max(0, i - bw)
        for j in range(j0, i + 1):
            s = band[i, i - j]
            k0 = max(j0, j - bw)
            for k in range(k0, j):
                s -= L[i, i - k] * L[j, j - k]
            if j == i:
                if not s > tol:
                    return L, i
                L[i, 0] = math.sqrt(s)
            else:
                L[i, i - j] = s / L[j, 0]
    return L, -1


# ---------------------------------------------------------------------------
# triangular solves
# ---------------------------------------------------------------------------


@njit(cache=True)
def banded_solve(L, rhs):
    n, w = L.shape
    bw = w - 1
    y = np.empty(n)
    for i in range(n):
        s = rhs[i]
        for k in range(max(0, i - bw), i):
            s -= L[i, i - k] * y[k]
        y[i] = s / L[i, 0]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, min(n, i + bw + 1)):
            s -= L[k, k - i] * y[k]
        y[i] = s / L[i, 0]
    return y


@njit(cache=True)
def block_solve(Ls, offsets, sizes, rhs):
    out = np.empty(rhs.shape[0])
    for b in range(Ls.shape[0]):
        o = offsets[b]
        k = sizes[b]
        Lb = Ls[b]
        for i in range(k):
            s = rhs[o + i]
            for j in range(i):
                s -= Lb[i, j] * out[o + j]
            out[o + i] = s / Lb[i, i]
        for i in range(k - 1, -1, -1):
            s = out[o + i]
            for j in range(i + 1, k):
                s -= Lb[j, i] * out[o + j]
            out[o + i] = s / Lb[i, i]
    return out


@njit(cache=True)
def lu_solve(lu, piv, rhs):
    # LAPACK getrf convention: row i was swapped with row piv[i], in order
    n = lu.shape[0]
    x = rhs.copy()
    for i in range(n):
        p = piv[i]
        if p != i:
            t = x[i]
            x[i] = x[p]
            x[p] = t
    for i in range(n):
        s = x[i]
        for j in range(i):
            s -= lu[i, j] * x[j]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= lu[i, j] * x[j]
        x[i] = s / lu[i, i]
    return x


@njit(cache=True)
def low_rank_apply(base_sol, base_inv_u, v, cap_lu, cap_piv):
    # s = Y^-1 r - (Y^-1 U) (I + V^T Y^-1 U)^-1 V^T (Y^-1 r)
    t = v.T @ base_sol
    w = lu_solve(cap_lu, cap_piv, t)
    return base_sol - base_inv_u @ w


# ---------------------------------------------------------------------------
# MPCT structured operators
# ---------------------------------------------------------------------------


@njit(cache=True)
def apply_D(z, E, F, N):
    n = E.shape[1]
    m = F.shape[1]
    nh = E.shape[0]
    sz = n + m
    sv = n + m + nh
    out = np.empty((N + 1) * sv)
    for i in range(N + 1):
        x = z[i * sz:i * sz + n]
        u = z[i * sz + n:(i + 1) * sz]
        o = i * sv
        out[o:o + n] = x
        out[o + n:o + sz] = u
        out[o + sz:o + sv] = E @ x + F @ u
    return out


@njit(cache=True)
def apply_Dt(v, E, F, N):
    n = E.shape[1]
    m = F.shape[1]
    nh = E.shape[0]
    sz = n + m
    sv = n + m + nh
    out = np.empty((N + 1) * sz)
    for i in range(N + 1):
        o = i * sv
        h = v[o + sz:o + sv]
        out[i * sz:i * sz + n] = v[o:o + n] + E.T @ h
        out[i * sz + n:(i + 1) * sz] = v[o + n:o + sz] + F.T @ h
    return out


@njit(cache=True)
def apply_G(z, A, B, N):
    n, m = B.shape
    sz = n + m
    out = np.empty((N + 2) * n)
    out[0:n] = z[0:n]
    for j in range(1, N + 1):
        xp = z[(j - 1) * sz:(j - 1) * sz + n]
        up = z[(j - 1) * sz + n:j * sz]
        xj = z[j * sz:j * sz + n]
        out[j * n:(j + 1) * n] = A @ xp + B @ up - xj
    xs = z[N * sz:N * sz + n]
    us = z[N * sz + n:(N + 1) * sz]
    out[(N + 1) * n:(N + 2) * n] = A @ xs - xs + B @ us
    return out


@njit(cache=True)
def apply_Gt(mu, A, B, N):
    n, m = B.shape
    sz = n + m
    out = np.zeros((N + 1) * sz)
    out[0:n] += mu[0:n]
    for j in range(1, N + 1):
        mj = mu[j * n:(j + 1) * n]
        out[(j - 1) * sz:(j - 1) * sz + n] += A.T @ mj
        out[(j - 1) * sz + n:j * sz] += B.T @ mj
        out[j * sz:j * sz + n] -= mj
    ms = mu[(N + 1) * n:(N + 2) * n]
    out[N * sz:N * sz + n] += A.T @ ms - ms
    out[N * sz + n:(N + 1) * sz] += B.T @ ms
    return out


@njit(cache=True)
def solve_P(rhs, Y_L, Y_off, Y_size, P_yinv_u, P_v, P_lu, P_piv):
    return low_rank_apply(block_solve(Y_L, Y_off, Y_size, rhs), P_yinv_u, P_v, P_lu, P_piv)


@njit(cache=True)
def solve_W(rhs, W_band, W_ginv_u, W_v, W_lu, W_piv):
    return low_rank_apply(banded_solve(W_band, rhs), W_ginv_u, W_v, W_lu, W_piv)


@njit(cache=True)
def z_update(p, b, A, B, N, Y_L, Y_off, Y_size, P_yinv_u, P_v, P_lu, P_piv,
             W_band, W_ginv_u, W_v, W_lu, W_piv):
    xi = solve_P(p, Y_L, Y_off, Y_size, P_yinv_u, P_v, P_lu, P_piv)
    mu = solve_W(-(apply_G(xi, A, B, N) + b), W_band, W_ginv_u, W_v, W_lu, W_piv)
    z = solve_P(-(apply_Gt(mu, A, B, N) + p), Y_L, Y_off, Y_size, P_yinv_u, P_v, P_lu, P_piv)
    # one refinement step on G z = b; W inherits the conditioning of the
    # controllability matrix, which can be poor for single-input models
    dmu = solve_W(apply_G(z, A, B, N) - b, W_band, W_ginv_u, W_v, W_lu, W_piv)
    return z - solve_P(apply_Gt(dmu, A, B, N), Y_L, Y_off, Y_size, P_yinv_u, P_v, P_lu, P_piv)


# ---------------------------------------------------------------------------
# v-update
# ---------------------------------------------------------------------------

FREE = 0
HARD = 1
SOFT = 2


@njit(cache=True)
def prox_scalar(c, lo, hi, beta, rho):
    k = beta / (2.0 * rho)
    if c + k <= lo:
        return c + k
    if c < lo:
        return lo
    if c <= hi:
        return c
    if c - k < hi:
        return hi
    return c - k


@njit(cache=True)
def v_update(dz, lam, rho, lo, hi, beta, kind):
    n = dz.shape[0]
    out = np.empty(n)
    for j in range(n):
        c = dz[j] + lam[j] / rho
        kj = kind[j]
        if kj == SOFT:
            out[j] = prox_scalar(c, lo[j], hi[j], beta[j], rho)
        elif kj == HARD:
            out[j] = min(max(c, lo[j]), hi[j])
        else:
            out[j] = c
    return out


# ---------------------------------------------------------------------------
# ADMM loop
# ---------------------------------------------------------------------------


@njit(cache=True)
def admm_run(z, v, v_prev, lam, q, b, rho, eps_p, eps_d, n_iter,
             A, B, E, F, N, Y_L, Y_off, Y_size, P_yinv_u, P_v, P_lu, P_piv,
             W_band, W_ginv_u, W_v, W_lu, W_piv, lo, hi, beta, kind):
    """Run up to ``n_iter`` iterations in place.

    Returns ``(iterations_done, r_primal, r_dual, status)`` with status
    1 = converged, 0 = budget spent, -1 = non-finite residual.
    """
    r_p = np.inf
    r_d = np.inf
    nv = v.shape[0]
    for it in range(n_iter):
        p = q + apply_Dt(lam - rho * v, E, F, N)
        znew = z_update(p, b, A, B, N, Y_L, Y_off, Y_size, P_yinv_u, P_v, P_lu, P_piv,
                        W_band, W_ginv_u, W_v, W_lu, W_piv)
        dz = apply_D(znew, E, F, N)
        vnew = v_update(dz, lam, rho, lo, hi, beta, kind)
        r_p = 0.0
        r_d = 0.0
        for j in range(nv):
            e = dz[j] - vnew[j]
            lam[j] += rho * e
            r_p = max(r_p, abs(e))
            r_d = max(r_d, abs(vnew[j] - v[j]))
            v_prev[j] = v[j]
            v[j] = vnew[j]
        z[:] = znew
        if not (math.isfinite(r_p) and math.isfinite(r_d)):
            return it + 1, r_p, r_d, -1
        if r_p <= eps_p and r_d <= eps_d:
            return it + 1, r_p, r_d, 1
    return n_iter, r_p, r_d, 0


# ---------------------------------------------------------------------------
# CSTR plant
# ---------------------------------------------------------------------------

# parameter vector layout used by the compiled plant routines
P_K10, P_K20, P_K30, P_E1, P_E2, P_E3, P_CA0, P_HAB, P_HBC, P_HAD, P_RHO, P_CP, \
    P_KW, P_AR, P_VR, P_MK, P_CPK, P_TFN, P_TPK = range(19)


@njit(cache=True)
def cstr_rhs(x, u_cmd, theta_d, p):
    """Time derivative in per-hour units of (c_A, c_B, theta, theta_K, F_N, P_K)."""
    ca, cb, th, thk, fn, pk = x[0], x[1], x[2], x[3], x[4], x[5]
    tk = th + 273.15
    k1 = p[P_K10] * math.exp(p[P_E1] / tk)
    k2 = p[P_K20] * math.exp(p[P_E2] / tk)
    k3 = p[P_K30] * math.exp(p[P_E3] / tk)
    rcp = p[P_RHO] * p[P_CP]
    vr_l = p[P_VR] * 1000.0  # m^3 -> l, matches the kg/l density
    kwa = p[P_KW] * p[P_AR]
    out = np.empty(6)
    out[0] = fn * (p[P_CA0] - ca) - k1 * ca - k3 * ca * ca
    out[1] = -fn * cb + k1 * ca - k2 * cb
    out[2] = (fn * (theta_d - th)
              - (k1 * ca * p[P_HAB] + k2 * cb * p[P_HBC] + k3 * ca * ca * p[P_HAD]) / rcp
              + kwa / (rcp * vr_l) * (thk - th))
    out[3] = (pk + kwa * (th - thk)) / (p[P_MK] * p[P_CPK])
    out[4] = (u_cmd[0] - fn) * 3600.0 / p[P_TFN]
    out[5] = (u_cmd[1] - pk) * 3600.0 / p[P_TPK]
    return out


@njit(cache=True)
def cstr_rk4(x, u_cmd, theta_d, p, dt_hours, substeps):
    h = dt_hours / substeps
    y = x.copy()
    for _ in range(substeps):
        k1 = cstr_rhs(y, u_cmd, theta_d, p)
        k2 = cstr_rhs(y + 0.5 * h * k1, u_cmd, theta_d, p)
        k3 = cstr_rhs(y + 0.5 * h * k2, u_cmd, theta_d, p)
        k4 = cstr_rhs(y + h * k3, u_cmd, theta_d, p)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y
