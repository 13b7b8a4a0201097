"""Steady states of the CSTR and the admissible steady output.

For fixed inputs the reactor balances reduce to one scalar equation in
the reactor temperature: the mass balances give ``c_A`` and ``c_B`` in
closed form and the jacket balance gives ``theta_K``. Every root of that
equation on a temperature scan is a steady state.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import cstr
from .errors import NoSteadyStateFound
from .validation import IndicatorBounds

THETA_SCAN = np.linspace(-20.0, 300.0, 1281)
U_LO = np.array([3.0, -9000.0])
U_HI = np.array([35.0, 0.0])


def _rates(theta, params):
    tk = np.asarray(theta) + 273.15
    return (params.k10 * np.exp(params.E1 / tk), params.k20 * np.exp(params.E2 / tk),
            params.k30 * np.exp(params.E3 / tk))


def _concentrations(theta, fn, params):
    k1, k2, k3 = _rates(theta, params)
    # positive root of k3 cA^2 + (fn + k1) cA - fn cA0 = 0, written stably
    b = fn + k1
    ca = 2.0 * fn * params.cA0 / (b + np.sqrt(b * b + 4.0 * k3 * fn * params.cA0))
    cb = k1 * ca / (fn + k2)
    return ca, cb, (k1, k2, k3)


def _heat_terms(theta, theta_d, fn, params):
    ca, cb, (k1, k2, k3) = _concentrations(theta, fn, params)
    reac = (k1 * ca * params.dH_AB + k2 * cb * params.dH_BC
            + k3 * ca * ca * params.dH_AD) / (params.rho * params.Cp)
    return ca, cb, fn * (theta_d - theta) - reac


def _roots(fun, grid=THETA_SCAN):
    vals = fun(grid)
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]:
        if vals[i] == 0.0:
            roots.append(grid[i])
        elif vals[i + 1] != 0.0:
            roots.append(scipy.optimize.brentq(fun, grid[i], grid[i + 1], xtol=1e-13))
    return roots


def steady_states_for_input(u, theta_d=cstr.THETA_NOMINAL, params=cstr.DEFAULT_PARAMS):
    """All equilibria with the filter states at ``u``, as 6-vectors."""
    fn, pk = float(u[0]), float(u[1])
    kwa = params.kw * params.AR
    gain = kwa / (params.rho * params.Cp * params.VR * 1000.0)

    def resid(theta):
        # jacket balance at rest: theta_K = theta + P_K / (k_w A_R)
        return _heat_terms(theta, theta_d, fn, params)[2] + gain * (pk / kwa)

    out = []
    for th in _roots(resid):
        ca, cb, _ = _concentrations(th, fn, params)
        out.append(np.array([ca, cb, th, th + pk / kwa, fn, pk]))
    return out


def steady_state_for_output(y_r, theta_d=cstr.THETA_NOMINAL, params=cstr.DEFAULT_PARAMS,
                            theta_hint=cstr.NOMINAL_STATE[2]):
    """Equilibrium producing outputs ``y_r = (c_B, p_B)``, inputs unconstrained.

    Among several solutions the one closest to ``theta_hint`` is returned.
    """
    cb_r, pb_r = float(y_r[0]), float(y_r[1])
    if not (math.isfinite(cb_r) and math.isfinite(pb_r)) or cb_r <= 0 or pb_r <= 0:
        raise NoSteadyStateFound(f"no steady state for outputs {tuple(y_r)}")
    fn = pb_r / (cb_r * params.VR * 1000.0)
    roots = _roots(lambda th: _concentrations(th, fn, params)[1] - cb_r)
    if not roots:
        raise NoSteadyStateFound(f"c_B = {cb_r} is not reachable at F_N = {fn:.4g}")
    th = min(roots, key=lambda t: abs(t - theta_hint))
    ca, cb, heat = _heat_terms(th, theta_d, fn, params)
    kwa = params.kw * params.AR
    thk = th - heat * params.rho * params.Cp * params.VR * 1000.0 / kwa
    pk = kwa * (thk - th)
    return np.array([ca, cb, th, thk, fn, pk])


@dataclass
class AdmissibleSteadyState:
    y: np.ndarray
    x: np.ndarray
    u: np.ndarray
    x_unconstrained: np.ndarray


def _admissible(x, bounds, params):
    y = cstr.outputs(x, params)
    return x[2] <= bounds.theta_max and y[0] >= bounds.cB_min and y[1] >= bounds.pB_min


def admissible_steady_output(y_r, theta_d=cstr.THETA_NOMINAL, params=cstr.DEFAULT_PARAMS,
                             bounds=IndicatorBounds(), u_lo=U_LO, u_hi=U_HI,
                             grid=41, refinements=5):
    """Steady output closest (in input distance) to the one requested.

    First the unconstrained steady pair for ``y_r`` is computed. If it
    violates the input box or the output constraints, a grid over the
    input box (distances normalized by the box ranges) followed by local
    grid refinements finds the admissible equilibrium whose input is
    closest to the unconstrained one.
    """
    y_r = np.asarray(y_r, dtype=float)
    if not np.all(np.isfinite(y_r)):
        raise NoSteadyStateFound("reference contains non-finite values")
    u_lo, u_hi = np.asarray(u_lo, float), np.asarray(u_hi, float)
    x_u = steady_state_for_output(y_r, theta_d, params)
    u_u = x_u[4:]
    if np.all(u_u >= u_lo) and np.all(u_u <= u_hi) and _admissible(x_u, bounds, params):
        return AdmissibleSteadyState(cstr.outputs(x_u, params), x_u, u_u.copy(), x_u)

    span = u_hi - u_lo
    best = None
    lo, hi = u_lo.copy(), u_hi.copy()
    for _ in range(refinements + 1):
        for a in np.linspace(lo[0], hi[0], grid):
            for b in np.linspace(lo[1], hi[1], grid):
                u = np.array([a, b])
                dist = float(np.linalg.norm((u - u_u) / span))
                if best is not None and dist > best[0]:
                    continue
                for x in steady_states_for_input(u, theta_d, params):
                    if not _admissible(x, bounds, params):
                        continue
                    dy = float(np.linalg.norm(cstr.outputs(x, params) - y_r))
                    if best is None or (dist, dy) < best[:2]:
                        best = (dist, dy, x)
        if best is None:
            raise NoSteadyStateFound("no admissible equilibrium in the input box")
        step = (hi - lo) / (grid - 1)
        centre = best[2][4:]
        lo = np.maximum(centre - 2 * step, u_lo)
        hi = np.minimum(centre + 2 * step, u_hi)
    x_c = best[2]
    return AdmissibleSteadyState(cstr.outputs(x_c, params), x_c, x_c[4:].copy(), x_u)
