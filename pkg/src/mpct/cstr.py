"""Nonlinear CSTR (van de Vusse type kinetics) with input filters and Singer disturbance.

State ordering: ``(c_A, c_B, theta, theta_K, F_N, P_K)`` where the last two
are the low-pass filtered inputs. Time derivatives are per hour; sample
times are given in seconds.

Units: ``V_R`` is in m^3 but enters the energy balance in litres (the
density is in kg/l), and the production rate ``p_B = c_B F_N V_R`` is
reported in mol/h, i.e. ``c_B * F_N * V_R * 1000``. At the nominal
operating point this gives 0.912 * 25 * 10 = 228 mol/h.
"""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.optimize

from . import _kernels as K
from .errors import InvalidParameters, InvalidTemperature, NonFiniteState, NotAnEquilibrium

THETA_NOMINAL = 104.9
SINGER_POLE = 0.99
SINGER_VARIANCE = 0.01

# rounded operating point used for linearization
NOMINAL_INPUT = np.array([25.0, -4000.0])
NOMINAL_STATE = np.array([3.161, 0.912, 108.53, 103.91, 25.0, -4000.0])


@dataclass(frozen=True)
class CstrParams:
    k10: float = 1.287e12
    k20: float = 1.287e12
    k30: float = 9.043e9
    E1: float = -9758.3
    E2: float = -9758.3
    E3: float = -8560.0
    cA0: float = 5.1
    dH_AB: float = 4.2
    dH_BC: float = -11.0
    dH_AD: float = -41.85
    rho: float = 0.9342
    Cp: float = 3.01
    # kJ/(h m^2 K); 4.032e3 is the value consistent with the nominal equilibrium
    kw: float = 4032.0
    AR: float = 0.215
    VR: float = 0.01
    mK: float = 5.0
    CpK: float = 2.0
    T_FN: float = 250.0
    T_PK: float = 125.0

    def __post_init__(self):
        for name in ("rho", "Cp", "kw", "AR", "VR", "mK", "CpK", "T_FN", "T_PK"):
            if not getattr(self, name) > 0:
                raise InvalidParameters(f"CSTR parameter {name} must be positive")

    def as_array(self):
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)

    def replace(self, **overrides):
        d = asdict(self)
        unknown = set(overrides) - set(d)
        if unknown:
            raise InvalidParameters(f"unknown CSTR parameters: {sorted(unknown)}")
        d.update(overrides)
        return CstrParams(**d)


DEFAULT_PARAMS = CstrParams()


@dataclass
class CstrState:
    cA: float
    cB: float
    theta: float
    thetaK: float
    FN: float
    PK: float

    @classmethod
    def from_array(cls, x):
        return cls(*(float(v) for v in x))

    def as_array(self):
        return np.array([self.cA, self.cB, self.theta, self.thetaK, self.FN, self.PK])


def reaction_rate(i, theta, params=DEFAULT_PARAMS):
    """Arrhenius rate ``k_i0 exp(E_i / (theta + 273.15))`` for i in 1..3."""
    if theta <= -273.15:
        raise InvalidTemperature(f"temperature {theta} is below absolute zero")
    k0, E = {1: (params.k10, params.E1), 2: (params.k20, params.E2),
             3: (params.k30, params.E3)}[i]
    return k0 * math.exp(E / (theta + 273.15))


def _as_state(state):
    x = state.as_array() if isinstance(state, CstrState) else np.asarray(state, dtype=float)
    return np.ascontiguousarray(x, dtype=float)


def cstr_derivative(state, u_cmd, theta_d, params=DEFAULT_PARAMS):
    """Per-hour derivative of the 6-state plant at commanded input ``u_cmd``."""
    x = _as_state(state)
    if not np.all(np.isfinite(x)):
        raise NonFiniteState("state contains non-finite entries")
    return K.cstr_rhs(x, np.asarray(u_cmd, dtype=float), float(theta_d), params.as_array())


def integrate_step(state, u_cmd, theta_d, params=DEFAULT_PARAMS, Ts=75.0, substeps=50):
    """Classical RK4 over one sample period with ``theta_d`` held constant."""
    if not Ts > 0 or substeps < 1:
        raise InvalidParameters("Ts must be positive and substeps at least 1")
    x = _as_state(state)
    out = K.cstr_rk4(x, np.asarray(u_cmd, dtype=float), float(theta_d), params.as_array(),
                     Ts / 3600.0, int(substeps))
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("integration produced non-finite values")
    return CstrState.from_array(out) if isinstance(state, CstrState) else out


def outputs(state, params=DEFAULT_PARAMS):
    """Measured outputs ``(c_B, p_B)`` with ``p_B`` in mol/h."""
    x = _as_state(state)
    return np.array([x[1], x[1] * x[4] * params.VR * 1000.0])


def singer_step(theta_d, noise_sample, theta0=THETA_NOMINAL):
    """``theta_d+ = 0.99 theta_d + 0.01 theta0 + w``; the caller scales ``w``."""
    return SINGER_POLE * theta_d + (1.0 - SINGER_POLE) * theta0 + noise_sample


def singer_noise(rng, size=None):
    return rng.normal(0.0, math.sqrt(SINGER_VARIANCE), size)


def refine_equilibrium(u=NOMINAL_INPUT, theta_d=THETA_NOMINAL, params=DEFAULT_PARAMS,
                       guess=NOMINAL_STATE):
    """Newton root of the reactor balances at fixed inputs (filters at rest)."""
    u = np.asarray(u, dtype=float)
    pa = params.as_array()

    def f(r):
        x = np.concatenate([r, u])
        return K.cstr_rhs(x, u, float(theta_d), pa)[:4]

    sol = scipy.optimize.root(f, np.asarray(guess, float)[:4], method="hybr",
                              options={"xtol": 1e-14})
    x = np.concatenate([sol.x, u])
    res = np.abs(K.cstr_rhs(x, u, float(theta_d), pa)).max()
    if not sol.success and res > 1e-9:
        raise NotAnEquilibrium(res)
    return x


def linearize(params=DEFAULT_PARAMS, x_eq=None, u_eq=NOMINAL_INPUT, theta_d=THETA_NOMINAL,
              tol=0.05, rel_step=1e-6):
    """Continuous Jacobians ``(A_c, B_c, C)`` by central differences, per hour."""
    if x_eq is None:
        x_eq = refine_equilibrium(u_eq, theta_d, params)
    x_eq = np.asarray(x_eq, dtype=float)
    u_eq = np.asarray(u_eq, dtype=float)
    pa = params.as_array()
    f0 = K.cstr_rhs(x_eq, u_eq, float(theta_d), pa)
    res = np.abs(f0).max()
    if res > tol:
        raise NotAnEquilibrium(res)

    def jac(fun, z0):
        cols = []
        for j in range(z0.size):
            h = rel_step * (1.0 + abs(z0[j]))
            zp, zm = z0.copy(), z0.copy()
            zp[j] += h
            zm[j] -= h
            cols.append((fun(zp) - fun(zm)) / (2 * h))
        return np.column_stack(cols)

    Ac = jac(lambda x: K.cstr_rhs(x, u_eq, float(theta_d), pa), x_eq)
    Bc = jac(lambda u: K.cstr_rhs(x_eq, u, float(theta_d), pa), u_eq)
    C = jac(lambda x: outputs(x, params), x_eq)
    return Ac, Bc, C


def expm_series(M, tol=1e-13):
    """Matrix exponential by Taylor series with scaling and squaring."""
    M = np.asarray(M, dtype=float)
    norm = np.linalg.norm(M, 1)
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    X = M / 2.0 ** s
    term = np.eye(M.shape[0])
    total = term.copy()
    for k in range(1, 60):
        term = term @ X / k
        total += term
        if np.linalg.norm(term, 1) <= tol * np.linalg.norm(total, 1):
            break
    for _ in range(s):
        total = total @ total
    return total


def discretize(Ac, Bc, Ts, time_unit=3600.0):
    """Zero-order-hold discretization; ``Ts`` in seconds, matrices per ``time_unit`` s."""
    if not Ts > 0:
        raise InvalidParameters("sample time must be positive")
    Ac = np.atleast_2d(Ac)
    Bc = np.atleast_2d(Bc)
    n, m = Bc.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = Ac
    aug[:n, n:] = Bc
    E = expm_series(aug * (Ts / time_unit))
    return E[:n, :n], E[:n, n:]
