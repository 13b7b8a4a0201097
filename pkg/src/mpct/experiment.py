"""Closed-loop CSTR experiments and seeded validation campaigns.

The controller works in deviation coordinates around the refined
equilibrium. Each experiment draws its randomness from a counter-based
stream keyed by ``(master_seed, stream, [controller,] experiment)``, so
results do not depend on execution order or worker count.
"""

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import cstr
from .admm import SolverSettings, resume, initial_state, warm_start_shift
from .errors import InvalidParameters, MPCTError
from .model import ConstraintSet, CostWeights, LinearModel, Preconditioner
from .offset_free import EstimatorState, ReferenceTracker, design_observer_gains, observer_update
from .problem import build_problem
from .validation import IndicatorBounds, ValidationPlan, phi1, phi2, rth_worst

log = logging.getLogger(__name__)

VALIDATION_STREAM = 0
VERIFICATION_STREAM = 1


@dataclass(frozen=True)
class ControllerConfig:
    """Hyperparameters of one MPCT controller for the CSTR.

    The cost weights and ``beta`` are expressed for the preconditioned
    variables (a scalar ``beta`` applies to every soft-constrained entry).
    """

    N: int = 7
    rho: float = 40.0
    eps_p: float = 5e-3
    eps_d: float = 1e-3
    max_iter: int = 5000
    iter_budget: int = None
    Q: tuple = (0.1, 0.1, 5.0, 5.0, 20.0, 30.0)
    R: tuple = (20.0, 30.0)
    T: tuple = (0.7, 0.7, 35.0, 35.0, 10.0, 50.0)
    S: tuple = (10.0, 50.0)
    beta: object = 100.0
    eta_theta: float = 0.0
    eta_c: float = 0.0
    eta_p: float = 0.0
    Nx: tuple = (5.0, 20.0, 1.0, 1.0, 2.0, 1e-3)
    Nu: tuple = (2.0, 1e-3)
    Nc: tuple = (20.0, 0.5)
    Q_obs: tuple = (1.0, 0.01, 1.0, 1.0, 10.0, 10.0, 1e4, 1e4)
    R_obs: tuple = (1e3, 1e3)
    warm_start: bool = True

    @property
    def settings(self):
        return SolverSettings(self.eps_p, self.eps_d, self.max_iter, self.iter_budget)

    def label(self):
        b = f"{self.beta:g}" if np.ndim(self.beta) == 0 else "vector"
        return f"{{{self.eta_theta:g}, {self.eta_c:g}, {self.eta_p:g}, {b}}}"


@dataclass(frozen=True)
class PlantConfig:
    params: cstr.CstrParams = cstr.DEFAULT_PARAMS
    Ts: float = 75.0
    substeps: int = 50
    theta0: float = cstr.THETA_NOMINAL
    u_nominal: tuple = tuple(cstr.NOMINAL_INPUT)


@dataclass(frozen=True)
class OperatingPoint:
    x_eq: np.ndarray
    u_eq: np.ndarray
    y_eq: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


@lru_cache(maxsize=8)
def operating_point(plant=PlantConfig()):
    """Refined equilibrium and its zero-order-hold linearization."""
    u_eq = np.asarray(plant.u_nominal, dtype=float)
    x_eq = cstr.refine_equilibrium(u_eq, plant.theta0, plant.params)
    Ac, Bc, C = cstr.linearize(plant.params, x_eq, u_eq, plant.theta0)
    A, B = cstr.discretize(Ac, Bc, plant.Ts)
    return OperatingPoint(x_eq, u_eq, cstr.outputs(x_eq, plant.params), A, B, C)


def cstr_constraints(op, cfg):
    """Physical constraints expressed as deviations from the operating point."""
    inf = np.inf
    x_hi = np.full(6, inf)
    x_hi[2] = 117.0 - op.x_eq[2]
    eta_x_hi = np.zeros(6)
    eta_x_hi[2] = cfg.eta_theta
    return ConstraintSet(
        x_lo=np.full(6, -inf), x_hi=x_hi,
        u_lo=np.array([3.0, -9000.0]) - op.u_eq, u_hi=np.array([35.0, 0.0]) - op.u_eq,
        h_lo=np.array([0.72, 155.0]) - op.y_eq, h_hi=np.full(2, inf),
        eta_x_hi=eta_x_hi, eta_h_lo=np.array([cfg.eta_c, cfg.eta_p]),
    )


class CstrController:
    """Observer, target calculator and warm-started ADMM solver."""

    def __init__(self, cfg=ControllerConfig(), plant=PlantConfig()):
        self.cfg = cfg
        self.op = op = operating_point(plant)
        self.model = LinearModel(op.A, op.B, op.C, E=op.C, F=np.zeros((2, 2)))
        self.scaling = Preconditioner(cfg.Nx, cfg.Nu, cfg.Nc)
        Q, R, T, S = self.scaling.weights_to_physical(np.diag(cfg.Q), np.diag(cfg.R),
                                                      np.diag(cfg.T), np.diag(cfg.S))
        weights = CostWeights(Q, R, T, S, beta=self.scaling.beta_to_physical(cfg.beta))
        self.problem = build_problem(self.model, cstr_constraints(op, cfg), weights,
                                     cfg.N, cfg.rho, self.scaling)
        self.gains = design_observer_gains(self.model, np.diag(cfg.Q_obs), np.diag(cfg.R_obs))
        self.settings = cfg.settings
        self.reset()

    def reset(self):
        self.est = EstimatorState.origin(self.model.n, self.model.p)
        self.reference = ReferenceTracker(self.model)
        self.warm = None

    def step(self, y, y_ref):
        """One sample: physical ``y`` and ``y_ref`` in, physical input out."""
        op = self.op
        x_r, u_r = self.reference(np.asarray(y_ref) - op.y_eq, self.est.d_hat)
        state = initial_state(self.problem, self.est.x_hat, self.est.d_hat, x_r, u_r, self.warm)
        while True:
            sol, state = resume(self.problem, state, self.settings)
            if sol.status != "budget":
                break
        if self.cfg.warm_start:
            self.warm = warm_start_shift(sol.v, sol.lam, self.problem.stage_size)
        self.est = observer_update(self.est, self.gains, self.model, sol.u0,
                                   np.asarray(y) - op.y_eq)
        return op.u_eq + sol.u0, sol, x_r + op.x_eq


@dataclass(frozen=True)
class Scenario:
    """Random references, switch time and disturbance noise of one experiment."""

    seed: tuple
    y_r1: np.ndarray
    y_r2: np.ndarray
    t_r: int
    noise: np.ndarray = field(repr=False)
    N_t: int = 100
    init_steps: int = 40

    def __post_init__(self):
        if not 0 <= self.t_r <= self.N_t:
            raise InvalidParameters(f"t_r={self.t_r} outside 0..{self.N_t}")
        if self.noise.shape != (self.init_steps + self.N_t,):
            raise InvalidParameters("noise sequence length does not match the horizon")

    @classmethod
    def sample(cls, master_seed, key, N_t=100, init_steps=40, cB_range=(0.73, 1.094),
               pB_range=(155.0, 301.0), tr_range=(10, 50)):
        """Draw from a Philox stream keyed by ``(master_seed, *key)``."""
        ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
        rng = np.random.Generator(np.random.Philox(ss))
        lo = np.array([cB_range[0], pB_range[0]])
        hi = np.array([cB_range[1], pB_range[1]])
        y1 = rng.uniform(lo, hi)
        y2 = rng.uniform(lo, hi)
        t_r = int(rng.integers(tr_range[0], tr_range[1], endpoint=True))
        noise = cstr.singer_noise(rng, init_steps + N_t)
        return cls((int(master_seed),) + tuple(key), y1, y2, t_r, noise, N_t, init_steps)

    @classmethod
    def steady(cls, y_ref, N_t=100, init_steps=40):
        """Constant reference and no disturbance noise."""
        y = np.asarray(y_ref, dtype=float)
        return cls((), y, y.copy(), 0, np.zeros(init_steps + N_t), N_t, init_steps)

    def reference(self, k):
        """Output reference at recorded step ``k`` (negative during initialization)."""
        return self.y_r1 if k < self.t_r else self.y_r2


TRAJECTORY_COLUMNS = (
    "k", "c_A", "c_B", "theta", "theta_K", "F_N", "P_K", "u0_FN", "u0_PK", "theta_d",
    "y_r_cB", "y_r_pB", "x_r_cA", "x_r_cB", "x_r_theta", "x_r_thetaK", "x_r_FN", "x_r_PK",
    "iterations", "primal_res", "dual_res",
)


@dataclass
class PerformanceRecord:
    phi1: float
    phi2: int
    feasible: bool
    failed_step: int = None
    trajectory: np.ndarray = field(default=None, repr=False)


def run_experiment(scenario, controller, plant=PlantConfig(), bounds=IndicatorBounds(),
                   keep_trajectory=True):
    """Simulate the initialization phase plus ``N_t`` recorded steps.

    A solver failure stops the experiment; the record is flagged and scored
    as infeasible with the iteration cap as its iteration count.
    """
    controller.reset()
    x = controller.op.x_eq.copy()
    theta_d = plant.theta0
    rows = []
    iters = []
    failed = None
    for j in range(scenario.init_steps + scenario.N_t):
        k = j - scenario.init_steps
        y_ref = scenario.y_r1 if k < 0 else scenario.reference(k)
        y = cstr.outputs(x, plant.params)
        try:
            u, sol, x_r = controller.step(y, y_ref)
        except MPCTError as exc:
            log.warning("experiment %s failed at step %d: %s", scenario.seed, k, exc)
            failed = k
            break
        if k >= 0:
            iters.append(sol.iterations)
            rows.append(np.concatenate([[k], x, u, [theta_d], y_ref, x_r,
                                        [sol.iterations, sol.r_primal, sol.r_dual]]))
        try:
            x = cstr.integrate_step(x, u, theta_d, plant.params, plant.Ts, plant.substeps)
        except MPCTError as exc:
            log.warning("experiment %s: plant failure at step %d: %s", scenario.seed, k, exc)
            failed = k
            break
        theta_d = cstr.singer_step(theta_d, scenario.noise[j], plant.theta0)

    traj = np.array(rows).reshape(-1, len(TRAJECTORY_COLUMNS))
    if failed is not None:
        return PerformanceRecord(math.inf, controller.cfg.max_iter, False, failed,
                                 traj if keep_trajectory else None)
    score = phi1(traj[:, 3], traj[:, 2], traj[:, 2] * traj[:, 5] * plant.params.VR * 1000.0,
                 bounds)
    return PerformanceRecord(score, int(phi2(iters)), score == 0.0, None,
                             traj if keep_trajectory else None)


def controller_grid(base=ControllerConfig(), eta_theta=(0.0, 1.5, 3.0), eta_c=(0.0, 0.04, 0.08),
                    eta_p=(0.0, 10.0, 20.0), beta=(100.0, 300.0)):
    """Every combination of back-offs and soft weights, in lexicographic order."""
    return [replace(base, eta_theta=a, eta_c=b, eta_p=c, beta=d)
            for a, b, c, d in itertools.product(eta_theta, eta_c, eta_p, beta)]


@dataclass(frozen=True)
class ScenarioSpec:
    N_t: int = 100
    init_steps: int = 40
    cB_range: tuple = (0.73, 1.094)
    pB_range: tuple = (155.0, 301.0)
    tr_range: tuple = (10, 50)
    common_random_numbers: bool = True

    def __post_init__(self):
        if not 0 <= self.tr_range[0] <= self.tr_range[1] <= self.N_t:
            raise InvalidParameters(f"switch range {self.tr_range} outside 0..{self.N_t}")

    def key(self, stream, controller_idx, exp_idx):
        if self.common_random_numbers:
            return (stream, exp_idx)
        return (stream, controller_idx, exp_idx)

    def draw(self, master_seed, key):
        return Scenario.sample(master_seed, key, self.N_t, self.init_steps, self.cB_range,
                               self.pB_range, self.tr_range)


@lru_cache(maxsize=4)
def _cached_controller(cfg, plant):
    return CstrController(cfg, plant)


def _run_task(task):
    cfg, plant, bounds, spec, master_seed, key = task
    controller = _cached_controller(cfg, plant)
    rec = run_experiment(spec.draw(master_seed, key), controller, plant, bounds,
                         keep_trajectory=False)
    return rec.phi1, rec.phi2, rec.failed_step


@dataclass
class ControllerSummary:
    config: ControllerConfig
    phi1: list
    phi2: list
    failed: list
    r: int
    verify_phi1: list = None
    verify_phi2: list = None

    @property
    def N_s(self):
        return len(self.phi1)

    @property
    def phi1_bound(self):
        return rth_worst(self.phi1, self.r)

    @property
    def phi2_bound(self):
        return rth_worst(self.phi2, self.r)

    @property
    def feasible_pct(self):
        return 100.0 * sum(1 for f in self.phi1 if f == 0.0) / len(self.phi1)

    @property
    def n_failures(self):
        return sum(1 for f in self.failed if f is not None)

    def exceedance(self):
        """Fraction of verification runs above each bound, and their feasible %."""
        if not self.verify_phi1:
            return None
        nv = len(self.verify_phi1)
        return (sum(1 for f in self.verify_phi1 if f > self.phi1_bound) / nv,
                sum(1 for f in self.verify_phi2 if f > self.phi2_bound) / nv,
                100.0 * sum(1 for f in self.verify_phi1 if f == 0.0) / nv)


@dataclass
class CampaignReport:
    plan: ValidationPlan
    master_seed: int
    controllers: list

    @property
    def certified(self):
        return self.plan.certified


def run_campaign(plan, grid, master_seed, plant=PlantConfig(), bounds=IndicatorBounds(),
                 spec=ScenarioSpec(), jobs=1, verify=0, on_controller=None):
    """Run ``plan.N_s`` experiments per controller, plus ``verify`` fresh ones.

    Controllers are processed in grid order; ``on_controller`` is called
    with each finished :class:`ControllerSummary` so callers can persist
    partial results. Output is independent of ``jobs``.
    """
    if plan.N_s < plan.r:
        raise InvalidParameters("N_s must be at least r")
    if verify < 0:
        raise InvalidParameters("verify must be nonnegative")
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    summaries = []
    try:
        for ci, cfg in enumerate(grid):
            keys = [spec.key(VALIDATION_STREAM, ci, e) for e in range(plan.N_s)]
            keys += [spec.key(VERIFICATION_STREAM, ci, e) for e in range(verify)]
            tasks = [(cfg, plant, bounds, spec, master_seed, k) for k in keys]
            if pool is None:
                res = [_run_task(t) for t in tasks]
            else:
                res = list(pool.map(_run_task, tasks,
                                    chunksize=max(1, len(tasks) // (4 * jobs))))
            main, ver = res[:plan.N_s], res[plan.N_s:]
            summary = ControllerSummary(
                cfg, [c[0] for c in main], [c[1] for c in main], [c[2] for c in main], plan.r,
                [c[0] for c in ver] if verify else None, [c[1] for c in ver] if verify else None)
            summaries.append(summary)
            if on_controller is not None:
                on_controller(ci, summary)
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    return CampaignReport(plan, int(master_seed), summaries)
