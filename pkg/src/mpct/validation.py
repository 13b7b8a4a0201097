"""Sample-complexity bounds, performance indicators and order statistics."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrajectory, InvalidParameters, OutOfRange


def _check_plan(eps, delta, r, M, K):
    if not 0 < eps < 1:
        raise InvalidParameters(f"epsilon must lie in (0, 1), got {eps}")
    if not 0 < delta <= 1:
        raise InvalidParameters(f"delta must lie in (0, 1], got {delta}")
    if int(r) != r or r < 1:
        raise InvalidParameters(f"r must be a positive integer, got {r}")
    if int(M) != M or M < 1 or int(K) != K or K < 1:
        raise InvalidParameters("M and K must be positive integers")


def min_sample_size(eps, delta, r, M=1, K=1):
    """Smallest N_s satisfying the closed-form sufficient condition (at least 1)."""
    _check_plan(eps, delta, r, M, K)
    L = math.log(M * K / delta)
    bound = (r - 1 + L + math.sqrt(2 * (r - 1) * L)) / eps
    return max(1, math.ceil(bound))


def log_binomial_tail(N_s, eps, r):
    """log of sum_{q<r} C(N_s, q) eps^q (1 - eps)^(N_s - q)."""
    terms = [
        math.lgamma(N_s + 1) - math.lgamma(q + 1) - math.lgamma(N_s - q + 1)
        + q * math.log(eps) + (N_s - q) * math.log1p(-eps)
        for q in range(int(r))
    ]
    top = max(terms)
    return top + math.log(sum(math.exp(t - top) for t in terms))


def check_binomial_condition(N_s, eps, r, M, K, delta):
    """Exact test of the binomial-tail condition against ``delta / (M K)``."""
    _check_plan(eps, delta, r, M, K)
    if N_s < r:
        raise InvalidParameters(f"N_s={N_s} must be at least r={r}")
    return log_binomial_tail(N_s, eps, r) <= math.log(delta / (M * K))


@dataclass(frozen=True)
class ValidationPlan:
    eps: float = 0.03
    delta: float = 1e-6
    r: int = 5
    M: int = 1
    K: int = 2
    N_s: int = None

    def __post_init__(self):
        _check_plan(self.eps, self.delta, self.r, self.M, self.K)
        if self.N_s is None:
            object.__setattr__(self, "N_s", min_sample_size(self.eps, self.delta, self.r,
                                                            self.M, self.K))
        if self.N_s < self.r:
            raise InvalidParameters(f"N_s={self.N_s} must be at least r={self.r}")

    @property
    def certified(self):
        return check_binomial_condition(self.N_s, self.eps, self.r, self.M, self.K, self.delta)


@dataclass(frozen=True)
class IndicatorBounds:
    theta_max: float = 117.0
    cB_min: float = 0.72
    pB_min: float = 155.0
    rho_theta: float = 30.0
    rho_c: float = 150.0
    rho_p: float = 1.0


def phi1(theta, cB, pB, bounds=IndicatorBounds()):
    """Weighted squared constraint violation summed over the trajectory."""
    theta, cB, pB = (np.asarray(a, dtype=float) for a in (theta, cB, pB))
    v_t = np.maximum(theta - bounds.theta_max, 0.0)
    v_c = np.maximum(bounds.cB_min - cB, 0.0)
    v_p = np.maximum(bounds.pB_min - pB, 0.0)
    return float(np.sum(bounds.rho_theta * v_t ** 2 + bounds.rho_c * v_c ** 2
                        + bounds.rho_p * v_p ** 2))


def phi2(iteration_counts):
    counts = list(iteration_counts)
    if not counts:
        raise EmptyTrajectory("no iteration counts recorded")
    return max(counts)


def rth_worst(values, r):
    values = list(values)
    if not 1 <= r <= len(values):
        raise OutOfRange(f"r={r} outside 1..{len(values)}")
    return sorted(values, reverse=True)[r - 1]
