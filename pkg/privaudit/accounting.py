"""Closed-form privacy accounting for the Gaussian mechanism

The (epsilon, delta) trade-off of a Gaussian mechanism with sensitivity S and
noise std sigma depends only on mu = S / sigma:

    delta(eps) = Phi(-eps/mu + mu/2) - exp(eps) * Phi(-eps/mu - mu/2)

DP-SGD budgets are reported per step with mu_step = 1/sigma and composed
naively over T steps; they upper-bound what a moments accountant reports.
"""

import logging
import math
from dataclasses import dataclass
from decimal import Decimal

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr, ndtr

from .errors import DomainError, InvariantError

EPSILON_BRACKET = (0.0, 200.0)
EPSILON_TOLERANCE = 1e-9
NAIVE_COMPOSITION = "naive-composition"


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) pair; epsilon = +inf marks a vacuous guarantee"""

    epsilon: float
    delta: float

    def __post_init__(self):
        if math.isnan(self.epsilon) or self.epsilon < 0:
            raise InvariantError(f"epsilon must be non-negative, got {self.epsilon}")
        if not 0.0 <= self.delta <= 1.0:
            raise InvariantError(f"delta must lie in [0, 1], got {self.delta}")


@dataclass(frozen=True)
class RandomDpCertificate:
    """Privacy certificate of one GPM deployment

    basis is "random_dp" when S_bar comes from sensitivity sampling (then gamma
    is rdp_confidence(n)) or "analytic" when S_bar is the
    smoothed-clipped SGD bound (standard DP, gamma = 0, n = 0).
    """

    epsilon: float
    delta: float
    gamma: float
    n: int
    S_bar: float
    sigma: float
    mu: float
    basis: str = "random_dp"

    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon, self.delta)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "gamma": self.gamma,
            "n": self.n,
            "S_bar": self.S_bar,
            "sigma": self.sigma,
            "mu": self.mu,
            "basis": self.basis,
        }


def normal_cdf(x):
    return ndtr(x)


def gaussian_delta(mu: float, epsilon: float) -> float:
    if mu < 0 or epsilon < 0:
        raise DomainError(f"gaussian_delta needs mu >= 0 and epsilon >= 0, got mu={mu}, epsilon={epsilon}")
    if mu == 0:
        return 0.0

    # exp(eps) * Phi(.) evaluated in log space to avoid overflow at large eps
    delta = ndtr(-epsilon / mu + mu / 2) - np.exp(epsilon + log_ndtr(-epsilon / mu - mu / 2))
    return float(min(max(delta, 0.0), 1.0))


def gaussian_epsilon(mu: float, delta: float) -> float:
    """Smallest epsilon >= 0 with gaussian_delta(mu, epsilon) <= delta"""
    if not mu > 0:
        raise DomainError(f"gaussian_epsilon needs mu > 0, got {mu}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"gaussian_epsilon needs delta in (0, 1), got {delta}")

    if delta >= gaussian_delta(mu, 0.0):
        return 0.0

    low, high = EPSILON_BRACKET

    if gaussian_delta(mu, high) > delta:
        logging.warning("epsilon exceeds %g for mu=%g, delta=%g: privacy guarantee is vacuous", high, mu, delta)
        return math.inf

    epsilon = brentq(lambda e: gaussian_delta(mu, e) - delta, low, high, xtol=EPSILON_TOLERANCE * 1e-3)

    # Land on the feasible side of the root
    step = EPSILON_TOLERANCE * 1e-3
    while gaussian_delta(mu, epsilon) > delta:
        epsilon += step
        step *= 2

    return float(epsilon)


def _lambert_initial_guess(x: float) -> float:
    if x < -0.25:
        # Series around the branch point -1/e, lower branch
        p = -math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
        return -1.0 + p - p * p / 3.0

    log_minus_x = math.log(-x)
    return log_minus_x - math.log(-log_minus_x)


def lambert_w_minus1(x: float) -> float:
    """Lower real branch W_{-1} on [-1/e, 0) via Halley iteration"""
    branch_point = -1.0 / math.e

    if not (branch_point - 1e-15 <= x < 0.0):
        raise DomainError(f"W_-1 is defined on [-1/e, 0), got {x}")
    if x <= branch_point:
        return -1.0

    w = _lambert_initial_guess(x)

    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0

        if wp1 == 0.0:
            break

        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w_next = min(w - step, -1.0)

        if abs(w_next - w) <= 1e-15 * abs(w_next):
            w = w_next
            break

        w = w_next

    return w


def rdp_confidence(n: int) -> tuple[float, float]:
    """(rho, gamma) of the random-DP guarantee for n sensitivity samples"""
    if n < 1:
        raise DomainError(f"rdp_confidence needs n >= 1, got {n}")

    rho = math.exp(0.5 * lambert_w_minus1(-1.0 / (4.0 * n)))
    gamma = rho + math.sqrt(math.log(1.0 / rho) / (2.0 * n))

    if gamma >= 1.0:
        logging.warning("Confidence gamma=%.4f for n=%d is vacuous; sample more", gamma, n)

    return rho, gamma


def sensitivity_bound(eta: float, beta: float, T: int, m: int, C: float) -> float:
    """Sensitivity bound of smoothed-clipped SGD after T iterations"""
    if m < 2:
        raise DomainError("sensitivity_bound needs a minibatch size m >= 2")
    if not (eta > 0 and beta > 0 and C > 0 and T >= 0):
        raise DomainError(f"sensitivity_bound needs eta, beta, C > 0 and T >= 0, got {eta}, {beta}, {C}, {T}")

    growth = math.expm1(T * math.log1p(eta * beta))
    return 2.0 * growth * C / ((m - 1) * beta)


def compose(k: int, budget: PrivacyBudget) -> PrivacyBudget:
    """Naive composition of k releases of an (eps, delta) mechanism"""
    if k < 1:
        raise DomainError(f"compose needs k >= 1, got {k}")

    # Decimal products so (3, (1, 1e-5)) composes to exactly (3, 3e-5)
    epsilon = budget.epsilon * k if math.isinf(budget.epsilon) else float(Decimal(repr(budget.epsilon)) * k)
    delta = float(Decimal(repr(budget.delta)) * k)
    return PrivacyBudget(epsilon, min(delta, 1.0))


def dpsgd_budget(noise_multiplier: float, iterations: int, delta_step: float) -> tuple[PrivacyBudget, PrivacyBudget]:
    """Per-step and naively composed budgets of DP-SGD (sensitivity C, noise std C*sigma)"""
    if noise_multiplier > 0:
        per_step = PrivacyBudget(gaussian_epsilon(1.0 / noise_multiplier, delta_step), delta_step)
    else:
        per_step = PrivacyBudget(math.inf, delta_step)

    if iterations < 1:
        return per_step, PrivacyBudget(0.0, 0.0)

    return per_step, compose(iterations, per_step)


def account_table(sigmas, delta: float, sensitivity=1.0, n: int | None = None) -> list[dict]:
    """(sigma, mu, epsilon, delta[, gamma]) rows of a Gaussian mechanism at fixed delta"""
    gamma = rdp_confidence(n)[1] if n else None
    rows = []

    for sigma in sigmas:
        mu = sensitivity / sigma
        row = {"sigma": sigma, "mu": mu, "epsilon": gaussian_epsilon(mu, delta) if mu > 0 else 0.0, "delta": delta}

        if gamma is not None:
            row["gamma"] = gamma

        rows.append(row)

    return rows
