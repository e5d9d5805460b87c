"""Convergence machinery: Lyapunov potential, feasibility constants,
contraction factor, iteration complexity, and trajectory monitors.

The potential combines the objective error with two lagged squared iterate
movements, ``V_k = f_err_k + beta1 * d1_k + beta2 * d2_k``. When the derived
constants gamma, sigma0, sigma1, sigma2 are all nonnegative the potential is
nonincreasing along any run of the sparsified-difference method whose
per-coordinate thresholds are at most ``xi_max``; with strong convexity it
contracts geometrically at rate ``c = min(2 sigma0 mu, sigma1/beta1,
sigma2/beta2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq


@dataclass(frozen=True)
class TheoryParams:
    alpha: float
    xi_max: float
    beta1: float
    beta2: float
    L: float
    mu: float
    rho: float = 1.0
    rho2: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.rho <= 0 or self.rho2 <= 0:
            raise ValueError("rho and rho2 must be positive")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("beta1 and beta2 must be nonnegative")
        if self.xi_max < 0:
            raise ValueError("xi_max must be nonnegative")


@dataclass(frozen=True)
class TheoryReport:
    gamma: float
    sigma0: float
    sigma1: float
    sigma2: float
    feasible: bool
    boundary: bool  # feasible but with some constant exactly at zero
    contraction_c: Optional[float] = None
    iter_complexity: Optional[float] = None


def sigmas(p: TheoryParams) -> TheoryReport:
    """Evaluate the feasibility constants.

    gamma  = L/2 - 1/(2 alpha) + beta1
    sigma0 = alpha/2 - gamma (1+rho) alpha^2
    sigma1 = beta1 - beta2 - (1+rho2)   xi^2 (alpha/2 + gamma (1+1/rho) alpha^2)
    sigma2 = beta2          - (1+1/rho2) xi^2 (alpha/2 + gamma (1+1/rho) alpha^2)

    Feasible means all four are nonnegative; a zero marks the boundary of the
    feasible region (accepted, flagged).
    """
    a, xi2 = p.alpha, p.xi_max**2
    gamma = p.L / 2.0 - 1.0 / (2.0 * a) + p.beta1
    sigma0 = a / 2.0 - gamma * (1.0 + p.rho) * a**2
    inner = a / 2.0 + gamma * (1.0 + 1.0 / p.rho) * a**2
    sigma1 = -p.beta2 + p.beta1 - (1.0 + p.rho2) * xi2 * inner
    sigma2 = p.beta2 - (1.0 + 1.0 / p.rho2) * xi2 * inner
    vals = (gamma, sigma0, sigma1, sigma2)
    feasible = all(v >= 0 for v in vals)
    return TheoryReport(
        gamma, sigma0, sigma1, sigma2,
        feasible=feasible,
        boundary=feasible and any(v == 0 for v in vals),
    )


def violated_conditions(report: TheoryReport) -> list[str]:
    names = ("gamma", "sigma0", "sigma1", "sigma2")
    vals = (report.gamma, report.sigma0, report.sigma1, report.sigma2)
    return [n for n, v in zip(names, vals) if v < 0]


def feasible_xi_bound(alpha: float, beta1: float, beta2: float, rho2: float, L: float) -> float:
    """Largest threshold bound compatible with feasibility when beta1 is at
    its matched value ``(1 - alpha L) / (2 alpha)`` (so gamma = 0).

    Requires ``alpha <= 1/L`` and ``beta1 >= beta2 >= 0``. The bound is
    ``min( sqrt(2(beta1-beta2) / ((1+rho2) alpha)),
    sqrt(2 beta2 / ((1+1/rho2) alpha)) )``; plugging it back makes the
    binding one of sigma1, sigma2 vanish.
    """
    if alpha > 1.0 / L:
        raise ValueError("infeasible: alpha exceeds 1/L")
    if not beta1 >= beta2 >= 0:
        raise ValueError("need beta1 >= beta2 >= 0")
    if rho2 <= 0:
        raise ValueError("rho2 must be positive")
    first = math.sqrt(2.0 * (beta1 - beta2) / ((1.0 + rho2) * alpha))
    second = math.sqrt(2.0 * beta2 / ((1.0 + 1.0 / rho2) * alpha))
    return min(first, second)


def lyapunov(f_err: float, d1_sq: float, d2_sq: float, beta1: float, beta2: float) -> float:
    """Potential value from objective error and the two lagged movements."""
    if f_err < -1e-12:
        raise ValueError("objective error below the numerical slack")
    return f_err + beta1 * d1_sq + beta2 * d2_sq


def contraction(p: TheoryParams) -> float:
    """Geometric decay rate of the potential under strong convexity.

    ``c = min(2 sigma0 mu, sigma1/beta1, sigma2/beta2)``, which must land in
    (0, 1); parameters that are infeasible or make c degenerate raise with
    the violated condition named.
    """
    report = sigmas(p)
    bad = violated_conditions(report)
    if bad:
        raise ValueError(f"infeasible parameters: {', '.join(bad)} negative")
    if p.mu <= 0:
        raise ValueError("contraction requires strong convexity (mu > 0)")
    if p.beta1 <= 0 or p.beta2 <= 0:
        raise ValueError("contraction requires beta1 > 0 and beta2 > 0")
    c = min(2.0 * report.sigma0 * p.mu, report.sigma1 / p.beta1, report.sigma2 / p.beta2)
    if c <= 0:
        raise ValueError("contraction degenerates to zero (a sigma vanishes)")
    if c >= 1:
        raise ValueError("contraction rate left (0, 1)")
    return c


class ComplexityBounds(NamedTuple):
    exact: float
    upper: float


def iteration_complexity(c: float, eps: float) -> ComplexityBounds:
    """Iterations guaranteeing the potential ratio drops below ``eps``.

    ``exact`` solves (1-c)^k <= eps; ``upper`` is the looser closed form
    log(1/eps)/c.
    """
    if not 0 < c < 1:
        raise ValueError("contraction must lie in (0, 1)")
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if eps == 1.0:
        return ComplexityBounds(0.0, 0.0)
    need = math.log(1.0 / eps)
    return ComplexityBounds(need / -math.log1p(-c), need / c)


def default_monitor_params(
    alpha: float, L: float, mu: float, rho: float = 1.0, rho2: float = 1.0
) -> TheoryParams:
    """Closed-form feasible family used by the trajectory monitor.

    beta1 is matched so gamma = 0, beta2 splits the threshold bound evenly
    between its two radicals, and xi_max is the resulting largest feasible
    threshold. At alpha = 1/L this degenerates to beta1 = beta2 = xi = 0
    (boundary feasible).
    """
    # Written with the same subexpressions the feasibility check uses, so
    # gamma cancels exactly in floating point; a few-ulp negative at the
    # alpha = 1/L boundary clamps to the degenerate family.
    beta1 = 1.0 / (2.0 * alpha) - L / 2.0
    if beta1 < 0:
        if beta1 < -1e-9 * max(1.0, L):
            raise ValueError("alpha must be at most 1/L")
        beta1 = 0.0
    beta2 = beta1 / (1.0 + rho2)
    xi = 0.0 if beta1 == 0.0 else feasible_xi_bound(alpha, beta1, beta2, rho2, L)
    return TheoryParams(alpha, xi, beta1, beta2, L, mu, rho, rho2)


def linear_rate_params(L: float, mu: float, delta: float | None = None) -> TheoryParams:
    """Parameter family whose contraction equals ``alpha * mu`` exactly.

    With ``alpha = (1-delta)/L`` and ``A = 1/(1 - alpha mu)`` the family sets
    ``beta1 = (1 - alpha L)/(2 alpha)``, ``beta2 = beta1 - A`` and
    ``xi^2 = beta2 (1 - alpha mu) / alpha`` with rho2 = 1; consistency
    requires ``0 <= beta2 <= 1``, which bounds delta to a window depending on
    L and mu. When ``delta`` is omitted it is solved so beta2 = 1/2.
    """
    if not 0 < mu <= L:
        raise ValueError("need 0 < mu <= L")

    def beta2_of(dlt: float) -> float:
        a = (1.0 - dlt) / L
        return 1.0 / (2.0 * a) - L / 2.0 - 1.0 / (1.0 - a * mu)

    if delta is None:
        delta = float(brentq(lambda t: beta2_of(t) - 0.5, 1e-9, 1.0 - 1e-9, xtol=1e-14))
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    alpha = (1.0 - delta) / L
    # This difference cancels gamma exactly in floating point.
    beta1 = 1.0 / (2.0 * alpha) - L / 2.0
    beta2 = beta1 - 1.0 / (1.0 - alpha * mu)
    if not 0.0 <= beta2 <= 1.0:
        lo = float(brentq(beta2_of, 1e-9, 1.0 - 1e-9, xtol=1e-14))
        hi = float(brentq(lambda t: beta2_of(t) - 1.0, 1e-9, 1.0 - 1e-9, xtol=1e-14))
        raise ValueError(f"delta outside the consistent window [{lo:.6f}, {hi:.6f}]")
    xi = math.sqrt(beta2 * (1.0 - alpha * mu) / alpha)
    return TheoryParams(alpha, xi, beta1, beta2, L, mu, rho=1.0, rho2=1.0)


def lyapunov_sequence(result, beta1: float, beta2: float) -> np.ndarray:
    """Potential value at every recorded round of a run."""
    return result.f_err + beta1 * result.d1_sq + beta2 * result.d2_sq


def descent_margins(result, p: TheoryParams) -> np.ndarray:
    """Per-step slack of the monitored descent inequality.

    Entry k is ``V_{k+1} - V_k + sigma0 g_k + sigma1 d1_k + sigma2 d2_k``;
    the inequality holds when every entry is nonpositive (up to numerical
    slack). Entries are aligned with the step from round k+1 to k+2.
    """
    r = sigmas(p)
    V = lyapunov_sequence(result, p.beta1, p.beta2)
    return (
        V[1:]
        - V[:-1]
        + r.sigma0 * result.grad_norm_sq[:-1]
        + r.sigma1 * result.d1_sq[:-1]
        + r.sigma2 * result.d2_sq[:-1]
    )


def smooth_step_margins(result, alpha: float, L: float) -> np.ndarray:
    """Per-step slack of the one-step objective descent bound.

    Entry k is the amount by which
    ``f_{k+1} - f_k <= -(alpha/2) g_k + (alpha/2) r_k
    + (L/2 - 1/(2 alpha)) d1_{k+1}``
    is violated, where ``r_k`` is the squared norm of the aggregate
    compression residual (requires a run recorded with residual collection).
    """
    r = result.ec_residual_norm_sq[:-1]
    if np.any(np.isnan(r)):
        raise ValueError("run was not recorded with residual collection")
    drop = result.f_err[1:] - result.f_err[:-1]
    bound = (
        -(alpha / 2.0) * result.grad_norm_sq[:-1]
        + (alpha / 2.0) * r
        + (L / 2.0 - 1.0 / (2.0 * alpha)) * result.d1_sq[1:]
    )
    return drop - bound
