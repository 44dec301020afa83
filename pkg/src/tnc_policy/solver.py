"""Profit-maximizing platform decisions.

The platform's pricing problem is solved in the decision variables
``(lam, N)``. For a fixed fleet the fare-revenue problem is strictly concave
in ``lam`` and its first-order condition has a unique root, found by a
bracketing root finder. The outer problem over ``N`` is not known to be
concave, so it is scanned on a log-spaced grid and the best bracket is
refined with a bounded scalar search.

Regulated problems are solved by enumerating two branches and keeping the
more profitable one:

* wage-floor branch, ``N <= N0 F_d(w_min)``, every driver paid ``w_min``;
* market-wage branch, ``N >= N0 F_d(w_min)``, wage ``F_d^{-1}(N / N0)``.

Congestion charges are always handled in the passenger-levied
normalization (trip charge added to the passenger's cost, time charge added
to the hourly cost of a vehicle); the reported outcome is then booked on
whichever side the policy names.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import DomainError
from .model import (
    MIN_PER_HR,
    Equilibrium,
    LevySide,
    ModelParams,
    Policy,
    Regime,
    fleet_kinematics,
    market_outcome,
    supply,
    supply_inverse,
    traffic_speed,
    trip_duration,
)

log = logging.getLogger(__name__)

MIN_WAGE = "min_wage"
SUPPLY_CAP = "supply_cap"


@dataclass(frozen=True)
class SolverConfig:
    """Numerical settings.

    Attributes:
        foc_tol: tolerance on the inner first-order condition ($/trip).
        n_grid: number of log-spaced fleet sizes in the outer scan.
        n_refine_tol: absolute tolerance on the fleet size (vehicles).
        lam_bracket_margin: relative margin keeping ``lam`` inside
            ``(0, min(N / t0, lambda0))``.
    """

    foc_tol: float = 1e-9
    n_grid: int = 200
    n_refine_tol: float = 1e-4
    lam_bracket_margin: float = 1e-9

    def __post_init__(self):
        if min(self.foc_tol, self.n_refine_tol, self.lam_bracket_margin) <= 0:
            raise DomainError("solver tolerances must be positive")
        if self.n_grid < 50:
            raise DomainError("n_grid must be at least 50")


DEFAULT_CONFIG = SolverConfig()


# --- inner problem: optimal arrival rate for a fixed fleet -----------------


def _foc(params: ModelParams, n, lam, p_eff):
    # unchecked, array-friendly version of inner_foc
    v = params.v_free - params.kappa * n
    t0 = MIN_PER_HR * params.trip_len / v
    n_idle = n - lam * t0
    tp = params.m_const * MIN_PER_HR / (v * np.sqrt(n_idle))
    cost = params.c_out + np.log((params.lambda0 - lam) / lam) / params.eps
    return (
        cost
        - params.alpha * tp
        - params.beta * t0
        - params.lambda0 / (params.eps * (params.lambda0 - lam))
        - lam * params.alpha * t0 * tp / (2.0 * n_idle)
        - p_eff
    )


def lambda_bracket(params: ModelParams, n, config: SolverConfig = DEFAULT_CONFIG):
    """Admissible arrival-rate interval for fleet ``n``, shrunk by the margin."""
    t0 = trip_duration(params, traffic_speed(params, n))
    m = config.lam_bracket_margin
    lo = m * params.lambda0
    hi = (1.0 - m) * np.minimum(n / t0, params.lambda0)
    return lo, hi


def inner_foc(params: ModelParams, n: float, lam: float, p_eff: float = 0.0) -> float:
    """Derivative of per-minute fare revenue in ``lam`` at fixed fleet ``n``.

    ``p_eff`` is the per-trip charge in the passenger-levied normalization.
    The value is strictly decreasing in ``lam``; its root is the inner
    optimum.
    """
    t0 = trip_duration(params, traffic_speed(params, n))
    if not 0 < lam < min(n / t0, params.lambda0):
        raise DomainError(f"lam={lam!r} outside (0, min(N/t0, lambda0)) for N={n!r}")
    return float(_foc(params, n, lam, p_eff))


def optimal_lambda(
    params: ModelParams,
    n: float,
    p_eff: float = 0.0,
    config: SolverConfig = DEFAULT_CONFIG,
    full_output: bool = False,
):
    """Unique revenue-maximizing arrival rate for fleet ``n``.

    With ``full_output`` returns ``(lam, info)`` where ``info`` holds the
    iteration count, FOC residual and diagnostics. If the FOC does not change
    sign on the bracket the nearer boundary is returned and flagged.
    """
    lo, hi = lambda_bracket(params, n, config)
    if not lo < hi:
        raise DomainError(f"empty arrival-rate bracket for N={n!r}")
    f_lo = _foc(params, n, lo, p_eff)
    f_hi = _foc(params, n, hi, p_eff)
    diagnostics = ()
    iterations = 0
    if f_lo <= 0:
        lam, diagnostics = lo, ("foc_nonpositive_at_lower_bound",)
    elif f_hi >= 0:
        lam, diagnostics = hi, ("foc_nonnegative_at_upper_bound",)
    else:
        lam, res = optimize.brentq(
            lambda x: _foc(params, n, x, p_eff),
            lo,
            hi,
            xtol=1e-14,
            rtol=4 * np.finfo(float).eps,
            maxiter=200,
            full_output=True,
        )
        iterations = res.iterations
    residual = abs(float(_foc(params, n, lam, p_eff)))
    if not diagnostics and residual > config.foc_tol:
        diagnostics = ("foc_residual_above_tolerance",)
    if full_output:
        return float(lam), {"iterations": iterations, "residual": residual, "diagnostics": diagnostics}
    return float(lam)


def optimal_lambda_grid(params: ModelParams, n, p_eff: float = 0.0, config: SolverConfig = DEFAULT_CONFIG):
    """Vectorized bisection for the inner optimum over an array of fleets."""
    n = np.asarray(n, dtype=float)
    lo, hi = lambda_bracket(params, n, config)
    lo = np.broadcast_to(lo, n.shape).astype(float)
    hi = np.array(hi, dtype=float)
    # 100 halvings exhaust double precision for any bracket in play
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        positive = _foc(params, n, mid, p_eff) > 0
        lo = np.where(positive, mid, lo)
        hi = np.where(positive, hi, mid)
    return 0.5 * (lo + hi)


def _net_fare(params: ModelParams, lam, n, p_eff):
    v, t0, _, tp = fleet_kinematics(params, lam, n)
    cost = params.c_out + np.log((params.lambda0 - lam) / lam) / params.eps
    return cost - params.alpha * tp - params.beta * t0 - p_eff


def revenue_gamma(params: ModelParams, n: float, p_eff: float = 0.0, config: SolverConfig = DEFAULT_CONFIG) -> float:
    """Maximal fare revenue net of the per-trip charge, in $/min, for fleet ``n``."""
    lam = optimal_lambda(params, n, p_eff, config)
    return float(lam * _net_fare(params, lam, n, p_eff))


def revenue_gamma_grid(params: ModelParams, n, p_eff: float = 0.0, config: SolverConfig = DEFAULT_CONFIG):
    n = np.asarray(n, dtype=float)
    lam = optimal_lambda_grid(params, n, p_eff, config)
    return lam * _net_fare(params, lam, n, p_eff)


def revenue_gamma_slope(
    params: ModelParams,
    n: float,
    p_eff: float = 0.0,
    config: SolverConfig = DEFAULT_CONFIG,
    rel_step: float = 1e-5,
) -> float:
    """Central-difference derivative of the revenue function in ``N`` ($/min per vehicle)."""
    h = rel_step * n
    return (revenue_gamma(params, n + h, p_eff, config) - revenue_gamma(params, n - h, p_eff, config)) / (2 * h)


# --- outer problem over the fleet size ------------------------------------


@dataclass
class _BranchResult:
    n: float
    profit: float
    wage: float
    evaluations: int
    multimodal: bool


def _min_fleet(params: ModelParams, config: SolverConfig) -> float:
    t0_max = trip_duration(params, traffic_speed(params, params.n0))
    return 10.0 * config.lam_bracket_margin * params.lambda0 * t0_max


def _maximize_branch(params, p_eff, p_time, lo, hi, wage_of, config, include_hi=True):
    """Scan-and-refine maximization of hourly profit over ``N`` in ``[lo, hi]``.

    ``wage_of`` maps fleet size (array or scalar) to the hourly wage paid.
    """
    grid = np.geomspace(lo, hi, config.n_grid)
    values = MIN_PER_HR * revenue_gamma_grid(params, grid, p_eff, config) - grid * (wage_of(grid) + p_time)
    values = np.where(np.isfinite(values), values, -np.inf)
    evaluations = grid.size

    interior = values[1:-1]
    # loss-making local maxima near N -> 0 are not operating points
    peaks = np.sum((interior > values[:-2]) & (interior > values[2:]) & (interior > 0))
    multimodal = bool(peaks > 1)

    def profit(n):
        return MIN_PER_HR * revenue_gamma(params, n, p_eff, config) - n * (float(wage_of(n)) + p_time)

    i = int(np.argmax(values))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid.size - 1)]
    candidates = [(float(values[i]), float(grid[i]))]
    if b - a > config.n_refine_tol:
        res = optimize.minimize_scalar(
            lambda n: -profit(n),
            bounds=(a, b),
            method="bounded",
            options={"xatol": config.n_refine_tol, "maxiter": 500},
        )
        evaluations += res.nfev
        candidates.append((-float(res.fun), float(res.x)))
    if include_hi and i >= grid.size - 2:
        # the wage-floor branch peaks at its kink whenever hiring is still profitable
        candidates.append((profit(hi), float(hi)))
        evaluations += 1
    best_profit, best_n = max(candidates)
    return _BranchResult(best_n, best_profit, float(wage_of(best_n)), evaluations, multimodal)


def solve(params: ModelParams, policy: Policy = Policy(), config: SolverConfig = DEFAULT_CONFIG) -> Equilibrium:
    """Profit-maximizing equilibrium under an arbitrary policy."""
    p_eff = policy.p_trip
    p_time = policy.p_time
    n_lo = _min_fleet(params, config)
    n_hi = params.n0 * (1.0 - 1e-9)

    def market_wage(n):
        return supply_inverse(params, n)

    branches = []
    if policy.w_min is None:
        branches.append(("market", _maximize_branch(params, p_eff, p_time, n_lo, n_hi, market_wage, config, False)))
    else:
        w_min = policy.w_min
        n_cap = float(supply(params, w_min))

        def floor_wage(n):
            return np.full_like(np.asarray(n, dtype=float), w_min)[()]

        if n_cap > n_lo:
            branches.append(("floor", _maximize_branch(params, p_eff, p_time, n_lo, n_cap, floor_wage, config)))
        if n_hi > n_cap:
            branches.append(
                ("market", _maximize_branch(params, p_eff, p_time, max(n_cap, n_lo), n_hi, market_wage, config, False))
            )
    kind, best = max(branches, key=lambda kb: kb[1].profit)

    lam, info = optimal_lambda(params, best.n, p_eff, config, full_output=True)
    outcome = market_outcome(params, lam, best.n, policy, wage=best.wage)

    if policy.w_min is None:
        regime, active = Regime.UNCONSTRAINED, frozenset({SUPPLY_CAP})
    else:
        n_cap = float(supply(params, policy.w_min))
        if kind == "floor" and abs(best.n - n_cap) <= config.n_refine_tol:
            regime, active = Regime.WAGE_FLOOR_FULL_HIRE, frozenset({MIN_WAGE, SUPPLY_CAP})
        elif kind == "floor":
            regime, active = Regime.WAGE_FLOOR_PARTIAL_HIRE, frozenset({MIN_WAGE})
        else:
            regime, active = Regime.UNCONSTRAINED, frozenset({SUPPLY_CAP})

    diagnostics = tuple(info["diagnostics"]) + outcome.diagnostics
    if any(b.multimodal for _, b in branches):
        diagnostics += ("multimodal_outer_objective",)
    if outcome.profit_hr < 0:
        diagnostics += ("negative_profit",)
    total_evals = sum(b.evaluations for _, b in branches)
    return Equilibrium(
        outcome=outcome,
        regime=regime,
        active_constraints=active,
        iterations=total_evals,
        residual=info["residual"],
        diagnostics=diagnostics,
    )


def solve_unregulated(params: ModelParams, config: SolverConfig = DEFAULT_CONFIG) -> Equilibrium:
    """Platform optimum without any regulation."""
    return solve(params, Policy(), config)


def solve_min_wage(params: ModelParams, w_min: float, config: SolverConfig = DEFAULT_CONFIG) -> Equilibrium:
    """Platform optimum under a wage floor ``w_min`` ($/hr)."""
    return solve(params, Policy(w_min=w_min), config)


def solve_trip_tax(
    params: ModelParams,
    w_min: Optional[float],
    p_t: float,
    levy_side: LevySide = LevySide.PLATFORM,
    config: SolverConfig = DEFAULT_CONFIG,
) -> Equilibrium:
    """Platform optimum under a wage floor and a per-trip charge ``p_t``."""
    return solve(params, Policy(w_min=w_min, p_trip=p_t, levy_side=levy_side), config)


def solve_time_tax(
    params: ModelParams,
    w_min: Optional[float],
    p_h: float,
    levy_side: LevySide = LevySide.PLATFORM,
    config: SolverConfig = DEFAULT_CONFIG,
) -> Equilibrium:
    """Platform optimum under a wage floor and a per-vehicle-hour charge ``p_h``."""
    return solve(params, Policy(w_min=w_min, p_time=p_h, levy_side=levy_side), config)


def levy_side_transform(params: ModelParams, eq: Equilibrium, levy_side: Optional[LevySide] = None) -> Equilibrium:
    """Re-book an equilibrium on the other levy side (or on ``levy_side``).

    Arrival rate, fleet, net wage, profit and tax revenue are unchanged; a
    trip charge moves between the fare and the platform's cost, a time
    charge between the per-trip payment and the platform's cost.
    """
    current = eq.outcome.policy
    if levy_side is None:
        levy_side = (
            LevySide.PLATFORM if current.levy_side is LevySide.PASSENGER_OR_DRIVER else LevySide.PASSENGER_OR_DRIVER
        )
    policy = replace(current, levy_side=LevySide(levy_side))
    outcome = market_outcome(params, eq.outcome.lam, eq.outcome.n_drivers, policy, wage=eq.outcome.wage_hr)
    return replace(eq, outcome=outcome)


def hire_cap(params: ModelParams, w_min: float) -> float:
    """Number of drivers willing to work at ``w_min``: ``N0 F_d(w_min)``."""
    return float(supply(params, w_min))


def is_full_hire(eq: Equilibrium) -> bool:
    return eq.regime is Regime.WAGE_FLOOR_FULL_HIRE


def profit_at(params: ModelParams, n: float, policy: Policy, config: SolverConfig = DEFAULT_CONFIG) -> float:
    """Hourly profit at fleet ``n`` with the inner problem solved exactly."""
    wage = float(supply_inverse(params, n))
    if policy.w_min is not None:
        wage = max(wage, policy.w_min)
    gamma = revenue_gamma(params, n, policy.p_trip, config)
    return MIN_PER_HR * gamma - n * (wage + policy.p_time)


__all__ = [
    "SolverConfig",
    "DEFAULT_CONFIG",
    "inner_foc",
    "lambda_bracket",
    "optimal_lambda",
    "optimal_lambda_grid",
    "revenue_gamma",
    "revenue_gamma_grid",
    "revenue_gamma_slope",
    "solve",
    "solve_unregulated",
    "solve_min_wage",
    "solve_trip_tax",
    "solve_time_tax",
    "levy_side_transform",
    "hire_cap",
    "is_full_hire",
    "profit_at",
]
