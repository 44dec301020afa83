"""Policy experiments: charge sweeps, regime thresholds, scheme comparison.

Sweeps hold the wage floor fixed and vary one congestion charge; every row
is an independent solve, so rows can be farmed out to worker processes and
are re-assembled in grid order.
"""
from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import optimize

from .errors import ModelError, RevenueRangeError, ThresholdNotFound
from .model import (
    MIN_PER_HR,
    Equilibrium,
    LevySide,
    ModelParams,
    Policy,
    driver_wage_elasticity,
    passenger_price_elasticity,
)
from .solver import DEFAULT_CONFIG, SolverConfig, hire_cap, revenue_gamma_slope, solve, solve_unregulated

log = logging.getLogger(__name__)

TRIP = "trip"
TIME = "time"
SCHEMES = (TRIP, TIME)

DEFAULT_GRIDS = {TRIP: (0.0, 3.0, 100), TIME: (0.0, 10.0, 100)}
WORKERS_ENV = "TNC_POLICY_WORKERS"


def default_grid(scheme: str) -> np.ndarray:
    lo, hi, n = DEFAULT_GRIDS[scheme]
    return np.linspace(lo, hi, n)


def scheme_policy(scheme: str, w_min, level: float, levy_side=LevySide.PLATFORM) -> Policy:
    if scheme == TRIP:
        return Policy(w_min=w_min, p_trip=level, levy_side=levy_side)
    if scheme == TIME:
        return Policy(w_min=w_min, p_time=level, levy_side=levy_side)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def solve_scheme(params, w_min, scheme, level, config=DEFAULT_CONFIG, levy_side=LevySide.PLATFORM) -> Equilibrium:
    return solve(params, scheme_policy(scheme, w_min, level, levy_side), config)


@dataclass
class SweepTable:
    """Equilibria over an increasing grid of charge levels.

    ``rows[i]`` is ``None`` when the solve at ``levels[i]`` failed; the
    error message is kept in ``errors[i]``.
    """

    scheme: str
    w_min: Optional[float]
    levels: list
    rows: list
    params: ModelParams
    config: SolverConfig = DEFAULT_CONFIG
    levy_side: LevySide = LevySide.PLATFORM
    errors: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(zip(self.levels, self.rows))

    @property
    def converged(self) -> bool:
        return not self.errors

    def column(self, name: str) -> np.ndarray:
        """Outcome attribute across rows (NaN for failed rows)."""
        return np.array([getattr(r.outcome, name) if r is not None else np.nan for r in self.rows])

    def elasticities(self):
        """Absolute passenger price and driver wage elasticities per row."""
        pax, drv = [], []
        for r in self.rows:
            o = r.outcome
            # elasticity with respect to the price the passenger actually pays
            paid = o.cost - self.params.alpha * o.tp_min - self.params.beta * o.t0_min
            pax.append(passenger_price_elasticity(self.params, o.lam, paid))
            drv.append(driver_wage_elasticity(self.params, o.n_drivers, o.wage_hr))
        return np.array(pax), np.array(drv)


def _solve_row(args):
    params, w_min, scheme, level, config, levy_side = args
    try:
        return solve_scheme(params, w_min, scheme, level, config, levy_side), None
    except ModelError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def resolve_workers(workers: Optional[int] = None) -> int:
    """Requested worker count, capped by the ``TNC_POLICY_WORKERS`` variable."""
    cap = os.environ.get(WORKERS_ENV)
    n = workers if workers is not None else 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def sweep(
    params: ModelParams,
    w_min: Optional[float],
    scheme: str,
    grid: Optional[Iterable[float]] = None,
    config: SolverConfig = DEFAULT_CONFIG,
    levy_side: LevySide = LevySide.PLATFORM,
    workers: Optional[int] = None,
) -> SweepTable:
    """Solve the regulated problem at every charge level of ``grid``."""
    levels = [float(x) for x in (default_grid(scheme) if grid is None else grid)]
    if not levels:
        raise ValueError("sweep grid is empty")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("sweep grid must be strictly increasing")
    scheme_policy(scheme, w_min, 0.0)  # validates scheme and w_min early
    jobs = [(params, w_min, scheme, level, config, levy_side) for level in levels]
    n_workers = resolve_workers(workers)
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_solve_row, jobs))
    else:
        results = [_solve_row(job) for job in jobs]
    rows = [r for r, _ in results]
    errors = {i: err for i, (_, err) in enumerate(results) if err is not None}
    for i, err in errors.items():
        log.warning("sweep row %d (level %g) failed: %s", i, levels[i], err)
    return SweepTable(scheme, w_min, levels, rows, params, config, levy_side, errors)


# --- thresholds ------------------------------------------------------------


def detect_threshold(table: SweepTable, rel_tol: float = 1e-3, tax_tol: float = 1e-6) -> float:
    """Largest charge keeping the fleet on the full-hire plateau.

    The plateau is ``N0 F_d(w_min)``; a row is on it when its fleet is within
    ``rel_tol`` (relative) of that value. The last on-plateau grid level is
    refined by bisection with fresh solves until the bracket is narrower
    than ``tax_tol``.
    """
    if table.w_min is None:
        raise ThresholdNotFound("no wage floor, hence no full-hire plateau")
    plateau = hire_cap(table.params, table.w_min)

    def on_plateau(n):
        return abs(n - plateau) <= rel_tol * plateau

    flags = [r is not None and on_plateau(r.outcome.n_drivers) for r in table.rows]
    if not flags[0]:
        raise ThresholdNotFound("fleet is off the plateau already at the first grid level")
    if all(flags):
        raise ThresholdNotFound("fleet stays on the plateau over the whole grid")
    last = flags.index(False) - 1
    lo, hi = table.levels[last], table.levels[last + 1]
    while hi - lo > tax_tol:
        mid = 0.5 * (lo + hi)
        eq = solve_scheme(table.params, table.w_min, table.scheme, mid, table.config, table.levy_side)
        if on_plateau(eq.outcome.n_drivers):
            lo = mid
        else:
            hi = mid
    return lo


def tilde_wage(params: ModelParams, config: SolverConfig = DEFAULT_CONFIG) -> float:
    """Wage the platform pays absent any regulation ($/hr)."""
    return solve_unregulated(params, config).outcome.wage_hr


def full_hire_margin(params: ModelParams, w: float, config: SolverConfig = DEFAULT_CONFIG) -> float:
    """Marginal hourly revenue of a driver at the full-hire fleet, minus ``w``.

    Positive means the platform still gains from hiring at wage floor ``w``.
    """
    n_cap = hire_cap(params, w)
    return MIN_PER_HR * revenue_gamma_slope(params, n_cap, 0.0, config) - w


def wage_threshold_w1(
    params: ModelParams,
    config: SolverConfig = DEFAULT_CONFIG,
    w_tilde: Optional[float] = None,
    span: float = 30.0,
) -> float:
    """Highest wage floor at which hiring every willing driver stays optimal."""
    if w_tilde is None:
        w_tilde = tilde_wage(params, config)
    lo, hi = w_tilde, w_tilde + span
    f_lo, f_hi = full_hire_margin(params, lo, config), full_hire_margin(params, hi, config)
    if f_lo <= 0 or f_hi >= 0:
        raise ThresholdNotFound(
            f"full-hire margin does not change sign on [{lo:.4g}, {hi:.4g}] ({f_lo:.4g}, {f_hi:.4g})"
        )
    return float(optimize.brentq(lambda w: full_hire_margin(params, w, config), lo, hi, xtol=1e-10))


# --- revenue matching and scheme comparison --------------------------------


def match_revenue(
    params: ModelParams,
    w_min: Optional[float],
    target_tax_hr: float,
    scheme: str,
    config: SolverConfig = DEFAULT_CONFIG,
    upper: Optional[float] = None,
    tol: float = 0.1,
    n_scan: int = 41,
) -> float:
    """Charge level of ``scheme`` raising ``target_tax_hr`` dollars per hour.

    Revenue is scanned on ``n_scan`` levels in ``[0, upper]`` to bracket the
    target, then bisected until within ``tol`` $/hr. If the scan reveals a
    non-monotone revenue curve the first crossing is used and a warning
    issued.
    """
    if target_tax_hr < 0:
        raise RevenueRangeError("revenue target must be non-negative", 0.0)
    if target_tax_hr <= tol:
        return 0.0
    if upper is None:
        upper = DEFAULT_GRIDS[scheme][1]

    def revenue(level):
        return solve_scheme(params, w_min, scheme, level, config).outcome.tax_hr

    levels = np.linspace(0.0, upper, n_scan)
    revenues = np.array([revenue(x) for x in levels])
    if np.any(np.diff(revenues) < 0):
        warnings.warn(f"{scheme} revenue is not monotone on [0, {upper}]; using first crossing", RuntimeWarning)
    above = np.nonzero(revenues >= target_tax_hr)[0]
    if above.size == 0:
        raise RevenueRangeError(
            f"{scheme} charges up to {upper} raise at most {revenues.max():.2f} $/hr < {target_tax_hr:.2f}",
            float(revenues.max()),
        )
    j = int(above[0])
    lo, hi = levels[j - 1], levels[j]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = revenue(mid)
        if abs(r - target_tax_hr) < tol:
            return float(mid)
        if r < target_tax_hr:
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


@dataclass
class ComparisonRow:
    """Trip-based charge versus the time-based charge raising the same revenue."""

    target_tax_hr: float
    p_trip: float
    p_time: float
    trip: Equilibrium
    time: Equilibrium
    flags: dict

    @property
    def time_dominates(self) -> bool:
        return all(self.flags.values())


def pareto_flags(trip: Equilibrium, time: Equilibrium, rel_tol: float = 1e-6) -> dict:
    t, h = trip.outcome, time.outcome

    def same(a, b):
        return abs(a - b) <= rel_tol * max(abs(a), abs(b), 1.0)

    return {
        "lam_higher": h.lam > t.lam,
        "cost_lower": h.cost < t.cost,
        "profit_higher": h.profit_hr > t.profit_hr,
        "n_equal": same(h.n_drivers, t.n_drivers),
        "wage_equal": same(h.wage_hr, t.wage_hr),
    }


def pareto_compare(
    params: ModelParams,
    w_min: Optional[float],
    p_t: float,
    config: SolverConfig = DEFAULT_CONFIG,
    tol: float = 0.1,
) -> ComparisonRow:
    """Solve a trip charge, then the time charge matching its tax revenue."""
    trip = solve_scheme(params, w_min, TRIP, p_t, config)
    target = trip.outcome.tax_hr
    upper = DEFAULT_GRIDS[TIME][1]
    while True:
        try:
            p_h = match_revenue(params, w_min, target, TIME, config, upper=upper, tol=tol)
            break
        except RevenueRangeError:
            if upper >= 8 * DEFAULT_GRIDS[TIME][1]:
                raise
            upper *= 2.0
    time = solve_scheme(params, w_min, TIME, p_h, config)
    return ComparisonRow(target, p_t, p_h, trip, time, pareto_flags(trip, time))


def incidence_report(
    params: ModelParams,
    w_min: Optional[float],
    p_t: float = 0.0,
    p_h: float = 0.0,
    config: SolverConfig = DEFAULT_CONFIG,
) -> dict:
    """Percentage changes against the uncharged baseline at the same wage floor."""
    base = solve(params, Policy(w_min=w_min), config).outcome
    taxed = solve(params, Policy(w_min=w_min, p_trip=p_t, p_time=p_h), config).outcome

    def pct(a, b):
        return 100.0 * (b - a) / a

    return {
        "cost_pct": pct(base.cost, taxed.cost),
        "wage_pct": pct(base.wage_hr, taxed.wage_hr),
        "profit_pct": pct(base.profit_hr, taxed.profit_hr),
        "lam_pct": pct(base.lam, taxed.lam),
        "n_drivers_pct": pct(base.n_drivers, taxed.n_drivers),
        "tax_hr": taxed.tax_hr,
    }


# --- sensitivity -------------------------------------------------------------

DEFAULT_PERTURBATIONS = (
    ("lambda0", -0.05),
    ("lambda0", 0.05),
    ("n0", -0.05),
    ("n0", 0.05),
    ("alpha", -0.05),
    ("alpha", 0.05),
)


@dataclass
class SensitivityResult:
    nominal: SweepTable
    variants: dict
    flags: dict


def sensitivity_sweep(
    params: ModelParams,
    w_min: Optional[float],
    perturbations: Sequence = DEFAULT_PERTURBATIONS,
    grid: Optional[Iterable[float]] = None,
    scheme: str = TIME,
    config: SolverConfig = DEFAULT_CONFIG,
    workers: Optional[int] = None,
) -> SensitivityResult:
    """Re-run a charge sweep with single parameters scaled by ``1 + delta``.

    ``flags`` records the qualitative facts checked for each perturbed
    parameter: whether the plateau profit moves in the stated direction and,
    for ``lambda0``, whether the uncharged fleet is unaffected.
    """
    grid = list(default_grid(scheme) if grid is None else grid)
    nominal = sweep(params, w_min, scheme, grid, config, workers=workers)
    variants = {}
    for name, delta in perturbations:
        variants[(name, float(delta))] = sweep(params.perturbed(name, delta), w_min, scheme, grid, config, workers=workers)

    flags = {}
    base_profit = nominal.rows[0].outcome.profit_hr
    base_n = nominal.rows[0].outcome.n_drivers
    for name in dict.fromkeys(n for n, _ in perturbations):
        deltas = sorted(d for (n, d) in variants if n == name)
        # profit at the first grid level, ordered by the perturbation
        profits = [variants[(name, d)].rows[0].outcome.profit_hr for d in deltas]
        series = sorted(list(zip(deltas, profits)) + [(0.0, base_profit)])
        diffs = np.diff([p for _, p in series])
        flags[f"profit_increasing_in_{name}"] = bool(np.all(diffs > 0))
        flags[f"profit_decreasing_in_{name}"] = bool(np.all(diffs < 0))
        if name == "lambda0":
            fleets = [variants[(name, d)].rows[0].outcome.n_drivers for d in deltas]
            flags["plateau_fleet_invariant_to_lambda0"] = all(abs(n - base_n) <= 1e-9 * base_n for n in fleets)
    return SensitivityResult(nominal, variants, flags)
