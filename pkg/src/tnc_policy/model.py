"""Primitive functions of the ride-hailing market model.

Units used throughout:

* arrival rates ``lam`` in passengers per minute,
* fleet sizes in vehicles (= drivers),
* times in minutes, distances in miles, speeds in miles per hour,
* fares, payments and costs in dollars per trip,
* wages, profit and tax revenue in dollars per hour.

The only per-hour/per-minute conversions happen in :func:`driver_wage`,
:func:`market_outcome` and the pickup-time law (speed in miles per minute).

All evaluation functions accept numpy arrays as well as scalars so the
solver can scan whole grids of fleet sizes at once.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .errors import DomainError, InfeasibleFleetError, WildGooseChaseError

MIN_PER_HR = 60.0


@dataclass(frozen=True)
class ModelParams:
    """Exogenous constants of the market model.

    Attributes:
        lambda0: potential passenger arrival rate (1/min).
        n0: potential driver pool (vehicles).
        m_const: pickup-law constant (mile * sqrt(vehicle)).
        trip_len: average trip distance (miles).
        v_free: free-flow speed of the linear speed-density law (mph).
        kappa: speed lost per TNC vehicle (mph/vehicle).
        alpha: value of waiting time ($/min).
        beta: value of in-vehicle time ($/min).
        eps: demand logit sensitivity (1/$).
        c_out: cost of the outside option ($/trip).
        sigma: supply logit sensitivity (1/($/hr)).
        w_res: reservation wage of the supply logit ($/hr).
    """

    lambda0: float
    n0: float
    m_const: float
    trip_len: float
    v_free: float
    kappa: float
    alpha: float
    beta: float
    eps: float
    c_out: float
    sigma: float
    w_res: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise DomainError(f"{f.name} must be finite, got {value!r}")
            if f.name not in ("c_out", "w_res") and value <= 0:
                raise DomainError(f"{f.name} must be strictly positive, got {value!r}")
        if self.alpha < self.beta:
            raise DomainError(
                f"alpha ({self.alpha}) must be at least beta ({self.beta}): "
                "waiting time is valued above in-vehicle time"
            )
        if self.v_free - self.kappa * self.n0 <= 0:
            raise DomainError("v_free - kappa * n0 must be positive over the admissible fleet range")

    def perturbed(self, name: str, rel_delta: float) -> "ModelParams":
        """Copy with one field scaled by ``1 + rel_delta``."""
        if name not in {f.name for f in fields(self)}:
            raise KeyError(f"unknown model parameter {name!r}")
        return replace(self, **{name: getattr(self, name) * (1.0 + rel_delta)})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class LevySide(str, enum.Enum):
    """Who formally pays a congestion charge.

    ``passenger_or_driver`` adds a trip charge to the passenger's cost and a
    time charge to the driver's cost; ``platform`` bills the platform.
    Both lead to the same market outcome.
    """

    PASSENGER_OR_DRIVER = "passenger_or_driver"
    PLATFORM = "platform"


@dataclass(frozen=True)
class Policy:
    """Regulatory levers for one scenario.

    ``w_min`` is in $/hr (``None`` = unregulated), ``p_trip`` in $/trip and
    ``p_time`` in $/hr per vehicle.
    """

    w_min: Optional[float] = None
    p_trip: float = 0.0
    p_time: float = 0.0
    levy_side: LevySide = LevySide.PLATFORM

    def __post_init__(self):
        object.__setattr__(self, "levy_side", LevySide(self.levy_side))
        if self.p_trip < 0 or self.p_time < 0:
            raise DomainError("congestion charges must be non-negative")
        if self.p_trip > 0 and self.p_time > 0:
            raise DomainError("at most one of p_trip and p_time may be nonzero")
        if self.w_min is not None and not self.w_min > 0:
            raise DomainError(f"w_min must be positive, got {self.w_min!r}")


class Regime(str, enum.Enum):
    UNCONSTRAINED = "unconstrained"
    WAGE_FLOOR_FULL_HIRE = "wage_floor_full_hire"
    WAGE_FLOOR_PARTIAL_HIRE = "wage_floor_partial_hire"


@dataclass(frozen=True)
class MarketOutcome:
    """All endogenous quantities at one operating point.

    ``p_f`` is the fare the platform charges (it excludes a trip charge
    levied on passengers, includes one levied on the platform).
    ``wage_hr`` is the driver's hourly earning net of any time charge
    drivers pay.
    """

    lam: float
    n_drivers: float
    p_f: float
    p_d: float
    wage_hr: float
    v_mph: float
    t0_min: float
    tp_min: float
    cost: float
    occupancy: float
    profit_hr: float
    tax_hr: float
    policy: Policy = field(default_factory=Policy)
    diagnostics: tuple = ()

    @property
    def n_idle(self) -> float:
        return self.n_drivers - self.lam * self.t0_min


@dataclass(frozen=True)
class Equilibrium:
    """A market outcome tagged with solver diagnostics."""

    outcome: MarketOutcome
    regime: Regime
    active_constraints: frozenset
    iterations: int = 0
    residual: float = 0.0
    diagnostics: tuple = ()

    def __getattr__(self, name):
        # Convenience passthrough: eq.lam, eq.profit_hr, ...
        if name.startswith("__") or name == "outcome":
            raise AttributeError(name)
        return getattr(self.outcome, name)


# --- primitive functions -------------------------------------------------


def traffic_speed(params: ModelParams, n):
    """Linear speed-density law ``v = v_free - kappa * n`` (mph)."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise DomainError("fleet size must be non-negative")
    v = params.v_free - params.kappa * n
    if np.any(v <= 0):
        raise InfeasibleFleetError(f"traffic speed collapses (v = {np.min(v):.6g} mph)")
    return v[()] if v.ndim == 0 else v


def trip_duration(params: ModelParams, v):
    """In-vehicle trip time ``60 L / v`` in minutes for speed ``v`` in mph."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise InfeasibleFleetError("trip duration undefined for non-positive speed")
    t0 = MIN_PER_HR * params.trip_len / v
    return t0[()] if t0.ndim == 0 else t0


def pickup_time(params: ModelParams, n_idle, v):
    """Square-root pickup law ``M / (v_per_min * sqrt(n_idle))`` in minutes.

    The speed enters in miles per minute; with M = 41.18 this gives a
    five-minute pickup at 14 mph and about 1246.6 idle vehicles.
    """
    n_idle = np.asarray(n_idle, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(n_idle <= 0):
        raise WildGooseChaseError("no idle vehicles: pickup time is unbounded")
    if np.any(v <= 0):
        raise InfeasibleFleetError("pickup time undefined for non-positive speed")
    tp = params.m_const / ((v / MIN_PER_HR) * np.sqrt(n_idle))
    return tp[()] if tp.ndim == 0 else tp


def generalized_cost(params: ModelParams, tp, t0, p_f):
    """Passenger cost: waiting time, in-vehicle time and money, in $/trip."""
    return params.alpha * tp + params.beta * t0 + p_f


def demand(params: ModelParams, c):
    """Logit demand: passengers per minute choosing a TNC ride at cost ``c``."""
    c = np.asarray(c, dtype=float)
    # 1 / (1 + exp(eps (c - c_out))) written to stay finite for large |c|
    share = 0.5 * (1.0 - np.tanh(0.5 * params.eps * (c - params.c_out)))
    lam = params.lambda0 * share
    return lam[()] if lam.ndim == 0 else lam


def demand_inverse(params: ModelParams, lam):
    """Cost at which the logit demand equals ``lam``; needs 0 < lam < lambda0."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0) or np.any(lam >= params.lambda0):
        raise DomainError(f"arrival rate must lie in (0, {params.lambda0})")
    c = params.c_out + np.log((params.lambda0 - lam) / lam) / params.eps
    return c[()] if c.ndim == 0 else c


def supply(params: ModelParams, w):
    """Logit supply: drivers joining at hourly wage ``w``."""
    w = np.asarray(w, dtype=float)
    share = 0.5 * (1.0 + np.tanh(0.5 * params.sigma * (w - params.w_res)))
    n = params.n0 * share
    return n[()] if n.ndim == 0 else n


def supply_inverse(params: ModelParams, n):
    """Hourly wage that attracts exactly ``n`` drivers; needs 0 < n < n0."""
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0) or np.any(n >= params.n0):
        raise DomainError(f"fleet size must lie in (0, {params.n0})")
    w = params.w_res + np.log(n / (params.n0 - n)) / params.sigma
    return w[()] if w.ndim == 0 else w


def driver_wage(lam, p_d, n):
    """Average hourly earning ``60 lam p_d / n``."""
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0):
        raise DomainError("fleet size must be positive")
    w = MIN_PER_HR * np.asarray(lam, dtype=float) * p_d / n
    return w[()] if w.ndim == 0 else w


def occupancy(params: ModelParams, lam, n):
    """Share of the fleet carrying a passenger, ``lam t0(n) / n``."""
    t0 = trip_duration(params, traffic_speed(params, n))
    busy = np.asarray(lam, dtype=float) * t0
    if np.any(busy >= n) or np.any(np.asarray(n) <= 0):
        raise DomainError("occupancy needs lam * t0 < n")
    occ = busy / n
    return occ[()] if np.ndim(occ) == 0 else occ


def passenger_price_elasticity(params: ModelParams, lam, p_f):
    """|d lam / d p_f| * p_f / lam with waiting time held fixed."""
    if not 0 < lam < params.lambda0:
        raise DomainError(f"arrival rate must lie in (0, {params.lambda0})")
    return params.eps * p_f * (1.0 - lam / params.lambda0)


def driver_wage_elasticity(params: ModelParams, n, w):
    """d N / d w * w / N for the logit supply."""
    if not 0 < n < params.n0:
        raise DomainError(f"fleet size must lie in (0, {params.n0})")
    return params.sigma * w * (1.0 - n / params.n0)


# --- assembly of an operating point ---------------------------------------


def fleet_kinematics(params: ModelParams, lam, n):
    """Speed, trip time, idle fleet and pickup time for decision ``(lam, n)``."""
    v = traffic_speed(params, n)
    t0 = trip_duration(params, v)
    n_idle = n - lam * t0
    tp = pickup_time(params, n_idle, v)
    return v, t0, n_idle, tp


def market_outcome(
    params: ModelParams,
    lam: float,
    n: float,
    policy: Policy = Policy(),
    wage: Optional[float] = None,
) -> MarketOutcome:
    """Recover prices and every reported quantity from the pair ``(lam, n)``.

    The net driver wage defaults to ``max(w_min, supply_inverse(n))``; pass
    ``wage`` to override it. Charges are booked according to
    ``policy.levy_side`` so both formulations give identical quantities,
    profit and tax revenue and differ only in the posted fare or per-trip
    payment.
    """
    if not 0 < lam < params.lambda0:
        raise DomainError(f"arrival rate must lie in (0, {params.lambda0}), got {lam!r}")
    v, t0, n_idle, tp = fleet_kinematics(params, lam, n)
    cost = float(demand_inverse(params, lam))
    fare_net = cost - params.alpha * tp - params.beta * t0 - policy.p_trip

    if wage is None:
        wage = supply_inverse(params, n) if n < params.n0 else math.inf
        if policy.w_min is not None:
            wage = max(wage, policy.w_min)
    wage = float(wage)

    on_platform = policy.levy_side is LevySide.PLATFORM
    gross_hourly = wage if on_platform else wage + policy.p_time
    p_d = gross_hourly * n / (MIN_PER_HR * lam)
    p_f = fare_net + policy.p_trip if on_platform else fare_net

    trip_tax_hr = MIN_PER_HR * lam * policy.p_trip
    time_tax_hr = n * policy.p_time
    profit = MIN_PER_HR * lam * (p_f - p_d)
    if on_platform:
        profit -= trip_tax_hr + time_tax_hr

    diagnostics = ()
    if fare_net < 0:
        diagnostics = ("negative_fare",)
    return MarketOutcome(
        lam=float(lam),
        n_drivers=float(n),
        p_f=float(p_f),
        p_d=float(p_d),
        wage_hr=wage,
        v_mph=float(v),
        t0_min=float(t0),
        tp_min=float(tp),
        cost=cost,
        occupancy=float(lam * t0 / n),
        profit_hr=float(profit),
        tax_hr=float(trip_tax_hr + time_tax_hr),
        policy=policy,
        diagnostics=diagnostics,
    )
