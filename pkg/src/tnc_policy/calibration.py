"""Reverse-engineering of model parameters from observed market data.

The pipeline follows the San Francisco case study:

1. the pickup-law constant from an observed pickup time, speed and idle fleet;
2. the linear speed-density law from two observations (or one observation
   and a known slope);
3. the four logit parameters, chosen so that the observed operating point
   is the unregulated profit maximum.

Step 3 has closed forms once the fare-revenue slope in ``N`` is known:
the inner first-order condition pins ``eps``, demand passing through the
observed cost pins ``c_out``, the outer first-order condition pins
``sigma`` and supply passing through the observed wage pins ``w_res``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .errors import CalibrationError, DomainError
from .model import (
    MIN_PER_HR,
    ModelParams,
    demand,
    fleet_kinematics,
    supply,
)
from .solver import DEFAULT_CONFIG, SolverConfig, inner_foc, revenue_gamma_slope, solve_unregulated


@dataclass(frozen=True)
class CalibrationTargets:
    """Observed market data the unregulated optimum must reproduce.

    Rates per minute, wages per hour, times in minutes, speed in mph.
    ``tnc_share`` and ``driver_share`` are the TNC shares of potential
    passengers and potential drivers at the observed point.
    """

    lam_star: float = 157.4
    n_star: float = 3000.0
    p_f_star: float = 11.8
    w_star: float = 21.55
    tp_star: float = 5.0
    v_star: float = 14.0
    tnc_share: float = 0.15
    driver_share: float = 0.3

    def __post_init__(self):
        for name in ("lam_star", "n_star", "p_f_star", "w_star", "tp_star", "v_star"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        for name in ("tnc_share", "driver_share"):
            if not 0 < getattr(self, name) < 1:
                raise DomainError(f"{name} must lie in (0, 1)")


@dataclass(frozen=True)
class CalibrationBase:
    """Everything except the logit parameters."""

    lambda0: float
    n0: float
    m_const: float
    trip_len: float
    v_free: float
    kappa: float
    alpha: float
    beta: float


class LogitFit(NamedTuple):
    eps: float
    c_out: float
    sigma: float
    w_res: float


@dataclass
class CalibrationReport:
    fitted: ModelParams
    residuals: dict = field(default_factory=dict)
    match: dict = field(default_factory=dict)
    flagged: list = field(default_factory=list)
    tolerance: float = 0.01

    @property
    def ok(self) -> bool:
        return not self.flagged


def derive_m(v_mph: float, tp_min: float, n_idle: float) -> float:
    """Pickup-law constant reproducing pickup time ``tp_min`` at the given point."""
    if v_mph <= 0 or n_idle <= 0 or tp_min < 0:
        raise DomainError("derive_m needs positive speed and idle fleet")
    return (v_mph / MIN_PER_HR) * tp_min * math.sqrt(n_idle)


def fit_greenshield(pt1, pt2) -> tuple[float, float]:
    """Exact line ``v = v_free - kappa n`` through two ``(n, v)`` points."""
    (n1, v1), (n2, v2) = pt1, pt2
    if n1 == n2:
        raise DomainError("Greenshield fit needs two distinct fleet sizes")
    kappa = (v1 - v2) / (n2 - n1)
    v_free = v1 + kappa * n1
    return v_free, kappa


def anchor_greenshield(n: float, v: float, kappa: float) -> tuple[float, float]:
    """Line with slope ``kappa`` through the observed point ``(n, v)``."""
    return v + kappa * n, kappa


def build_base(
    targets: CalibrationTargets,
    trip_len: float,
    alpha: float,
    beta: float,
    *,
    kappa: Optional[float] = None,
    greenshield_points=None,
    v_free: Optional[float] = None,
    lambda0: Optional[float] = None,
    n0: Optional[float] = None,
    m_const: Optional[float] = None,
) -> CalibrationBase:
    """Assemble the non-logit parameters from data anchors.

    The speed law comes from, in order of precedence: explicit ``v_free`` and
    ``kappa``; two ``greenshield_points``; or ``kappa`` anchored at the
    observed ``(n_star, v_star)``. Pool sizes default to observed volume
    divided by the TNC share; ``m_const`` defaults to the value implied by
    the observed pickup time.
    """
    if v_free is not None and kappa is not None:
        speed_law = (v_free, kappa)
    elif greenshield_points is not None:
        speed_law = fit_greenshield(*greenshield_points)
    elif kappa is not None:
        speed_law = anchor_greenshield(targets.n_star, targets.v_star, kappa)
    else:
        raise DomainError("speed law underdetermined: give kappa, greenshield_points, or v_free and kappa")
    if m_const is None:
        t0_obs = MIN_PER_HR * trip_len / targets.v_star
        n_idle = targets.n_star - targets.lam_star * t0_obs
        m_const = derive_m(targets.v_star, targets.tp_star, n_idle)
    return CalibrationBase(
        lambda0=lambda0 if lambda0 is not None else targets.lam_star / targets.tnc_share,
        n0=n0 if n0 is not None else targets.n_star / targets.driver_share,
        m_const=m_const,
        trip_len=trip_len,
        v_free=speed_law[0],
        kappa=speed_law[1],
        alpha=alpha,
        beta=beta,
    )


def with_logit(base: CalibrationBase, eps, c_out, sigma=1.0, w_res=0.0) -> ModelParams:
    return ModelParams(
        lambda0=base.lambda0,
        n0=base.n0,
        m_const=base.m_const,
        trip_len=base.trip_len,
        v_free=base.v_free,
        kappa=base.kappa,
        alpha=base.alpha,
        beta=base.beta,
        eps=eps,
        c_out=c_out,
        sigma=sigma,
        w_res=w_res,
    )


def observed_cost(base: CalibrationBase, targets: CalibrationTargets) -> float:
    """Generalized cost at the observed point, with trip time at the observed speed."""
    t0_obs = MIN_PER_HR * base.trip_len / targets.v_star
    return base.alpha * targets.tp_star + base.beta * t0_obs + targets.p_f_star


def calibrate_logit(
    base: CalibrationBase,
    targets: CalibrationTargets,
    config: SolverConfig = DEFAULT_CONFIG,
    rel_step: float = 1e-5,
) -> LogitFit:
    """Logit parameters making ``(lam_star, n_star)`` the unregulated optimum."""
    lam, n = targets.lam_star, targets.n_star
    if not 0 < lam < base.lambda0 or not 0 < n < base.n0:
        raise CalibrationError("observed point lies outside the potential market")
    c_star = observed_cost(base, targets)
    _, t0, n_idle, tp = fleet_kinematics(with_logit(base, 1.0, 0.0), lam, n)
    if n_idle <= 0:
        raise CalibrationError("no idle vehicles at the observed point")

    # inner FOC with F_p^{-1}(lam / lambda0) = c_star:
    # c_star - a tp - b t0 - (1/eps) lambda0/(lambda0 - lam) - lam a t0 tp / (2 N_I) = 0
    margin = c_star - base.alpha * tp - base.beta * t0 - lam * base.alpha * t0 * tp / (2.0 * n_idle)
    inv_eps = margin * (base.lambda0 - lam) / base.lambda0
    if inv_eps <= 0:
        raise CalibrationError(
            "inner first-order condition has no positive eps", {"fare_margin": margin}
        )
    eps = 1.0 / inv_eps
    c_out = c_star - inv_eps * math.log(base.lambda0 / lam - 1.0)

    # outer FOC: 60 dGamma/dN = w + N d(F_d^{-1})/dN = w + 1 / (sigma (1 - N/N0))
    demand_side = with_logit(base, eps, c_out)
    marginal = MIN_PER_HR * revenue_gamma_slope(demand_side, n, 0.0, config, rel_step)
    gap = marginal - targets.w_star
    if gap <= 0:
        raise CalibrationError(
            "marginal driver revenue does not exceed the observed wage; no positive sigma",
            {"marginal_revenue_hr": marginal, "w_star": targets.w_star},
        )
    y = n / base.n0
    sigma = 1.0 / (gap * (1.0 - y))
    w_res = targets.w_star - math.log(y / (1.0 - y)) / sigma
    return LogitFit(float(eps), float(c_out), float(sigma), float(w_res))


def calibration_residuals(params: ModelParams, targets: CalibrationTargets, config=DEFAULT_CONFIG, rel_step=1e-5):
    """Residual of each calibrating condition at the observed point."""
    base = CalibrationBase(**{k: getattr(params, k) for k in CalibrationBase.__dataclass_fields__})
    c_star = observed_cost(base, targets)
    lam, n = targets.lam_star, targets.n_star
    y = n / params.n0
    marginal = MIN_PER_HR * revenue_gamma_slope(params, n, 0.0, config, rel_step)
    return {
        "demand_passthrough": float(demand(params, c_star) - lam),
        "supply_passthrough": float(supply(params, targets.w_star) - n),
        "inner_foc": inner_foc(params, n, lam, 0.0),
        "outer_foc": marginal - targets.w_star - 1.0 / (params.sigma * (1.0 - y)),
    }


def verify_calibration(
    params: ModelParams,
    targets: CalibrationTargets,
    config: SolverConfig = DEFAULT_CONFIG,
    tol: float = 0.01,
) -> CalibrationReport:
    """Solve the unregulated problem and compare it with the targets.

    Quantities whose relative error exceeds ``tol`` are listed in
    ``flagged``.
    """
    eq = solve_unregulated(params, config)
    t0_obs = MIN_PER_HR * params.trip_len / targets.v_star
    expected = {
        "lam": targets.lam_star,
        "n_drivers": targets.n_star,
        "p_f": targets.p_f_star,
        "wage_hr": targets.w_star,
        "tp_min": targets.tp_star,
        "t0_min": t0_obs,
        "occupancy": targets.lam_star * t0_obs / targets.n_star,
    }
    match = {}
    for key, target in expected.items():
        model = getattr(eq.outcome, key)
        match[key] = {"model": model, "target": target, "rel_error": abs(model - target) / abs(target)}
    flagged = [k for k, m in match.items() if m["rel_error"] > tol]
    try:
        residuals = calibration_residuals(params, targets, config)
    except DomainError as exc:
        residuals = {"error": str(exc)}
    return CalibrationReport(fitted=params, residuals=residuals, match=match, flagged=flagged, tolerance=tol)


def calibrate(
    targets: CalibrationTargets,
    base: CalibrationBase,
    config: SolverConfig = DEFAULT_CONFIG,
    tol: float = 0.01,
) -> CalibrationReport:
    """Fit the logit parameters and verify the fit by re-solving."""
    fit = calibrate_logit(base, targets, config)
    params = with_logit(base, *fit)
    return verify_calibration(params, targets, config, tol)


SAN_FRANCISCO = CalibrationTargets()


def san_francisco_base(targets: CalibrationTargets = SAN_FRANCISCO) -> CalibrationBase:
    """Non-logit anchors of the San Francisco case study.

    VOT of $70/hr in the vehicle and twice that while waiting; the speed law
    keeps the published slope of 0.0003 mph per vehicle and passes through
    the observed 14 mph at 3000 vehicles.
    """
    return build_base(
        targets,
        trip_len=2.6,
        alpha=140.0 / 60.0,
        beta=70.0 / 60.0,
        kappa=0.0003,
        lambda0=1049.0,
        n0=10000.0,
    )


def san_francisco_params(config: SolverConfig = DEFAULT_CONFIG) -> ModelParams:
    """Calibrated San Francisco parameters (runs the calibration)."""
    base = san_francisco_base()
    return with_logit(base, *calibrate_logit(base, SAN_FRANCISCO, config))
