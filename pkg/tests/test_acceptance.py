"""Acceptance suite: one test per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py``; a pass/fail line per
criterion is printed in the terminal summary.
"""
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from tnc_policy.analysis import (
    detect_threshold,
    incidence_report,
    pareto_compare,
    sweep,
    wage_threshold_w1,
)
from tnc_policy.calibration import calibrate
from tnc_policy.config import parse_config
from tnc_policy.model import (
    LevySide,
    ModelParams,
    Policy,
    demand,
    demand_inverse,
    driver_wage_elasticity,
    passenger_price_elasticity,
    supply,
    supply_inverse,
)
from tnc_policy.solver import hire_cap, inner_foc, lambda_bracket, solve, solve_min_wage, solve_unregulated

W = 26.35


@pytest.fixture(scope="module")
def trip_table(sf):
    return sweep(sf, W, "trip")


@pytest.fixture(scope="module")
def time_table(sf):
    return sweep(sf, W, "time")


def within(value, target, tol):
    return abs(value - target) <= tol


def check_all(checks):
    failed = [f"{name}: got {got!r}" for name, got, ok in checks if not ok]
    assert not failed, "; ".join(failed)


# --- 1 ----------------------------------------------------------------------------------


def test_criterion_01_calibration_reproduction():
    cal = parse_config("sf_default").calibration
    p = calibrate(cal.targets, cal.base).fitted
    check_all(
        [
            ("eps", p.eps, within(p.eps, 0.33, 0.01)),
            ("c_out", p.c_out, within(p.c_out, 31.18, 0.15)),
            ("sigma", p.sigma, within(p.sigma, 0.089, 0.002)),
            ("w_res", p.w_res, within(p.w_res, 31.04, 0.25)),
        ]
    )


# --- 2 ----------------------------------------------------------------------------------


def test_criterion_02_unregulated_baseline(default_params):
    o = solve_unregulated(default_params).outcome
    check_all(
        [
            ("lam", o.lam, within(o.lam, 157.4, 1.5)),
            ("n", o.n_drivers, within(o.n_drivers, 3000, 30)),
            ("p_f", o.p_f, within(o.p_f, 11.8, 0.15)),
            ("wage", o.wage_hr, within(o.wage_hr, 21.55, 0.25)),
        ]
    )


# --- 3 ----------------------------------------------------------------------------------


def test_criterion_03_regulated_baseline(sf):
    o = solve_min_wage(sf, W).outcome
    check_all(
        [
            ("lam", o.lam, within(o.lam, 208.46, 2)),
            ("n", o.n_drivers, within(o.n_drivers, 3968, 20)),
            ("p_f", o.p_f, within(o.p_f, 11.628, 0.1)),
            ("p_d", o.p_d, within(o.p_d, 8.360, 0.1)),
            ("profit", o.profit_hr, within(o.profit_hr, 40878, 400)),
            ("cost", o.cost, within(o.cost, 35.43, 0.4)),
            ("pickup", o.tp_min, within(o.tp_min, 4.51, 0.1)),
            ("occupancy", o.occupancy, within(o.occupancy, 0.598, 0.02 * 0.598)),
        ]
    )


# --- 4 ----------------------------------------------------------------------------------


def test_criterion_04_trip_charge_incidence(sf):
    rep = incidence_report(sf, W, p_t=2.0)
    check_all(
        [
            ("cost_pct", rep["cost_pct"], within(rep["cost_pct"], 0.6, 0.1)),
            ("wage_pct", rep["wage_pct"], rep["wage_pct"] == 0.0),
            ("profit_pct", rep["profit_pct"], within(rep["profit_pct"], -59.5, 1.0)),
        ]
    )


# --- 5 ----------------------------------------------------------------------------------


def test_criterion_05_regime_thresholds(sf, trip_table, time_table):
    p_t = detect_threshold(trip_table)
    p_h = detect_threshold(time_table)
    w1 = wage_threshold_w1(sf)
    check_all(
        [
            ("p_bar_t", p_t, within(p_t, 2.1, 0.1)),
            ("p_bar_h", p_h, within(p_h, 6.2, 0.2)),
            ("w1", w1, within(w1, 29.20, 0.3)),
        ]
    )


# --- 6 ----------------------------------------------------------------------------------


def test_criterion_06_sweep_endpoints(trip_table, time_table):
    t, h = trip_table.rows[-1].outcome, time_table.rows[-1].outcome
    assert trip_table.levels[-1] == 3.0 and time_table.levels[-1] == 10.0
    check_all(
        [
            ("trip n", t.n_drivers, within(t.n_drivers, 3417, 30)),
            ("trip lam", t.lam, within(t.lam, 163.8, 2)),
            ("time n", h.n_drivers, within(h.n_drivers, 3245, 30)),
            ("time lam", h.lam, within(h.lam, 170.7, 2)),
            ("time tax", h.tax_hr, within(h.tax_hr, 32451, 300)),
        ]
    )


# --- 7 ----------------------------------------------------------------------------------


def test_criterion_07_flat_first_regime(sf, trip_table, time_table):
    n_hat = hire_cap(sf, W)
    checks = []
    for level, eq in trip_table:
        if level <= 2.0:
            dev = abs(eq.n_drivers - n_hat) / n_hat
            checks.append((f"trip N at {level:.3f}", dev, dev < 1e-3))
    lam_ref = time_table.rows[0].lam
    levels, profits = [], []
    for level, eq in time_table:
        if level <= 6.0:
            dn = abs(eq.n_drivers - n_hat) / n_hat
            dl = abs(eq.lam - lam_ref) / lam_ref
            checks.append((f"time N at {level:.3f}", dn, dn < 1e-3))
            checks.append((f"time lam at {level:.3f}", dl, dl < 1e-3))
            levels.append(level)
            profits.append(eq.profit_hr)
    slope = np.polyfit(levels, profits, 1)[0]
    checks.append(("profit slope", slope, abs(slope + n_hat) <= 0.005 * n_hat))
    check_all(checks)


# --- 8 ----------------------------------------------------------------------------------


def test_criterion_08_time_charge_pareto_improvement(sf):
    checks = []
    for p_t in np.linspace(0.2, 2.0, 10):
        row = pareto_compare(sf, W, float(p_t))
        for flag, ok in row.flags.items():
            checks.append((f"{flag} at p_t={p_t:.1f}", ok, ok))
        gap = abs(row.time.tax_hr - row.target_tax_hr)
        checks.append((f"revenue gap at p_t={p_t:.1f}", gap, gap < 0.1))
    check_all(checks)


# --- 9 ----------------------------------------------------------------------------------


def dual_profit(p: ModelParams, lam, n, w_min, p_t, p_h):
    """Hourly profit with the trip charge paid by passengers and the time charge by drivers."""
    v = p.v_free - p.kappa * n
    t0 = 60.0 * p.trip_len / v
    n_idle = n - lam * t0
    if n_idle <= 0 or not 0 < lam < p.lambda0:
        return -np.inf
    tp = p.m_const / (v / 60.0 * np.sqrt(n_idle))
    cost = p.c_out + np.log((p.lambda0 - lam) / lam) / p.eps
    fare = cost - p.alpha * tp - p.beta * t0 - p_t
    net_wage = max(w_min, p.w_res + np.log(n / (p.n0 - n)) / p.sigma)
    per_trip_payment = (net_wage + p_h) * n / (60.0 * lam)
    return 60.0 * lam * (fare - per_trip_payment)


def dual_best_lambda(p, n, w_min, p_t, p_h):
    t0 = 60.0 * p.trip_len / (p.v_free - p.kappa * n)
    hi = min(n / t0, p.lambda0) * (1 - 1e-12)
    res = optimize.minimize_scalar(
        lambda x: -dual_profit(p, x, n, w_min, p_t, p_h), bounds=(1e-9, hi), method="bounded", options={"xatol": 1e-10}
    )
    return res.x, -res.fun


def dual_solve(p, w_min, p_t=0.0, p_h=0.0):
    """Independent optimizer: bounded Brent in lam nested in scan + bounded Brent in N."""
    n_hat = p.n0 / (1.0 + np.exp(-p.sigma * (w_min - p.w_res)))

    def value(n):
        return dual_best_lambda(p, n, w_min, p_t, p_h)[1]

    candidates = [(value(n_hat), n_hat)]
    for lo, hi in ((1.0, n_hat), (n_hat, p.n0 * (1 - 1e-9))):
        grid = np.geomspace(lo, hi, 120)
        vals = [value(n) for n in grid]
        k = int(np.argmax(vals))
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        res = optimize.minimize_scalar(lambda n: -value(n), bounds=(a, b), method="bounded", options={"xatol": 1e-9})
        candidates.append((-res.fun, res.x))
    profit, n = max(candidates)
    lam, _ = dual_best_lambda(p, n, w_min, p_t, p_h)
    net_wage = max(w_min, p.w_res + np.log(n / (p.n0 - n)) / p.sigma)
    return {"lam": lam, "n": n, "profit": profit, "tax": 60 * lam * p_t + n * p_h, "wage": net_wage}


def test_criterion_09_levy_side_equivalence(sf):
    rng = np.random.default_rng(20240916)
    checks = []
    levels = [("trip", x) for x in rng.uniform(0.0, 3.0, 10)] + [("time", x) for x in rng.uniform(0.0, 10.0, 10)]
    for scheme, level in levels:
        kw = {"p_trip": level} if scheme == "trip" else {"p_time": level}
        eq = solve(sf, Policy(w_min=W, levy_side=LevySide.PLATFORM, **kw)).outcome
        ref = dual_solve(sf, W, p_t=kw.get("p_trip", 0.0), p_h=kw.get("p_time", 0.0))
        got = {"lam": eq.lam, "n": eq.n_drivers, "profit": eq.profit_hr, "tax": eq.tax_hr, "wage": eq.wage_hr}
        for key in got:
            rel = abs(got[key] - ref[key]) / max(abs(ref[key]), 1e-12)
            checks.append((f"{scheme} {level:.4f} {key}", (got[key], ref[key]), rel <= 1e-6))
    check_all(checks)


# --- 10 ---------------------------------------------------------------------------------


def grid_search(p: ModelParams, policy: Policy, size=400):
    """Best profit on a size x size (lam, N) grid and the variation across one cell."""
    n_max = min(p.n0, p.v_free / p.kappa)
    lam = np.linspace(0, p.lambda0, size + 2)[1:-1][:, None]
    n = np.linspace(0, n_max, size + 2)[1:-1][None, :]
    v = p.v_free - p.kappa * n
    t0 = 60.0 * p.trip_len / v
    n_idle = n - lam * t0
    ok = n_idle > 0
    tp = p.m_const / (v / 60.0 * np.sqrt(np.where(ok, n_idle, 1.0)))
    cost = p.c_out + np.log((p.lambda0 - lam) / lam) / p.eps
    wage = p.w_res + np.log(n / (p.n0 - n)) / p.sigma
    if policy.w_min is not None:
        wage = np.maximum(wage, policy.w_min)
    profit = 60.0 * lam * (cost - p.alpha * tp - p.beta * t0 - policy.p_trip) - n * (wage + policy.p_time)
    profit = np.where(ok, profit, -np.inf)
    i, j = np.unravel_index(np.argmax(profit), profit.shape)
    best = profit[i, j]
    block = profit[max(i - 1, 0) : i + 2, max(j - 1, 0) : j + 2]
    bound = np.max(np.abs(block[np.isfinite(block)] - best))
    return best, bound


def random_params(sf, rng):
    scale = lambda: rng.uniform(0.9, 1.1)  # noqa: E731
    return ModelParams(
        lambda0=sf.lambda0 * scale(),
        n0=sf.n0 * scale(),
        m_const=sf.m_const * scale(),
        trip_len=sf.trip_len,
        v_free=sf.v_free,
        kappa=sf.kappa,
        alpha=sf.alpha * scale(),
        beta=sf.beta,
        eps=sf.eps * scale(),
        c_out=sf.c_out * scale(),
        sigma=sf.sigma * scale(),
        w_res=sf.w_res * scale(),
    )


def test_criterion_10_brute_force_oracle(sf):
    rng = np.random.default_rng(7)
    checks = []
    for k in range(5):
        p = random_params(sf, rng)
        w_min = W * rng.uniform(0.95, 1.1)
        policies = {
            "unregulated": Policy(),
            "min_wage": Policy(w_min=w_min),
            "trip": Policy(w_min=w_min, p_trip=rng.uniform(0.5, 3.0)),
            "time": Policy(w_min=w_min, p_time=rng.uniform(1.0, 10.0)),
        }
        for name, pol in policies.items():
            profit = solve(p, pol).profit_hr
            best, bound = grid_search(p, pol)
            not_beaten = profit >= best - 1e-9 * abs(best)
            close = profit - best <= bound
            checks.append((f"set {k} {name}", (profit, best, bound), not_beaten and close))
    check_all(checks)


# --- 11 ---------------------------------------------------------------------------------


@settings(max_examples=150, deadline=None)
@given(
    lam_share=st.floats(1e-6, 1 - 1e-6),
    n_share=st.floats(1e-6, 1 - 1e-6),
    n=st.floats(300, 9000),
)
def test_criterion_11_numerical_hygiene(sf, lam_share, n_share, n):
    lam = lam_share * sf.lambda0
    assert demand(sf, demand_inverse(sf, lam)) == pytest.approx(lam, rel=1e-10)
    nd = n_share * sf.n0
    assert supply(sf, supply_inverse(sf, nd)) == pytest.approx(nd, rel=1e-10)

    # elasticities against central differences of the logit curves
    p_f = 0.3 * abs(demand_inverse(sf, lam)) + 1.0
    c = demand_inverse(sf, lam)
    h = 1e-5 * p_f
    d_lam = (demand(sf, c + h) - demand(sf, c - h)) / (2 * h)
    assert passenger_price_elasticity(sf, lam, p_f) == pytest.approx(-d_lam * p_f / lam, rel=1e-6)
    w = supply_inverse(sf, nd)
    hw = 1e-5 * max(abs(w), 1.0)
    d_n = (supply(sf, w + hw) - supply(sf, w - hw)) / (2 * hw)
    assert driver_wage_elasticity(sf, nd, w) == pytest.approx(d_n * w / nd, rel=1e-6)

    lo, hi = lambda_bracket(sf, n)
    grid = np.linspace(lo, hi, 52)[1:-1]
    foc = np.array([inner_foc(sf, n, x) for x in grid])
    assert np.all(np.diff(foc) < 0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
