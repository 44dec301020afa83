"""Command-line entry point: ``tnc-policy <command> [options]``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import (
    detect_threshold,
    pareto_compare,
    resolve_workers,
    sensitivity_sweep,
    sweep,
    tilde_wage,
    wage_threshold_w1,
)
from .calibration import calibrate
from .config import Grid, RunSpec, params_to_config, parse_config
from .errors import CalibrationError, ConfigError, ModelError, RevenueRangeError, ThresholdNotFound
from .model import Policy
from .solver import solve
from .tables import emit_table, equilibrium_row, sweep_rows, write_json

log = logging.getLogger("tnc_policy")

COMMANDS = ("calibrate", "solve", "sweep", "compare", "thresholds", "sensitivity")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CALIBRATION = 4
EXIT_SOLVER = 5
EXIT_THRESHOLD = 6
EXIT_REVENUE = 7
EXIT_IO = 8
EXIT_PARTIAL = 9

EXIT_CODES_HELP = f"""\
exit codes:
  {EXIT_OK}  success
  {EXIT_USAGE}  invalid command line
  {EXIT_CONFIG}  invalid configuration (unknown key, wrong unit, bad value)
  {EXIT_CALIBRATION}  calibration failed or did not reproduce the targets within 1%
  {EXIT_SOLVER}  solver failure (domain error, infeasible fleet)
  {EXIT_THRESHOLD}  a regime threshold was not found in the searched range
  {EXIT_REVENUE}  revenue target not reachable by the time-based charge
  {EXIT_IO}  output could not be written
  {EXIT_PARTIAL}  sweep finished but some grid points failed (see error.json)

environment:
  TNC_POLICY_WORKERS  upper bound on worker processes used by sweeps
"""

COMPARE_COLUMNS = (
    "target_tax_hr",
    "p_trip",
    "p_time",
    "lambda_trip",
    "lambda_time",
    "cost_trip",
    "cost_time",
    "profit_trip",
    "profit_time",
    "n_drivers_trip",
    "n_drivers_time",
    "wage_trip",
    "wage_time",
    "tax_trip",
    "tax_time",
    "lam_higher",
    "cost_lower",
    "profit_higher",
    "n_equal",
    "wage_equal",
)


class CommandFailed(Exception):
    """Carries an exit code and an error record out of a command."""

    def __init__(self, code, record):
        super().__init__(record.get("message", ""))
        self.code = code
        self.record = record


def _policy_with_tax(policy: Policy, scheme: str, tax) -> Policy:
    if tax is None:
        return policy
    if scheme == "trip":
        return replace(policy, p_trip=tax, p_time=0.0)
    return replace(policy, p_time=tax, p_trip=0.0)


def apply_overrides(spec: RunSpec, args) -> dict:
    """Fold scalar CLI flags into ``spec``; return what was overridden."""
    over = {}
    if args.w_min is not None:
        spec.policy = replace(spec.policy, w_min=args.w_min)
        over["w_min_usd_per_hr"] = args.w_min
    if args.scheme is not None:
        spec.scheme = spec.sensitivity_scheme = args.scheme
        over["scheme"] = args.scheme
    if args.tax is not None:
        scheme = args.scheme or ("time" if spec.policy.p_time > 0 else "trip")
        spec.policy = _policy_with_tax(spec.policy, scheme, args.tax)
        over["p_time_usd_per_hr" if scheme == "time" else "p_trip_usd_per_trip"] = args.tax
    if args.grid is not None:
        grid = Grid.parse(args.grid)
        spec.grid = spec.sensitivity_grid = spec.compare_levels = grid
        over["grid"] = args.grid
    if args.workers is not None:
        spec.workers = args.workers
        over["workers"] = args.workers
    if args.format is not None:
        spec.out_format = args.format
        over["format"] = args.format
    if args.out is not None:
        spec.out_dir = args.out
        over["out"] = args.out
    return over


# --- commands ------------------------------------------------------------------


def cmd_calibrate(spec: RunSpec, out: Path, args):
    if spec.calibration is None:
        raise ConfigError("calibrate needs a 'calibration' section with targets and base")
    report = calibrate(spec.calibration.targets, spec.calibration.base, spec.solver)
    p = report.fitted
    doc = {
        "params": params_to_config(p),
        "fit": {"eps_per_usd": p.eps, "c_out_usd": p.c_out, "sigma_hr_per_usd": p.sigma, "w_res_usd_per_hr": p.w_res},
        "residuals": report.residuals,
        "match": report.match,
        "tolerance": report.tolerance,
        "flagged": report.flagged,
    }
    files = [write_json(doc, out / "calibration.json")]
    if not report.ok:
        raise CommandFailed(
            EXIT_CALIBRATION,
            {"error": "CalibrationMismatch", "message": f"targets missed by more than 1%: {report.flagged}", "files": files},
        )
    return files


def cmd_solve(spec: RunSpec, out: Path, args):
    params = spec.resolve_params()
    eq = solve(params, spec.policy, spec.solver)
    level = spec.policy.p_trip or spec.policy.p_time
    files = [emit_table([equilibrium_row(level, eq)], out / "solve", spec.out_format)]
    info = {
        "regime": eq.regime.value,
        "active_constraints": sorted(eq.active_constraints),
        "iterations": eq.iterations,
        "residual": eq.residual,
        "diagnostics": list(eq.diagnostics),
        "v_mph": eq.outcome.v_mph,
    }
    files.append(write_json(info, out / "solve_info.json"))
    return files


def _raise_on_failed_rows(tables, files):
    failures = {}
    for name, table in tables.items():
        for i, err in table.errors.items():
            failures.setdefault(name, []).append({"tax_level": table.levels[i], "error": err})
    if failures:
        raise CommandFailed(
            EXIT_PARTIAL,
            {"error": "PartialSweep", "message": "some grid points failed", "failures": failures, "files": files},
        )


def cmd_sweep(spec: RunSpec, out: Path, args):
    params = spec.resolve_params()
    grid = spec.grid.levels() if spec.grid is not None else None
    table = sweep(params, spec.policy.w_min, spec.scheme, grid, spec.solver, spec.policy.levy_side, spec.workers)
    files = [emit_table(sweep_rows(table), out / f"sweep_{spec.scheme}", spec.out_format)]
    _raise_on_failed_rows({spec.scheme: table}, files)
    return files


def cmd_compare(spec: RunSpec, out: Path, args):
    params = spec.resolve_params()
    levels = [args.tax] if args.tax is not None else spec.compare_levels.levels()
    rows = []
    for p_t in levels:
        r = pareto_compare(params, spec.policy.w_min, p_t, spec.solver)
        t, h = r.trip.outcome, r.time.outcome
        row = {
            "target_tax_hr": r.target_tax_hr,
            "p_trip": r.p_trip,
            "p_time": r.p_time,
            "lambda_trip": t.lam,
            "lambda_time": h.lam,
            "cost_trip": t.cost,
            "cost_time": h.cost,
            "profit_trip": t.profit_hr,
            "profit_time": h.profit_hr,
            "n_drivers_trip": t.n_drivers,
            "n_drivers_time": h.n_drivers,
            "wage_trip": t.wage_hr,
            "wage_time": h.wage_hr,
            "tax_trip": t.tax_hr,
            "tax_time": h.tax_hr,
        }
        row.update({k: bool(v) for k, v in r.flags.items()})
        rows.append({k: (float(v) if not isinstance(v, bool) else v) for k, v in row.items()})
    return [emit_table(rows, out / "compare", spec.out_format, COMPARE_COLUMNS)]


def cmd_thresholds(spec: RunSpec, out: Path, args):
    params = spec.resolve_params()
    w_min = spec.policy.w_min
    doc = {}
    missing = {}
    w_t = tilde_wage(params, spec.solver)
    doc["w_tilde_usd_per_hr"] = w_t
    try:
        w1 = wage_threshold_w1(params, spec.solver, w_tilde=w_t)
    except ThresholdNotFound as exc:
        w1, missing["w1"] = None, str(exc)
    doc["w1_usd_per_hr"] = w1
    # the Pareto threshold w3 is identified with w1
    doc["w3_usd_per_hr"] = w1
    doc["w_min_usd_per_hr"] = w_min
    schemes = [args.scheme] if args.scheme else ["trip", "time"]
    keys = {"trip": "p_bar_trip_usd_per_trip", "time": "p_bar_time_usd_per_hr"}
    for scheme in schemes:
        grid = spec.grid.levels() if spec.grid is not None else None
        table = sweep(params, w_min, scheme, grid, spec.solver, spec.policy.levy_side, spec.workers)
        try:
            doc[keys[scheme]] = detect_threshold(table)
        except ThresholdNotFound as exc:
            doc[keys[scheme]], missing[scheme] = None, str(exc)
    files = [write_json(doc, out / "thresholds.json")]
    if missing:
        raise CommandFailed(EXIT_THRESHOLD, {"error": "ThresholdNotFound", "message": json.dumps(missing), "files": files})
    return files


def _variant_name(name, delta):
    sign = "plus" if delta >= 0 else "minus"
    return f"sensitivity_{name}_{sign}{abs(delta) * 100:g}pct"


def cmd_sensitivity(spec: RunSpec, out: Path, args):
    params = spec.resolve_params()
    grid = spec.sensitivity_grid.levels() if spec.sensitivity_grid is not None else None
    res = sensitivity_sweep(
        params, spec.policy.w_min, spec.perturbations, grid, spec.sensitivity_scheme, spec.solver, spec.workers
    )
    files = [emit_table(sweep_rows(res.nominal), out / "sensitivity_nominal", spec.out_format)]
    for (name, delta), table in res.variants.items():
        files.append(emit_table(sweep_rows(table), out / _variant_name(name, delta), spec.out_format))
    files.append(write_json({"scheme": spec.sensitivity_scheme, "flags": res.flags}, out / "sensitivity_flags.json"))
    tables = {"nominal": res.nominal}
    tables.update({_variant_name(n, d): t for (n, d), t in res.variants.items()})
    _raise_on_failed_rows(tables, files)
    return files


HANDLERS = {
    "calibrate": cmd_calibrate,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "thresholds": cmd_thresholds,
    "sensitivity": cmd_sensitivity,
}


# --- orchestration -------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _error_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, CalibrationError):
        return EXIT_CALIBRATION
    if isinstance(exc, ThresholdNotFound):
        return EXIT_THRESHOLD
    if isinstance(exc, RevenueRangeError):
        return EXIT_REVENUE
    return EXIT_SOLVER


def run_command(spec: RunSpec, command: str, args=None, overrides=None) -> int:
    """Run ``command`` and write its outputs, a manifest and, on failure, error.json."""
    if command not in HANDLERS:
        raise ValueError(f"unknown command {command!r}")
    args = args if args is not None else build_parser().parse_args([command])
    out = Path(spec.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    err_path = out / "error.json"
    if err_path.exists():
        err_path.unlink()

    start = time.perf_counter()
    files, code, record = [], EXIT_OK, None
    try:
        files = HANDLERS[command](spec, out, args)
    except CommandFailed as exc:
        code, record = exc.code, exc.record
        files = record.pop("files", [])
    except OSError as exc:
        code, record = EXIT_IO, {"error": type(exc).__name__, "message": str(exc)}
    except ModelError as exc:
        code, record = _error_code(exc), {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, RevenueRangeError):
            record["max_achievable_tax_hr"] = exc.max_achievable
        if isinstance(exc, CalibrationError):
            record["residuals"] = exc.residuals
    wall = time.perf_counter() - start

    if record is not None:
        record.update({"command": command, "exit_code": code})
        write_json(record, err_path)
        print(f"error: {record['message']}", file=sys.stderr)
    manifest = {
        "tool": "tnc-policy",
        "version": __version__,
        "command": command,
        "config": spec.source,
        "inputs": spec.raw,
        "overrides": overrides or {},
        "workers": resolve_workers(spec.workers),
        "exit_code": code,
        "outputs": [{"file": Path(f).name, "sha256": _sha256(Path(f))} for f in files],
        "wall_time_s": wall,
    }
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        return EXIT_IO
    for f in files:
        print(f)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tnc-policy",
        description="Ride-hailing market equilibrium under wage floors and congestion charges.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument(
        "--config",
        default="sf_default",
        help="JSON run config, or a bundled name (sf_default, sf_calibrated); default: %(default)s",
    )
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--format", choices=("csv", "json"), help="table format (overrides config)")
    parser.add_argument("--scheme", choices=("trip", "time"), help="congestion charge scheme")
    parser.add_argument("--w-min", type=float, help="wage floor in $/hr")
    parser.add_argument("--tax", type=float, help="charge level: $/trip (trip) or $/hr (time)")
    parser.add_argument("--grid", help="charge grid lo:hi:n")
    parser.add_argument("--workers", type=int, help="worker processes for sweeps")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = parse_config(args.config)
        overrides = apply_overrides(spec, args)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.out:
            try:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                record = {"error": type(exc).__name__, "message": str(exc), "command": args.command, "exit_code": EXIT_CONFIG}
                write_json(record, Path(args.out) / "error.json")
            except OSError:
                pass
        return EXIT_CONFIG
    return run_command(spec, args.command, args, overrides)


if __name__ == "__main__":
    sys.exit(main())
