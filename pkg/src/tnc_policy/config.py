"""Run configuration: JSON schema with unit-suffixed keys.

Every numeric key names its unit (``w_min_usd_per_hr``, ``lambda0_per_min``).
Values are converted to the internal units (rates per minute, wages per
hour, time values per minute) once, here. A key whose stem is known but
whose unit suffix is not accepted is rejected with a message naming the
expected unit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .calibration import CalibrationBase, CalibrationTargets, build_base, calibrate_logit, with_logit
from .errors import ConfigError, DomainError
from .model import LevySide, ModelParams, Policy
from .solver import SolverConfig

BUNDLED = ("sf_default", "sf_calibrated")


@dataclass(frozen=True)
class Field:
    name: str
    units: dict  # suffix -> factor into internal units
    required: bool = True
    kind: str = "number"

    def keys(self):
        return [f"{self.name}_{u}" if u else self.name for u in self.units]

    def describe(self):
        return " or ".join(self.keys())


def _f(name, *units, required=True, kind="number", factors=None):
    factors = factors or {}
    return Field(name, {u: factors.get(u, 1.0) for u in units}, required, kind)


PER_HR_TO_MIN = {"usd_per_hr": 1.0 / 60.0}

PARAM_FIELDS = (
    _f("lambda0", "per_min"),
    _f("n0", "drivers"),
    _f("m_const", ""),
    _f("trip_len", "mi"),
    _f("v_free", "mph"),
    _f("kappa", "mph_per_vehicle"),
    _f("alpha", "usd_per_min", "usd_per_hr", factors=PER_HR_TO_MIN),
    _f("beta", "usd_per_min", "usd_per_hr", factors=PER_HR_TO_MIN),
    _f("eps", "per_usd"),
    _f("c_out", "usd"),
    _f("sigma", "hr_per_usd"),
    _f("w_res", "usd_per_hr"),
)

POLICY_FIELDS = (
    _f("w_min", "usd_per_hr", required=False),
    _f("p_trip", "usd_per_trip", required=False),
    _f("p_time", "usd_per_hr", required=False),
    _f("levy_side", "", required=False, kind="str"),
)

TARGET_FIELDS = (
    _f("lam_star", "per_min"),
    _f("n_star", "drivers"),
    _f("p_f_star", "usd"),
    _f("w_star", "usd_per_hr"),
    _f("tp_star", "min"),
    _f("v_star", "mph"),
    _f("tnc_share", "", required=False),
    _f("driver_share", "", required=False),
)

BASE_FIELDS = (
    _f("trip_len", "mi"),
    _f("alpha", "usd_per_min", "usd_per_hr", factors=PER_HR_TO_MIN),
    _f("beta", "usd_per_min", "usd_per_hr", factors=PER_HR_TO_MIN),
    _f("kappa", "mph_per_vehicle", required=False),
    _f("v_free", "mph", required=False),
    _f("lambda0", "per_min", required=False),
    _f("n0", "drivers", required=False),
    _f("m_const", "", required=False),
    _f("greenshield_points", "n_mph", required=False, kind="points"),
)

SOLVER_FIELDS = (
    _f("foc_tol", "", required=False),
    _f("n_grid", "", required=False, kind="int"),
    _f("n_refine_tol", "drivers", required=False),
    _f("lam_bracket_margin", "", required=False),
)

SCHEME_FIELD = _f("scheme", "", required=False, kind="str")
GRID_FIELD = _f("grid", "", required=False, kind="grid")
WORKERS_FIELD = _f("workers", "", required=False, kind="int")
SWEEP_FIELDS = (SCHEME_FIELD, GRID_FIELD, WORKERS_FIELD)
COMPARE_FIELDS = (_f("p_trip_levels", "usd_per_trip", required=False, kind="grid"),)
SENSITIVITY_FIELDS = (
    SCHEME_FIELD,
    GRID_FIELD,
    _f("perturbations", "rel", required=False, kind="perturbations"),
)
OUTPUT_FIELDS = (_f("dir", "", required=False, kind="str"), _f("format", "", required=False, kind="str"))

SECTIONS = {
    "params": PARAM_FIELDS,
    "calibration": None,
    "policy": POLICY_FIELDS,
    "solver": SOLVER_FIELDS,
    "sweep": SWEEP_FIELDS,
    "compare": COMPARE_FIELDS,
    "sensitivity": SENSITIVITY_FIELDS,
    "output": OUTPUT_FIELDS,
}
CALIBRATION_SECTIONS = {"targets": TARGET_FIELDS, "base": BASE_FIELDS}


@dataclass(frozen=True)
class Grid:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 1 or (self.n > 1 and not self.hi > self.lo):
            raise ConfigError(f"grid needs n >= 1 and hi > lo, got {self.lo}:{self.hi}:{self.n}")

    def levels(self):
        return np.linspace(self.lo, self.hi, self.n).tolist()

    @classmethod
    def parse(cls, text: str) -> "Grid":
        try:
            lo, hi, n = text.split(":")
            return cls(float(lo), float(hi), int(n))
        except ValueError as exc:
            raise ConfigError(f"grid must look like lo:hi:n, got {text!r}") from exc

    def as_dict(self):
        return {"lo": self.lo, "hi": self.hi, "n": self.n}


@dataclass(frozen=True)
class CalibrationSpec:
    targets: CalibrationTargets
    base: CalibrationBase


@dataclass
class RunSpec:
    """Validated run configuration in internal units."""

    params: Optional[ModelParams] = None
    calibration: Optional[CalibrationSpec] = None
    policy: Policy = field(default_factory=Policy)
    solver: SolverConfig = field(default_factory=SolverConfig)
    scheme: str = "trip"
    grid: Optional[Grid] = None
    workers: Optional[int] = None
    compare_levels: Grid = Grid(0.2, 2.0, 10)
    sensitivity_scheme: str = "time"
    sensitivity_grid: Optional[Grid] = None
    perturbations: tuple = (
        ("lambda0", -0.05),
        ("lambda0", 0.05),
        ("n0", -0.05),
        ("n0", 0.05),
        ("alpha", -0.05),
        ("alpha", 0.05),
    )
    out_dir: str = "out"
    out_format: str = "csv"
    source: str = ""
    raw: dict = field(default_factory=dict)

    def resolve_params(self) -> ModelParams:
        """Explicit parameters, or the result of calibrating against the targets."""
        if self.params is not None:
            return self.params
        fit = calibrate_logit(self.calibration.base, self.calibration.targets, self.solver)
        return with_logit(self.calibration.base, *fit)


def _read_section(section: str, data, fields) -> dict:
    """Map unit-suffixed keys of ``data`` onto field names in internal units."""
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be an object")
    by_key = {}
    for fld in fields:
        for unit, factor in fld.units.items():
            by_key[f"{fld.name}_{unit}" if unit else fld.name] = (fld, factor)
    out = {}
    for key, value in data.items():
        if key not in by_key:
            stems = [f for f in fields if key.startswith(f.name + "_") or key == f.name]
            if stems:
                fld = max(stems, key=lambda f: len(f.name))
                raise ConfigError(f"[{section}] {key}: unsupported unit; expected {fld.describe()}")
            known = ", ".join(k for f in fields for k in f.keys())
            raise ConfigError(f"[{section}] unknown key {key!r}; known keys: {known}")
        fld, factor = by_key[key]
        if fld.name in out:
            raise ConfigError(f"[{section}] {fld.name} given twice")
        out[fld.name] = _coerce(section, key, fld, value, factor)
    missing = [f.describe() for f in fields if f.required and f.name not in out]
    if missing:
        raise ConfigError(f"[{section}] missing required keys: {', '.join(missing)}")
    return out


def _coerce(section, key, fld, value, factor):
    where = f"[{section}] {key}"
    if fld.kind == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value) * factor
    if fld.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if fld.kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if fld.kind == "grid":
        if isinstance(value, str):
            return Grid.parse(value)
        if isinstance(value, dict) and set(value) == {"lo", "hi", "n"}:
            return Grid(float(value["lo"]), float(value["hi"]), int(value["n"]))
        raise ConfigError(f"{where} must be 'lo:hi:n' or {{lo, hi, n}}")
    if fld.kind == "points":
        try:
            (n1, v1), (n2, v2) = value
            return ((float(n1), float(v1)), (float(n2), float(v2)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where} must be two [n, mph] pairs") from exc
    if fld.kind == "perturbations":
        try:
            return tuple((str(name), float(delta)) for name, delta in value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where} must be a list of [name, relative delta] pairs") from exc
    raise AssertionError(fld.kind)


def _check_choice(label, value, choices):
    if value not in choices:
        raise ConfigError(f"{label} must be one of {', '.join(choices)}, got {value!r}")
    return value


def spec_from_dict(data, source: str = "<dict>") -> RunSpec:
    """Validate a decoded config document."""
    if not isinstance(data, dict) or not data:
        raise ConfigError(
            "config is empty; required: 'params' ("
            + ", ".join(f.describe() for f in PARAM_FIELDS)
            + ") or 'calibration' with 'targets' and 'base'"
        )
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}; known sections: {', '.join(SECTIONS)}")
    if "params" not in data and "calibration" not in data:
        raise ConfigError("config needs a 'params' or a 'calibration' section")
    spec = RunSpec(source=source, raw=data)
    try:
        if "params" in data:
            spec.params = ModelParams(**_read_section("params", data["params"], PARAM_FIELDS))
        if "calibration" in data:
            spec.calibration = _read_calibration(data["calibration"])
        if "policy" in data:
            pol = _read_section("policy", data["policy"], POLICY_FIELDS)
            side = _check_choice("levy_side", pol.pop("levy_side", "platform"), [s.value for s in LevySide])
            spec.policy = Policy(levy_side=LevySide(side), **pol)
        if "solver" in data:
            spec.solver = SolverConfig(**_read_section("solver", data["solver"], SOLVER_FIELDS))
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if "sweep" in data:
        sw = _read_section("sweep", data["sweep"], SWEEP_FIELDS)
        spec.scheme = _check_choice("sweep scheme", sw.get("scheme", spec.scheme), ["trip", "time"])
        spec.grid = sw.get("grid")
        spec.workers = sw.get("workers")
    if "compare" in data:
        spec.compare_levels = _read_section("compare", data["compare"], COMPARE_FIELDS).get(
            "p_trip_levels", spec.compare_levels
        )
    if "sensitivity" in data:
        se = _read_section("sensitivity", data["sensitivity"], SENSITIVITY_FIELDS)
        spec.sensitivity_scheme = _check_choice("sensitivity scheme", se.get("scheme", "time"), ["trip", "time"])
        spec.sensitivity_grid = se.get("grid")
        spec.perturbations = se.get("perturbations", spec.perturbations)
        for name, _ in spec.perturbations:
            if name not in ModelParams.__dataclass_fields__:
                raise ConfigError(f"[sensitivity] unknown parameter {name!r}")
    if "output" in data:
        out = _read_section("output", data["output"], OUTPUT_FIELDS)
        spec.out_dir = out.get("dir", spec.out_dir)
        spec.out_format = _check_choice("output format", out.get("format", spec.out_format), ["csv", "json"])
    return spec


def _read_calibration(data) -> CalibrationSpec:
    if not isinstance(data, dict):
        raise ConfigError("[calibration] must be an object")
    extra = sorted(set(data) - set(CALIBRATION_SECTIONS))
    if extra:
        raise ConfigError(f"[calibration] unknown key(s) {extra}; expected 'targets' and 'base'")
    if set(data) != set(CALIBRATION_SECTIONS):
        raise ConfigError("[calibration] needs both 'targets' and 'base'")
    targets = CalibrationTargets(**_read_section("calibration.targets", data["targets"], TARGET_FIELDS))
    base_kw = _read_section("calibration.base", data["base"], BASE_FIELDS)
    base = build_base(
        targets,
        base_kw.pop("trip_len"),
        base_kw.pop("alpha"),
        base_kw.pop("beta"),
        **base_kw,
    )
    return CalibrationSpec(targets, base)


def load_document(path) -> tuple[dict, str]:
    """Decode a config file; bundled configs can be named without a path."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        text = resources.files("tnc_policy").joinpath("data", f"{path}.json").read_text()
        return (json.loads(text) if text.strip() else {}), f"bundled:{path}"
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not text.strip():
        return {}, str(p)
    try:
        return json.loads(text), str(p)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def parse_config(path) -> RunSpec:
    """Read, validate and unit-convert a JSON run configuration."""
    data, source = load_document(path)
    return spec_from_dict(data, source)


def params_to_config(params: ModelParams) -> dict:
    """Inverse of the ``params`` section reader, in the primary unit of each key."""
    out = {}
    for fld in PARAM_FIELDS:
        unit, factor = next(iter(fld.units.items()))
        out[f"{fld.name}_{unit}" if unit else fld.name] = getattr(params, fld.name) / factor
    return out
