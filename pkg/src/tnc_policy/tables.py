"""Deterministic CSV/JSON emission of solver results.

Floats are written with 17 significant digits so that every value
round-trips exactly; data files never contain timestamps.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

COLUMNS = (
    "tax_level",
    "lambda_per_min",
    "n_drivers",
    "p_f",
    "p_d",
    "wage_hr",
    "tp_min",
    "t0_min",
    "cost",
    "occupancy",
    "profit_hr",
    "tax_hr",
    "regime",
)

_OUTCOME_ATTR = {
    "lambda_per_min": "lam",
    "n_drivers": "n_drivers",
    "p_f": "p_f",
    "p_d": "p_d",
    "wage_hr": "wage_hr",
    "tp_min": "tp_min",
    "t0_min": "t0_min",
    "cost": "cost",
    "occupancy": "occupancy",
    "profit_hr": "profit_hr",
    "tax_hr": "tax_hr",
}


def fmt_float(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return "%.17g" % x


def equilibrium_row(tax_level, eq) -> dict:
    """One table row; a failed solve (``eq is None``) gives NaNs and regime ``failed``."""
    row = {"tax_level": float(tax_level)}
    for col, attr in _OUTCOME_ATTR.items():
        row[col] = float(getattr(eq.outcome, attr)) if eq is not None else math.nan
    row["regime"] = eq.regime.value if eq is not None else "failed"
    return row


def sweep_rows(table) -> list:
    return [equilibrium_row(level, eq) for level, eq in table]


def _cell(v):
    return fmt_float(v) if isinstance(v, float) else str(v)


def to_csv(rows, columns=COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, float):
        if not math.isfinite(v):
            return None
        return float(fmt_float(v))
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


def to_json(obj) -> str:
    return json.dumps(_json_value(obj), indent=2, allow_nan=False) + "\n"


def table_document(rows, columns=COLUMNS) -> dict:
    return {"columns": list(columns), "rows": [{c: row[c] for c in columns} for row in rows]}


def emit_table(rows, path, fmt: str = "csv", columns=COLUMNS) -> Path:
    """Write ``rows`` to ``path`` (suffix added from ``fmt``) and return the path."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    path = Path(path).with_suffix("." + fmt)
    text = to_csv(rows, columns) if fmt == "csv" else to_json(table_document(rows, columns))
    path.write_text(text)
    return path


def read_table(path) -> list:
    """Parse a file written by :func:`emit_table` back into row dicts."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return [{k: (math.nan if v is None else v) for k, v in row.items()} for row in doc["rows"]]
    with path.open(newline="") as fh:
        rows = []
        for rec in csv.DictReader(fh):
            rows.append({k: _parse_cell(v) for k, v in rec.items()})
        return rows


def _parse_cell(text):
    if text in ("True", "False"):
        return text == "True"
    try:
        return float(text)
    except ValueError:
        return text


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(to_json(obj))
    return path
