"""Report persistence and rendering."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any

from .experiments import ExperimentReport

_LEADING = ("index", "epsilon", "n", "sigma", "accountant_epsilon")


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def cells_table(report: dict) -> list[dict]:
    """Flatten report cells to one row per cell (means and standard errors)."""
    rows = []
    for cell in report["cells"]:
        row: dict = {}
        for key, val in cell.items():
            if isinstance(val, dict) and "mean" in val:
                row[f"{key}_mean"] = val["mean"]
                row[f"{key}_se"] = val["se"]
            elif not isinstance(val, (dict, list)):
                row[key] = val
        rows.append(row)
    return rows


def _columns(rows: list[dict]) -> list[str]:
    keys = {k for row in rows for k in row}
    lead = [k for k in _LEADING if k in keys]
    return lead + sorted(keys - set(lead))


def write_report(report: ExperimentReport, out_dir: str | Path, stem: str) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = report.to_dict()
    jpath = out / f"{stem}.json"
    jpath.write_text(dumps(data))
    rows = cells_table(data)
    cols = _columns(rows)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    cpath = out / f"{stem}.csv"
    cpath.write_text(buf.getvalue())
    return jpath, cpath


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return "" if v is None else str(v)


def render_markdown(report: dict) -> str:
    rows = cells_table(report)
    cols = _columns(rows)
    lines = [f"# {report['kind']} report", ""]
    if cols:
        lines.append("| " + " | ".join(cols) + " |")
        lines.append("|" + "---|" * len(cols))
        for row in rows:
            lines.append("| " + " | ".join(_fmt(row.get(c)) for c in cols) + " |")
    if report.get("fits"):
        lines += ["", "## Fits", ""]
        for name, fit in report["fits"].items():
            lines.append(f"- {name}: slope {fit['slope']:.4f}, R^2 {fit['r_squared']:.4f}")
    if report.get("checks"):
        lines += ["", "## Checks", ""]
        for chk in report["checks"]:
            lines.append(f"- [{'PASS' if chk['passed'] else 'FAIL'}] {chk['name']}")
    extra = report.get("extra", {})
    if "accountant_note" in extra:
        lines += ["", f"Accountant epsilon is {extra['accountant_note']}."]
    if "calibration_constants" in extra:
        cc = extra["calibration_constants"]
        lines.append(f"Calibration constants: C_sigma = {cc['c_sigma']}, C_eps = {cc['c_eps']}.")
    return "\n".join(lines) + "\n"
