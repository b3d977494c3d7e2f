"""Deterministic JSONL and CSV emission for bound reports."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable

from .bounds import CERTIFY_TOL, BoundReport

SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "schema_version",
    "scenario",
    "bound_id",
    "lhs",
    "rhs",
    "slack",
    "margin",
    "status",
    "pass",
    "conditional",
    "argmax",
    "assumption_flags",
)


def plain(value):
    """JSON-safe copy: non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if hasattr(value, "item"):  # numpy scalar
        return plain(value.item())
    return value


def report_row(report: BoundReport, extra: dict | None = None) -> dict:
    row = {"schema_version": SCHEMA_VERSION}
    row.update(extra or {})
    row.update(report.as_dict())
    row["pass"] = report.status != "fail"
    if row.get("timings") is None:
        row.pop("timings", None)
    return row


def recheck(row: dict) -> bool:
    """Recompute the pass flag of a row from its own lhs, rhs and slack."""
    lhs, rhs, slack = (float(row[k]) for k in ("lhs", "rhs", "slack"))
    if math.isnan(lhs):
        return math.isinf(rhs)
    return lhs <= rhs + slack + CERTIFY_TOL


def to_jsonl(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(plain(r), sort_keys=True) + "\n" for r in rows)


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return str(plain(v)) if not math.isfinite(v) else repr(v)
    if isinstance(v, dict):
        return ";".join(f"{k}={_cell(x)}" for k, x in sorted(v.items()))
    return "" if v is None else str(v)


def to_csv(rows: Iterable[dict], columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def write_rows(rows: list, out_dir, stem: str, fmt: str = "both", columns=CSV_COLUMNS) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("jsonl", "both"):
        p = out / f"{stem}.jsonl"
        p.write_text(to_jsonl(rows), encoding="utf-8")
        written.append(p)
    if fmt in ("csv", "both"):
        p = out / f"{stem}.csv"
        p.write_text(to_csv(rows, columns), encoding="utf-8")
        written.append(p)
    return written


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(plain(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def summary_table(rows: list) -> str:
    """Fixed-width summary for the terminal."""
    head = f"{'bound':<20} {'status':<6} {'lhs':>12} {'rhs':>12} {'slack':>11} {'margin':>12}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['bound_id']:<20} {r['status']:<6} {_num(r['lhs']):>12} {_num(r['rhs']):>12} "
            f"{_num(r['slack']):>11} {_num(r['margin']):>12}"
        )
    return "\n".join(lines)


def _num(v) -> str:
    v = float(v)
    if not math.isfinite(v):
        return str(plain(v))
    return f"{v:.4g}"
