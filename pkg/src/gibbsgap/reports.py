"""Serialization of reports: JSON-lines and CSV, each opened by a schema line."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path

import numpy as np

from .lattice import Region

SCHEMA_VERSION = "gibbsgap-report/1"


def to_jsonable(obj):
    """Recursively convert numpy values, regions and dataclasses into JSON-ready data."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, Region):
        return obj.to_json()
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        if obj.imag == 0:
            return to_jsonable(float(obj.real))
        return [to_jsonable(float(obj.real)), to_jsonable(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps_jsonl(records, kind: str) -> str:
    lines = [json.dumps({"schema": SCHEMA_VERSION, "kind": kind})]
    lines += [json.dumps(to_jsonable(r)) for r in records]
    return "\n".join(lines) + "\n"


def dumps_csv(columns: list[str], rows: list[dict], kind: str) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA_VERSION} kind={kind}\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(row.get(k)) for k in columns})
    return buf.getvalue()


def _cell(value) -> str:
    if value is None:
        return ""
    value = to_jsonable(value)
    if isinstance(value, list):
        return " ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def gnuplot_script(csv_path: str | Path, x: str, y: str, columns: list[str], title: str = "",
                   logscale_y: bool = False) -> str:
    """A plot script reading the CSV written next to it (the header row is skipped; the schema line is a comment)."""
    xi = columns.index(x) + 1
    yi = columns.index(y) + 1
    lines = ["set datafile separator ','", f"set xlabel '{x}'", f"set ylabel '{y}'"]
    if title:
        lines.append(f"set title '{title}'")
    if logscale_y:
        lines.append("set logscale y")
    lines.append(f"plot '{csv_path}' every ::1 using {xi}:{yi} with linespoints title '{y}'")
    return "\n".join(lines) + "\n"
