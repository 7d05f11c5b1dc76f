"""CSV tables with ``#`` metadata header lines.

Floats are written with ``repr`` so that reading a file back reproduces the
table exactly. ``None`` is written as an empty field.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence


@dataclass
class Table:
    columns: List[str]
    rows: List[dict]
    metadata: Dict[str, str] = field(default_factory=dict)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def equals(self, other: "Table") -> bool:
        """Exact equality, treating NaN as equal to NaN."""
        if self.columns != other.columns or self.metadata != other.metadata:
            return False
        if len(self.rows) != len(other.rows):
            return False
        for a, b in zip(self.rows, other.rows):
            for c in self.columns:
                x, y = a.get(c), b.get(c)
                if isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y):
                    continue
                if type(x) is not type(y) or x != y:
                    return False
        return True


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def format_table(table: Table) -> str:
    buf = io.StringIO()
    for k, v in table.metadata.items():
        if "\n" in str(v) or "=" in k:
            raise ValueError(f"metadata entry {k!r} cannot be written on one line")
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_fmt(row.get(c)) for c in table.columns])
    return buf.getvalue()


def parse_table(text: str) -> Table:
    meta: Dict[str, str] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        k, _, v = lines[i][1:].strip().partition("=")
        meta[k] = v
        i += 1
    reader = csv.reader(lines[i:])
    try:
        columns = next(reader)
    except StopIteration:
        raise ValueError("table has no header row") from None
    rows = []
    for n, rec in enumerate(reader, start=i + 2):
        if len(rec) != len(columns):
            raise ValueError(f"line {n}: expected {len(columns)} fields, got {len(rec)}")
        rows.append({c: _parse(s) for c, s in zip(columns, rec)})
    return Table(columns, rows, meta)


def write_table(table: Table, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_table(table))
    return path


def read_table(path) -> Table:
    return parse_table(Path(path).read_text())


def make_table(columns: Sequence[str], rows: List[dict], metadata: Dict[str, str]) -> Table:
    return Table(list(columns), rows, dict(metadata))
