"""Deterministic CSV/JSON emission with provenance headers."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1


@dataclass
class ResultTable:
    """A named table with a fixed column order."""

    name: str
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, row)) for row in self.rows]


def format_value(value) -> str:
    """Shortest round-trip text for floats; plain str otherwise."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else {math.inf: "inf", -math.inf: "-inf"}.get(value, "nan")
    return str(value)


def render_csv(table: ResultTable, config_hash: str, master_seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    buf.write(f"# config_sha256={config_hash}\n")
    buf.write(f"# master_seed={master_seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def render_json(table: ResultTable, config_hash: str, master_seed: int) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "table": table.name,
        "config_sha256": config_hash,
        "master_seed": master_seed,
        "columns": list(table.columns),
        "rows": [list(row) for row in table.rows],
        "meta": table.meta,
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def read_json(path) -> ResultTable:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {doc.get('schema_version')!r}")
    return ResultTable(doc["table"], tuple(doc["columns"]), [tuple(r) for r in doc["rows"]], doc.get("meta", {}))


def read_csv(path) -> tuple[dict, ResultTable]:
    """Parse a CSV written by :func:`render_csv`; values come back as strings."""
    lines = Path(path).read_text().splitlines()
    header = {}
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            header[key] = value
        else:
            body.append(line)
    rows = list(csv.reader(body))
    return header, ResultTable(Path(path).stem, tuple(rows[0]), [tuple(r) for r in rows[1:]])


def write_results(tables, directory, fmt: str, config_hash: str, master_seed: int) -> list[Path]:
    """Write each table as <name>.csv and/or <name>.json; returns the paths."""
    if fmt not in ("csv", "json", "both"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for table in tables:
        if fmt in ("csv", "both"):
            path = out / f"{table.name}.csv"
            path.write_text(render_csv(table, config_hash, master_seed))
            written.append(path)
        if fmt in ("json", "both"):
            path = out / f"{table.name}.json"
            path.write_text(render_json(table, config_hash, master_seed))
            written.append(path)
    return written
