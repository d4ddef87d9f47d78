"""Structured experiment output: CSV and JSON with embedded config hash.

Both formats carry the same table; floats are written as their shortest
roundtrip decimal (``repr``), so CSV -> JSON -> CSV reproduces the file
byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field


@dataclass
class RunRecord:
    experiment: str
    config_text: str
    config_hash: str
    columns: list
    rows: list
    checks: list = field(default_factory=list)     # dicts: name/value/threshold/passed
    wall_time_s: float = 0.0

    def add_check(self, name: str, value: float, threshold: float, passed: bool):
        self.checks.append({"name": name, "value": float(value),
                            "threshold": float(threshold), "passed": bool(passed)})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(tok: str):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    if tok == "true":
        return True
    if tok == "false":
        return False
    return tok


def write_csv_table(path, config_hash: str, columns, rows) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    os.replace(tmp, path)


def read_csv_table(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    config_hash = ""
    idx = 0
    if lines and lines[0].startswith("# config_hash="):
        config_hash = lines[0].split("=", 1)[1]
        idx = 1
    columns = lines[idx].split(",") if idx < len(lines) else []
    rows = [[_parse_cell(tok) for tok in line.split(",")]
            for line in lines[idx + 1:] if line]
    return config_hash, columns, rows


def write_json_table(path, config_hash: str, columns, rows, extra=None) -> None:
    payload = {"config_hash": config_hash, "columns": list(columns),
               "rows": [list(r) for r in rows]}
    if extra:
        payload.update(extra)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_json_table(path):
    with open(path) as fh:
        payload = json.load(fh)
    return payload["config_hash"], payload["columns"], payload["rows"]


def emit_csv(record: RunRecord, path) -> None:
    write_csv_table(path, record.config_hash, record.columns, record.rows)


def emit_json(record: RunRecord, path) -> None:
    write_json_table(path, record.config_hash, record.columns, record.rows,
                     extra={"experiment": record.experiment,
                            "checks": record.checks,
                            "wall_time_s": record.wall_time_s})
