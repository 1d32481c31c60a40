"""CSV tables and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os

__all__ = ["Table", "format_value", "emit_report", "write_manifest", "file_digest", "read_csv"]


class Table:
    """A named table with a fixed column order."""

    def __init__(self, name, columns, rows=None):
        self.name = name
        self.columns = list(columns)
        self.rows = [] if rows is None else list(rows)

    def add(self, **row):
        missing = set(self.columns) - set(row)
        if missing:
            raise ValueError(f"row for table {self.name!r} lacks columns {sorted(missing)}")
        self.rows.append(row)


def format_value(v):
    """Shortest round-trip text: ``repr`` for floats, lower-case booleans."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float) or hasattr(v, "dtype") and getattr(v, "dtype").kind == "f":
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if hasattr(v, "dtype") and getattr(v, "dtype").kind == "b":
        return "true" if bool(v) else "false"
    if hasattr(v, "item"):
        return str(v.item())
    return str(v)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def emit_report(tables, out_dir):
    """Write each table to ``<out_dir>/<name>.csv``; returns ``{filename: sha256}``."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir!r}: {exc.strerror}") from exc
    digests = {}
    for table in tables:
        fname = f"{table.name}.csv"
        path = os.path.join(out_dir, fname)
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(table.columns)
                for row in table.rows:
                    w.writerow([format_value(row[c]) for c in table.columns])
        except OSError as exc:
            raise OSError(f"cannot write {path!r}: {exc.strerror}") from exc
        digests[fname] = file_digest(path)
    return digests


def write_manifest(out_dir, config_echo, version, wall_clock, digests, dialect):
    """Write ``manifest.json`` last; digests refer to files in ``out_dir``."""
    manifest = dict(config=config_echo, config_dialect=dialect, version=version,
                    wall_clock_seconds=wall_clock, outputs=digests)
    path = os.path.join(out_dir, "manifest.json")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path!r}: {exc.strerror}") from exc
    return manifest


def read_csv(path):
    """Rows as dicts of strings (for round-trip checks)."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
