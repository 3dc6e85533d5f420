"""Byte-stable CSV and JSON emitters with metadata sidecars."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from . import __version__

SCHEMA_VERSION = 1
TOOL_NAME = "vortex-phase-lab"


def format_value(v) -> str:
    """17 significant digits for floats (round-trip exact); 'nan'/'inf' spelled out."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float) or hasattr(v, "dtype"):
        x = float(v)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, (str, int)):
        return obj
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return str(obj)


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, non-finite floats as null, trailing newline."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def sidecar(config_hash: str, task: str, **extra) -> dict:
    meta = {
        "tool": TOOL_NAME,
        "tool_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash,
        "task": task,
    }
    meta.update(extra)
    return meta


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(obj))
    return path


def write_csv(path, columns, rows, meta: dict) -> list[Path]:
    """CSV with a header row plus ``<stem>.meta.json`` describing it."""
    path = Path(path)
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            if len(r) != len(columns):
                raise ValueError(f"row has {len(r)} fields, header has {len(columns)}")
            w.writerow([format_value(v) for v in r])
    info = dict(meta)
    info.update(columns=list(columns), rows=len(rows), file=path.name)
    side = path.with_name(path.stem + ".meta.json")
    write_json(side, info)
    return [path, side]


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]
