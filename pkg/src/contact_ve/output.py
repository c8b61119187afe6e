"""CSV and run-manifest writers shared by the CLI commands."""
from __future__ import annotations

import csv
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__


def fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return format(x, ".17g")
    return str(x)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def write_manifest(out, command: str, resolved_config: dict, seed, started: str, extra: dict | None = None) -> Path:
    """Write ``<out>.manifest.json`` next to an output file."""
    doc = {
        "command": command,
        "resolved_config": resolved_config,
        "tool_version": __version__,
        "seed": seed,
        "argv": sys.argv[1:],
        "started": started,
        "finished": now(),
    }
    if extra:
        doc.update(extra)
    path = manifest_path(out)
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return path
