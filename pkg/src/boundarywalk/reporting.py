"""CSV and JSON artifacts.

Floats are written at 12 significant digits, columns keep their declared
order and every file opens with ``#`` provenance lines, so that reruns with
the same configuration are byte-identical.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .walk import McEstimate


def fmt(value: Any) -> str:
    """One CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def clean(obj: Any) -> Any:
    """JSON-ready copy: numpy scalars unwrapped, floats rounded to 12 digits."""
    if isinstance(obj, McEstimate):
        obj = {"mean": obj.mean, "stderr": obj.stderr, "paths": obj.paths, "seed": obj.seed}
    if isinstance(obj, Mapping):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.12g}")
    return obj


def _prepare(path: str | Path) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {p.parent} is not writable: {exc}") from exc
    return p


def provenance_lines(provenance: Mapping[str, Any]) -> list[str]:
    return [f"# {k}: {json.dumps(clean(v), sort_keys=True)}" for k, v in sorted(provenance.items())]


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]],
              provenance: Mapping[str, Any] | None = None) -> Path:
    p = _prepare(path)
    lines = provenance_lines(provenance or {})
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(row[c]) for c in columns))
    p.write_text("\n".join(lines) + "\n")
    return p


def write_json(path: str | Path, data: Any, provenance: Mapping[str, Any] | None = None) -> Path:
    p = _prepare(path)
    doc = {"provenance": clean(provenance or {}), "data": clean(data)}
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return p


def read_csv(path: str | Path) -> tuple[dict, list[dict]]:
    """Inverse of :func:`write_csv` (values come back as strings)."""
    prov, rows, header = {}, [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, v = line[2:].split(": ", 1)
            prov[k] = json.loads(v)
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append(dict(zip(header, line.split(","))))
    return prov, rows


def read_json(path: str | Path) -> tuple[dict, Any]:
    """``(provenance, data)`` from :func:`write_json` output."""
    doc = json.loads(Path(path).read_text())
    return doc["provenance"], doc["data"]
