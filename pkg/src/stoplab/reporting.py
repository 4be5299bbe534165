"""Canonical report serialization: byte-stable JSON and CSV.

Floats are written with %.17g (round-trips exactly); keys are sorted; any
non-finite number anywhere in a report is an error, never silently written.
The stdlib json encoder cannot override float formatting on the indented
path, hence the small writer here.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import NONFINITE_REPORT, ValidationError


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValidationError(f"non-finite in report: {x!r}", NONFINITE_REPORT)
    return format(float(x), ".17g")


def _normalize(obj):
    """Convert numpy scalars/arrays and dataclass-like containers to plain types."""
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_normalize(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    return obj


def dumps_canonical(obj, indent: int = 0) -> str:
    obj = _normalize(obj)
    return _dump(obj, indent)


def _dump(obj, level: int) -> str:
    pad = "  " * level
    pad_in = "  " * (level + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad_in}{json.dumps(str(k))}: {_dump(v, level + 1)}"
            for k, v in sorted(obj.items())
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        items = [f"{pad_in}{_dump(v, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    raise ValidationError(f"unserializable type in report: {type(obj).__name__}", NONFINITE_REPORT)


def check_finite(obj, path: str = "report") -> None:
    obj = _normalize(obj)
    _walk_finite(obj, path)


def _walk_finite(obj, path):
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValidationError(f"non-finite in report at {path}", NONFINITE_REPORT)
    elif isinstance(obj, dict):
        for k, v in obj.items():
            _walk_finite(v, f"{path}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _walk_finite(v, f"{path}[{i}]")


def write_json(obj, path) -> None:
    check_finite(obj)
    text = dumps_canonical(obj) + "\n"
    with open(path, "w") as f:
        f.write(text)


def _cell(v) -> str:
    if isinstance(v, (bool,)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format_float(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(header, rows, path) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
