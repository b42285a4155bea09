"""Field files, deterministic JSON and atomic writes."""
from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits; output depends only on ``obj``."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps(obj) + "\n")


def format_field(values) -> str:
    values = np.asarray(values, dtype=float)
    lines = [f"FIELD {len(values)}"]
    lines += [f"{i} {_fmt_float(float(v)).strip(chr(34))}" for i, v in enumerate(values)]
    return "\n".join(lines) + "\n"


def write_field(path, values) -> None:
    atomic_write_text(path, format_field(values))


def parse_field(text: str) -> np.ndarray:
    from .mesh import MeshFormatError

    rows = [(n, l.split("#", 1)[0].strip()) for n, l in enumerate(text.splitlines(), start=1)]
    rows = [(n, l) for n, l in rows if l]
    if not rows:
        raise MeshFormatError("empty field file", 1)
    n0, head = rows[0]
    parts = head.split()
    if len(parts) != 2 or parts[0] != "FIELD" or not parts[1].isdigit():
        raise MeshFormatError(f"expected 'FIELD <count>', got {head!r}", n0)
    count = int(parts[1])
    out = np.full(count, np.nan)
    if len(rows) - 1 != count:
        raise MeshFormatError(f"expected {count} values, found {len(rows) - 1}", rows[-1][0])
    for n, line in rows[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise MeshFormatError("expected 'vertex_index value'", n)
        try:
            i, v = int(parts[0]), float(parts[1])
        except ValueError as exc:
            raise MeshFormatError(str(exc), n) from None
        if not 0 <= i < count:
            raise MeshFormatError(f"vertex index {i} out of range", n)
        out[i] = v
    if np.isnan(out).any():
        raise MeshFormatError("field does not cover every vertex", rows[-1][0])
    return out


def read_field(path) -> np.ndarray:
    return parse_field(Path(path).read_text(encoding="utf-8"))
