"""Newline-delimited JSON reading/writing with per-line schema errors."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Iterable, Iterator


class SchemaError(ValueError):
    """A record violates its file schema; carries the file and 1-based line number."""

    def __init__(self, path, lineno: int | None, message: str):
        self.path = str(path)
        self.lineno = lineno
        where = f"{self.path}:{lineno}" if lineno is not None else self.path
        super().__init__(f"{where}: {message}")


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise SchemaError(path, lineno, "record must be a JSON object")
            yield lineno, rec


def _clean(value: Any) -> Any:
    # NaN/inf are not valid JSON; write them as null.
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, list):
        return [_clean(v) for v in value]
    return value


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({k: _clean(v) for k, v in rec.items()}, allow_nan=False))
            fh.write("\n")
            n += 1
    return n


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_json(path: str | Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _type_ok(value: Any, expected) -> bool:
    types = expected if isinstance(expected, tuple) else (expected,)
    if isinstance(value, bool):
        return bool in types
    return isinstance(value, types)


def check_record(rec: dict, schema: dict[str, Any], path, lineno: int) -> None:
    """Check required/optional keys and types; keys ending in '?' are optional."""
    for name, expected in schema.items():
        optional = name.endswith("?")
        key = name.rstrip("?")
        if key not in rec:
            if optional:
                continue
            raise SchemaError(path, lineno, f"missing field {key!r}")
        if not _type_ok(rec[key], expected):
            raise SchemaError(path, lineno, f"field {key!r} has wrong type {type(rec[key]).__name__}")
