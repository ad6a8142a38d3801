"""Plain-text `key = value` files.

One setting per line, `#` starts a comment, blank lines ignored. Values are
kept as raw strings; callers convert. Keys are unique per file and written
in insertion order so files round-trip stably.
"""

from __future__ import annotations

import os
from typing import Mapping

from .errors import ConfigError


def parse_kv(text: str, *, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv(fh.read(), source=str(path))


def write_kv(path: str | os.PathLike, items: Mapping[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items.items():
            fh.write(f"{key} = {format_value(value)}\n")


def format_value(value: object) -> str:
    """Canonical text for one value; sequences join with ';'."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(format_value(v) for v in value)
    return str(value)


def split_list(raw: str) -> list[str]:
    """Split a ';'-separated value, dropping empty segments."""
    return [part.strip() for part in raw.split(";") if part.strip()]


def parse_bool(raw: str, *, key: str = "?") -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected boolean, got {raw!r}")
