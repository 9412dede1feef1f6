"""Tiny `key = value` text format used for schema and config files.

Lines are `key = value`; blank lines and `#` comments are ignored. Values are
raw strings; callers coerce types. Comma-separated lists are split by
`split_list`.
"""

from __future__ import annotations

import os
import tempfile

from .errors import ConfigurationError


def read_kv(path) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    out: dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in out:
            raise ConfigurationError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def write_kv(path, entries: dict) -> None:
    dirname = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".tmp-kv-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for key, value in entries.items():
                fh.write(f"{key} = {value}\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def split_list(value: str) -> tuple[str, ...]:
    return tuple(item.strip() for item in value.split(",") if item.strip())
