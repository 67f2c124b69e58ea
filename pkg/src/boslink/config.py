"""Shared key-value config dialect (TOML subset: flat sections of scalars)."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from .errors import InvalidConfigError


def load(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise InvalidConfigError(f"{path}: {exc}") from exc


def loads(text: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise InvalidConfigError(str(exc)) from exc


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        if isinstance(value, float) and value != value:
            raise InvalidConfigError("NaN is not representable in config files")
        if value == float("inf"):
            return "inf"
        if value == float("-inf"):
            return "-inf"
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise InvalidConfigError(f"unsupported config value {value!r}")


def dumps(sections: Mapping[str, Mapping[str, Any]], comments: Mapping[str, str] | None = None) -> str:
    """Render ``{section: {key: scalar}}``; ``comments`` maps ``key`` to a unit note."""
    comments = comments or {}
    out = []
    for name, body in sections.items():
        out.append(f"[{name}]")
        for key, value in body.items():
            line = f"{key} = {_fmt(value)}"
            if key in comments:
                line += f"  # {comments[key]}"
            out.append(line)
        out.append("")
    return "\n".join(out)


def save(path, sections, comments=None) -> None:
    Path(path).write_text(dumps(sections, comments))


def section(data: Mapping[str, Any], name: str, allowed) -> dict:
    body = dict(data.get(name, {}))
    unknown = set(body) - set(allowed)
    if unknown:
        raise InvalidConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return body


def config_hash(obj: Any) -> str:
    """Stable short hash of a JSON-serializable description."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
