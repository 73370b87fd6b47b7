"""Run manifests: a flat TOML file recording everything needed to rerun a command."""

from __future__ import annotations

import json
import math
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InvalidInputError

MANIFEST_NAME = "manifest.toml"


def _value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise InvalidInputError(f"cannot record non-finite value {v!r}")
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_value(x) for x in v) + "]"
    raise InvalidInputError(f"cannot record value of type {type(v).__name__}")


def dumps(top: dict, sections: dict[str, dict]) -> str:
    """Render top-level keys then ``[section]`` tables; ``None`` values are omitted."""
    lines = [f"{k} = {_value(v)}" for k, v in top.items() if v is not None]
    for name, table in sections.items():
        lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_value(v)}" for k, v in table.items() if v is not None)
    return "\n".join(lines) + "\n"


def write(path, top: dict, sections: dict[str, dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(top, sections))


def read(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise InvalidInputError(f"{path}: malformed manifest: {exc}") from None
