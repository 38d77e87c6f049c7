"""Flat ``key = value`` text files with dotted key paths."""
from __future__ import annotations


class FlatConfigError(ValueError):
    pass


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FlatConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FlatConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise FlatConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def dump_flat(items, header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    lines += [f"{key} = {format_value(value)}" for key, value in items]
    return "\n".join(lines) + "\n"


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_optional_float(text: str):
    return None if text.strip().lower() in ("none", "") else float(text)
