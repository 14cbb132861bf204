"""Sectioned plain-text configuration files.

Format::

    # comment
    [sql_keywords]
    SELECT
    FROM
    [settings]
    min_string_len = 3
    [constants]
    adler32 = FFF1

Entries are one per line; a section that appears in a user file replaces
the same section of the shipped defaults, absent sections keep them.
"""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_sections(text: str, source: str = "<config>") -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip().lower()
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ConfigError(f"{source}:{lineno}: entry outside of any [section]")
        sections[current].append(stripped)
    return sections


def key_values(entries: list[str], source: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    for entry in entries:
        if "=" not in entry:
            raise ConfigError(f"{source}: expected 'name = value', got {entry!r}")
        key, value = entry.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def read_config(path: str | os.PathLike) -> dict[str, list[str]]:
    p = Path(path)
    return parse_sections(p.read_text(encoding="utf-8"), str(p))


def default_sections() -> dict[str, list[str]]:
    text = resources.files("tabmax.data").joinpath("default.conf").read_text(encoding="utf-8")
    return parse_sections(text, "default.conf")


def merged_sections(path: str | os.PathLike | None) -> dict[str, list[str]]:
    sections = default_sections()
    if path is not None:
        sections.update(read_config(path))
    return sections
