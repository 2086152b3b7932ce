"""Helpers for the INI-style key/value configuration files.

All configuration (schemas, synthetic specs, audit and ingest plans) uses
``configparser`` syntax with case-preserving keys.  Lists are comma-separated;
whitespace around items is stripped.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError, InputError


def read_ini(path: str | Path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input error: no such file: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep label/subgroup names as written
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parser


def parse_ini_text(text: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return parser


def split_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def float_list(value: str, what: str) -> list[float]:
    try:
        return [float(v) for v in split_list(value)]
    except ValueError as exc:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {value!r}") from exc


def sections_with_prefix(parser: configparser.ConfigParser, prefix: str) -> list[tuple[str, configparser.SectionProxy]]:
    """Return ``(suffix, section)`` for sections named ``prefix:suffix`` in file order."""
    out = []
    for name in parser.sections():
        if name.startswith(prefix + ":"):
            out.append((name[len(prefix) + 1 :].strip(), parser[name]))
    return out


def require(section: configparser.SectionProxy, key: str):
    if key not in section:
        raise ConfigError(f"[{section.name}] missing required key {key!r}")
    return section[key]
