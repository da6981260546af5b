"""Plain-text run configuration, CSV tables and JSON summaries.

Configuration files hold one ``key = value`` per line with ``#`` comments
and dotted keys (``model.sigma = 1``). CSV numbers use the shortest
round-trip representation so that reading a table back reproduces the
written values exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError


@dataclass
class ConfigEntry:
    value: str
    line: int


@dataclass
class RawConfig:
    """Parsed ``key = value`` pairs with their source line numbers."""

    entries: dict[str, ConfigEntry] = field(default_factory=dict)
    source: str = "<config>"

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def keys(self):
        return self.entries.keys()

    def where(self, key: str) -> str:
        entry = self.entries.get(key)
        return f"{self.source}:{entry.line}" if entry and entry.line else self.source

    def set(self, key: str, value: str, line: int = 0) -> None:
        self.entries[key] = ConfigEntry(value, line)

    def reject_unknown(self, allowed: Iterable[str]) -> None:
        allowed = set(allowed)
        unknown = sorted(k for k in self.entries if k not in allowed)
        if unknown:
            where = ", ".join(f"{k} ({self.where(k)})" for k in unknown)
            raise ConfigurationError(f"unknown configuration keys: {where}")

    def get_str(self, key: str, default: str | None = None, choices: Sequence[str] | None = None) -> str:
        if key not in self.entries:
            if default is None:
                raise ConfigurationError(f"missing required key {key!r} in {self.source}")
            return default
        value = self.entries[key].value
        if choices is not None and value not in choices:
            raise ConfigurationError(
                f"{self.where(key)}: {key} must be one of {', '.join(choices)}, got {value!r}")
        return value

    def get_float(self, key: str, default: float | None = None, positive: bool = False,
                  nonnegative: bool = False) -> float:
        if key not in self.entries:
            if default is None:
                raise ConfigurationError(f"missing required key {key!r} in {self.source}")
            return float(default)
        text = self.entries[key].value
        try:
            value = float(text)
        except ValueError:
            raise ConfigurationError(f"{self.where(key)}: {key} must be a number, got {text!r}") from None
        if not math.isfinite(value):
            raise ConfigurationError(f"{self.where(key)}: {key} must be finite")
        if positive and not value > 0:
            raise ConfigurationError(f"{self.where(key)}: {key} must be positive, got {value}")
        if nonnegative and value < 0:
            raise ConfigurationError(f"{self.where(key)}: {key} must be non-negative, got {value}")
        return value

    def get_int(self, key: str, default: int | None = None, minimum: int = 1) -> int:
        if key not in self.entries:
            if default is None:
                raise ConfigurationError(f"missing required key {key!r} in {self.source}")
            return int(default)
        text = self.entries[key].value
        try:
            value = int(text)
        except ValueError:
            raise ConfigurationError(f"{self.where(key)}: {key} must be an integer, got {text!r}") from None
        if value < minimum:
            raise ConfigurationError(f"{self.where(key)}: {key} must be at least {minimum}")
        return value

    def get_bool(self, key: str, default: bool = False) -> bool:
        if key not in self.entries:
            return default
        text = self.entries[key].value.lower()
        if text in ("true", "yes", "1", "on"):
            return True
        if text in ("false", "no", "0", "off"):
            return False
        raise ConfigurationError(f"{self.where(key)}: {key} must be true or false")

    def get_floats(self, key: str, default: Sequence[float] = ()) -> list[float]:
        if key not in self.entries:
            return list(default)
        out = []
        for part in self.entries[key].value.split(","):
            part = part.strip()
            if not part:
                continue
            try:
                value = float(part)
            except ValueError:
                raise ConfigurationError(f"{self.where(key)}: {key} must be a comma-separated list of numbers") from None
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"{self.where(key)}: {key} entries must be finite and non-negative")
            out.append(value)
        return out


def parse_config(text: str, source: str = "<config>") -> RawConfig:
    """Parse ``key = value`` lines.

    Examples
    --------
    >>> cfg = parse_config("model.sigma = 1  # refractory period\\nd = 0.05\\n")
    >>> cfg.get_float("model.sigma"), cfg.get_float("d")
    (1.0, 0.05)
    """
    cfg = RawConfig(source=source)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not all(part.replace("_", "").replace("-", "").isalnum() for part in key.split(".")):
            raise ConfigurationError(f"{source}:{lineno}: invalid key {key!r}")
        if not value:
            raise ConfigurationError(f"{source}:{lineno}: empty value for {key!r}")
        if key in cfg.entries:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r} "
                                     f"(first set on line {cfg.entries[key].line})")
        cfg.set(key, value, lineno)
    return cfg


def load_config(path: str | Path) -> RawConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


# ---------------------------------------------------------------------------
# CSV


def format_value(value: Any) -> str:
    """Shortest round-trip text for numbers, ``true``/``false`` for booleans."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def parse_value(text: str) -> Any:
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[Any]],
              meta: Mapping[str, Any] | None = None) -> Path:
    """Write a table with an optional ``# key: value`` header block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for key in sorted(meta or {}):
            fh.write(f"# {key}: {_meta_text(meta[key])}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} fields, expected {len(columns)}")
            writer.writerow([format_value(v) for v in row])
    return path


def _meta_text(value: Any) -> str:
    if isinstance(value, Mapping):
        return json.dumps(_jsonable(value), sort_keys=True)
    return format_value(value)


@dataclass
class Table:
    columns: list[str]
    rows: list[list[Any]]
    meta: dict[str, str]

    def column(self, name: str) -> list[Any]:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


def read_csv(path: str | Path) -> Table:
    """Read a table written by :func:`write_csv`."""
    meta: dict[str, str] = {}
    body = []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(":")
                meta[key.strip()] = value.strip()
            else:
                body.append(line)
    reader = csv.reader(body)
    columns = next(reader)
    rows = [[parse_value(cell) for cell in row] for row in reader]
    return Table(columns, rows, meta)


# ---------------------------------------------------------------------------
# JSON summary


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def write_summary(path: str | Path, summary: Mapping[str, Any]) -> Path:
    """Write headline numbers as JSON with sorted keys. Non-finite floats become ``null``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), sort_keys=True, indent=2) + "\n")
    return path


def read_summary(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
