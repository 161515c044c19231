"""Kernel build configuration (``.config``) parsing and recovery."""

from __future__ import annotations

import enum
import gzip
import re
import zlib
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Iterator, Optional

_ASSIGN = re.compile(r"^(?P<name>[A-Za-z0-9_]+)=(?P<value>.*)$")
_NOT_SET = re.compile(r"^#\s*(?P<name>[A-Za-z0-9_]+) is not set\s*$")

# values that mean "built in" or "built as a module"; both count as enabled
SET_VALUES = frozenset({"y", "m"})

IKCFG_START = b"IKCFG_ST"
IKCFG_END = b"IKCFG_ED"


class ConfigState(enum.Enum):
    SET = "set"
    UNSET = "unset"


@dataclass(frozen=True)
class MalformedLine:
    lineno: int
    text: str

    def __str__(self) -> str:
        return f"line {self.lineno}: malformed config line {self.text!r}"


def normalize_option(name: str) -> str:
    name = name.strip()
    return name if name.startswith("CONFIG_") else "CONFIG_" + name


@dataclass(frozen=True)
class KernelConfig(Mapping):
    """Option name → state.  Options never mentioned read as unset via ``lookup``."""

    states: dict[str, ConfigState]
    values: dict[str, str] = field(default_factory=dict)
    warnings: tuple[MalformedLine, ...] = ()

    def __getitem__(self, name: str) -> ConfigState:
        return self.states[normalize_option(name)]

    def __iter__(self) -> Iterator[str]:
        return iter(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def lookup(self, name: str) -> ConfigState:
        return self.states.get(normalize_option(name), ConfigState.UNSET)

    def is_set(self, name: str) -> bool:
        return self.lookup(name) is ConfigState.SET


def parse_kconfig(text: str) -> KernelConfig:
    """Parse ``.config`` text.  Later assignments to an option override earlier ones."""
    states: dict[str, ConfigState] = {}
    values: dict[str, str] = {}
    warnings = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        m = _NOT_SET.match(line)
        if m:
            name = normalize_option(m["name"])
            states[name] = ConfigState.UNSET
            values.pop(name, None)
            continue
        if line.startswith("#"):
            continue
        m = _ASSIGN.match(line)
        if not m:
            warnings.append(MalformedLine(lineno, raw))
            continue
        name = normalize_option(m["name"])
        value = m["value"].strip()
        # string and numeric options are present, hence set; "n" is an explicit no
        states[name] = ConfigState.UNSET if value == "n" else ConfigState.SET
        values[name] = value
    return KernelConfig(states, values, tuple(warnings))


def extract_ikconfig(data: bytes) -> Optional[str]:
    """Recover a ``.config`` embedded with CONFIG_IKCONFIG (gzip between IKCFG markers)."""
    pos = data.find(IKCFG_START)
    while pos >= 0:
        start = pos + len(IKCFG_START)
        end = data.find(IKCFG_END, start)
        blob = data[start:end] if end >= 0 else data[start:]
        try:
            return gzip.decompress(blob).decode("utf-8", "replace")
        except (OSError, EOFError, zlib.error):
            try:
                return zlib.decompressobj(16 + zlib.MAX_WBITS).decompress(blob).decode("utf-8", "replace")
            except zlib.error:
                pass
        pos = data.find(IKCFG_START, start)
    return None


def looks_like_kconfig(text: str) -> bool:
    """Cheap sniff: at least a few CONFIG_ assignments or not-set comments."""
    hits = 0
    for line in text.splitlines()[:400]:
        line = line.strip()
        if _NOT_SET.match(line) or (line.startswith("CONFIG_") and "=" in line):
            hits += 1
            if hits >= 3:
                return True
    return False
