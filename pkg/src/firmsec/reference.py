"""Loaders for the versioned data files shipped in ``firmsec/data``."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from functools import cache
from importlib import resources


def _text(name: str) -> str:
    return resources.files("firmsec.data").joinpath(name).read_text(encoding="utf-8")


def _lines(name: str) -> list[str]:
    out = []
    for line in _text(name).splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(line)
    return out


@cache
def fortify_stems() -> frozenset[str]:
    """Function stems whose ``__<stem>_chk`` variant evidences Fortify Source."""
    return frozenset(_lines("fortify_functions.txt"))


def is_fortified_symbol(name: str) -> bool:
    if not (name.startswith("__") and name.endswith("_chk")):
        return False
    return name[2:-4] in fortify_stems()


@cache
def first_release_years() -> dict[str, int]:
    return dict(json.loads(_text("user_mitigations.json"))["first_release_year"])


@cache
def debian_baseline() -> dict[str, float]:
    return dict(json.loads(_text("debian_baseline.json"))["rates_percent"])


@cache
def kernel_mitigation_table() -> dict:
    return json.loads(_text("kernel_mitigations.json"))


@cache
def kernel_signatures() -> dict:
    return json.loads(_text("kernel_signatures.json"))


@cache
def kernel_release_dates() -> dict[str, dt.date]:
    """Mainline release date per release key ("2.6.36", "4.9", ...)."""
    rows = csv.DictReader(io.StringIO(_text("kernel_releases.csv")))
    return {r["version"]: dt.date.fromisoformat(r["date"]) for r in rows}


@cache
def device_types() -> tuple[str, ...]:
    return tuple(_lines("device_types.txt"))
