"""Corpus-level adoption statistics over scan records.

Rates count a binary as adopting a mitigation when its verdict is
Protected (for RELRO: Partial or Full).  The applicability policy decides
which binaries enter the denominator at all: binaries from firmware
released before a mitigation existed, non-executables for NX and PIE, and
verdicts that could not be determined are left out of both sides.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import itertools
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from .records import MITIGATIONS, SCHEMA_VERSION, BinaryRow, KernelRow, SchemaMismatch
from .reference import first_release_years, kernel_release_dates

AXES = ("vendor", "arch", "binary_class", "device_type", "time_bucket", "libc")
EXECUTABLE_ONLY = frozenset({"nx", "pie"})
UNKNOWN = "unknown"


class _Undefined:
    """Rate of an empty applicable set.  Distinct from 0 and never equal to a number."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Undefined"

    def __bool__(self) -> bool:
        return False


UNDEFINED = _Undefined()


class InsufficientVersions(Exception):
    pass


@dataclass(frozen=True)
class Rate:
    numerator: int
    denominator: int

    def __post_init__(self):
        if not 0 <= self.numerator <= self.denominator:
            raise ValueError(f"invalid counts {self.numerator}/{self.denominator}")

    @property
    def defined(self) -> bool:
        return self.denominator > 0

    @property
    def value(self) -> Union[float, _Undefined]:
        return self.numerator / self.denominator if self.denominator else UNDEFINED

    @property
    def exact(self) -> Union[Fraction, _Undefined]:
        return Fraction(self.numerator, self.denominator) if self.denominator else UNDEFINED

    def to_dict(self) -> dict:
        return {"numerator": self.numerator, "denominator": self.denominator,
                "rate": self.value if self.defined else None}


# -- applicability -------------------------------------------------------------

@dataclass(frozen=True)
class ApplicabilityPolicy:
    release_cutoff: bool = True
    executables_only: frozenset = EXECUTABLE_ONLY
    exclude_uclibc_fortify: bool = False

    def applicable(self, row: BinaryRow, mitigation: str) -> bool:
        status = row.status(mitigation)
        if status in ("Unknown", "NotApplicable"):
            return False
        if mitigation in self.executables_only and row.role != "executable":
            return False
        if self.release_cutoff and row.release_date is not None:
            if row.release_date.year < first_release_years()[mitigation]:
                return False
        if self.exclude_uclibc_fortify and mitigation == "fortify" and row.libc == "uclibc":
            return False
        return True


DEFAULT_POLICY = ApplicabilityPolicy()


def adopted(row: BinaryRow, mitigation: str) -> bool:
    """Protected; for RELRO that means Partial or Full."""
    if mitigation == "relro":
        return row.relro_level in ("Partial", "Full")
    return row.status(mitigation) == "Protected"


def time_bucket(date: Optional[dt.date]) -> str:
    """Two-calendar-year buckets, everything before 2010 pooled into "~2010"."""
    if date is None:
        return UNKNOWN
    if date.year < 2010:
        return "~2010"
    start = date.year - date.year % 2
    return f"{start}-{start + 1}"


def axis_value(row: BinaryRow, axis: str) -> str:
    if axis == "time_bucket":
        return time_bucket(row.release_date)
    if axis == "binary_class":
        return row.binary_class
    value = getattr(row, axis)
    return value if value else UNKNOWN


Predicate = Callable[[BinaryRow], bool]


@dataclass(frozen=True)
class RateQuery:
    mitigation: str
    filters: Mapping[str, frozenset] = field(default_factory=dict)
    predicates: tuple[Predicate, ...] = ()
    policy: ApplicabilityPolicy = DEFAULT_POLICY

    def __post_init__(self):
        if self.mitigation not in MITIGATIONS:
            raise ValueError(f"unknown mitigation {self.mitigation!r}")
        for axis in self.filters:
            if axis not in AXES:
                raise ValueError(f"unknown filter axis {axis!r}")

    def selects(self, row: BinaryRow) -> bool:
        for axis, allowed in self.filters.items():
            if axis_value(row, axis) not in allowed:
                return False
        return all(p(row) for p in self.predicates)


def adoption_rate(records: Iterable[BinaryRow], query: RateQuery) -> Rate:
    num = den = 0
    for row in records:
        if not query.selects(row) or not query.policy.applicable(row, query.mitigation):
            continue
        den += 1
        num += adopted(row, query.mitigation)
    return Rate(num, den)


# -- breakdowns ----------------------------------------------------------------

@dataclass
class Breakdown:
    axis: str
    mitigations: tuple[str, ...]
    rows: dict[str, dict[str, Rate]]
    pooled: dict[str, Rate]

    def group_average(self, mitigation: str) -> Union[float, _Undefined]:
        """Unweighted mean over groups with a defined rate ("Ave (Vendor)")."""
        # fixed key order so the float sum does not depend on input order
        vals = [self.rows[k][mitigation].value for k in sorted(self.rows) if self.rows[k][mitigation].defined]
        return math.fsum(vals) / len(vals) if vals else UNDEFINED

    def to_table(self) -> list[dict]:
        out = []
        for key in sorted(self.rows):
            row = {self.axis: key}
            for m in self.mitigations:
                rate = self.rows[key][m]
                row[m] = rate.value if rate.defined else None
                row[f"{m}_n"] = rate.denominator
            out.append(row)
        avg = {self.axis: f"Ave ({self.axis.replace('_', ' ').title()})"}
        pooled = {self.axis: "Ave (Binary)"}
        for m in self.mitigations:
            g = self.group_average(m)
            avg[m] = g if g is not UNDEFINED else None
            avg[f"{m}_n"] = sum(1 for r in self.rows.values() if r[m].defined)
            pooled[m] = self.pooled[m].value if self.pooled[m].defined else None
            pooled[f"{m}_n"] = self.pooled[m].denominator
        return out + [avg, pooled]


def breakdown(records: Iterable[BinaryRow], axis: str, mitigations: Sequence[str] = MITIGATIONS,
              policy: ApplicabilityPolicy = DEFAULT_POLICY) -> Breakdown:
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}")
    records = list(records)
    groups: dict[str, list[BinaryRow]] = defaultdict(list)
    for row in records:
        groups[axis_value(row, axis)].append(row)
    rows = {key: {m: adoption_rate(members, RateQuery(m, policy=policy)) for m in mitigations}
            for key, members in groups.items()}
    pooled = {m: adoption_rate(records, RateQuery(m, policy=policy)) for m in mitigations}
    return Breakdown(axis, tuple(mitigations), rows, pooled)


# -- mergeable aggregates ------------------------------------------------------

Cell = tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class PartialAggregate:
    """Numerator/denominator counters per (mitigation, cell); merge is cellwise addition."""

    axes: tuple[str, ...] = AXES
    counts: Mapping[tuple[str, Cell], tuple[int, int]] = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    @classmethod
    def empty(cls, axes: Sequence[str] = AXES) -> "PartialAggregate":
        return cls(tuple(axes), {})

    @classmethod
    def from_records(cls, records: Iterable[BinaryRow], axes: Sequence[str] = AXES,
                     policy: ApplicabilityPolicy = DEFAULT_POLICY) -> "PartialAggregate":
        counts: dict[tuple[str, Cell], list[int]] = defaultdict(lambda: [0, 0])
        for row in records:
            cells = [()] + [((a, axis_value(row, a)),) for a in axes]
            for m in MITIGATIONS:
                if not policy.applicable(row, m):
                    continue
                hit = adopted(row, m)
                for cell in cells:
                    c = counts[(m, cell)]
                    c[0] += hit
                    c[1] += 1
        return cls(tuple(axes), {k: (v[0], v[1]) for k, v in counts.items()})

    def rate(self, mitigation: str, cell: Cell = ()) -> Rate:
        num, den = self.counts.get((mitigation, tuple(cell)), (0, 0))
        return Rate(num, den)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "axes": list(self.axes),
            "cells": [{"mitigation": m, "cell": [list(p) for p in cell], "numerator": n, "denominator": d}
                      for (m, cell), (n, d) in sorted(self.counts.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartialAggregate":
        counts = {(c["mitigation"], tuple(tuple(p) for p in c["cell"])): (c["numerator"], c["denominator"])
                  for c in d["cells"]}
        return cls(tuple(d["axes"]), counts, d["schema_version"])


def merge(a: PartialAggregate, b: PartialAggregate) -> PartialAggregate:
    if a.schema_version.split(".")[0] != b.schema_version.split(".")[0] or a.axes != b.axes:
        raise SchemaMismatch(f"cannot merge aggregates ({a.schema_version}, {a.axes}) and "
                             f"({b.schema_version}, {b.axes})")
    counts = dict(a.counts)
    for key, (n, d) in b.counts.items():
        n0, d0 = counts.get(key, (0, 0))
        counts[key] = (n0 + n, d0 + d)
    return PartialAggregate(a.axes, counts, a.schema_version)


# -- evolution -----------------------------------------------------------------

@dataclass(frozen=True)
class EvolutionScore:
    vendor: str
    product: str
    mitigation: str
    earliest_image: str
    latest_image: str
    earliest_version_rate: float
    latest_version_rate: float

    @property
    def family(self) -> tuple[str, str]:
        return (self.vendor, self.product)

    @property
    def score(self) -> float:
        return self.latest_version_rate - self.earliest_version_rate

    def to_dict(self) -> dict:
        return {"vendor": self.vendor, "product": self.product, "mitigation": self.mitigation,
                "earliest_image": self.earliest_image, "latest_image": self.latest_image,
                "earliest_version_rate": self.earliest_version_rate,
                "latest_version_rate": self.latest_version_rate, "score": self.score}


@dataclass(frozen=True)
class Firmware:
    image_id: str
    vendor: str
    product: str
    firmware_version: str
    release_date: Optional[dt.date]
    binaries: tuple[BinaryRow, ...]


def firmware_families(records: Iterable[BinaryRow]) -> dict[tuple[str, str], list[Firmware]]:
    images: dict[str, list[BinaryRow]] = defaultdict(list)
    for row in records:
        images[row.image_id].append(row)
    families: dict[tuple[str, str], list[Firmware]] = defaultdict(list)
    for image_id in sorted(images):
        rows = sorted(images[image_id], key=lambda r: (r.path, r.digest, r.statuses))
        first = rows[0]  # image metadata is per image; take it from a fixed row
        fw = Firmware(image_id, first.vendor, first.product, first.firmware_version, first.release_date, tuple(rows))
        families[(first.vendor, first.product)].append(fw)
    return families


def _ends(firmwares: list[Firmware]) -> tuple[Firmware, Firmware]:
    dated = sorted((f for f in firmwares if f.release_date is not None),
                   key=lambda f: (f.release_date, f.firmware_version, f.image_id))
    if len(dated) < 2:
        raise InsufficientVersions(f"{len(dated)} dated firmware versions")
    return dated[0], dated[-1]


@dataclass
class EvolutionResult:
    scores: list[EvolutionScore]
    skipped: int


def evolution_scores(records: Iterable[BinaryRow], mitigation: str,
                     policy: ApplicabilityPolicy = DEFAULT_POLICY) -> EvolutionResult:
    """Change in adoption between each family's earliest and latest dated firmware."""
    scores, skipped = [], 0
    for (vendor, product), fws in sorted(firmware_families(records).items()):
        try:
            first, last = _ends(fws)
        except InsufficientVersions:
            skipped += 1
            continue
        r0 = adoption_rate(first.binaries, RateQuery(mitigation, policy=policy))
        r1 = adoption_rate(last.binaries, RateQuery(mitigation, policy=policy))
        if not (r0.defined and r1.defined):
            skipped += 1
            continue
        scores.append(EvolutionScore(vendor, product, mitigation, first.image_id, last.image_id, r0.value, r1.value))
    scores.sort(key=lambda s: (s.score, s.vendor, s.product))
    return EvolutionResult(scores, skipped)


# -- versioned binaries --------------------------------------------------------

CHANGE_KINDS = ("no_change", "positive", "negative")


@dataclass
class VersionedChanges:
    by_name: dict[str, Counter]
    identical_content: int
    matched: int
    families: int

    def to_table(self) -> list[dict]:
        return [{"mitigation": m, **{k: self.by_name[m][k] for k in CHANGE_KINDS}} for m in self.by_name]


def _by_name(fw: Firmware) -> dict[str, BinaryRow]:
    out: dict[str, BinaryRow] = {}
    for row in fw.binaries:  # sorted by path: the first path wins for duplicate names
        out.setdefault(row.name, row)
    return out


def versioned_binary_changes(records: Iterable[BinaryRow],
                             mitigations: Sequence[str] = MITIGATIONS) -> VersionedChanges:
    """Per-mitigation change of binaries (same name) between earliest and latest firmware.

    A verdict other than adopted counts as absent.  Pairs where either side
    is Unknown are left out for that mitigation.
    """
    by_name = {m: Counter({k: 0 for k in CHANGE_KINDS}) for m in mitigations}
    identical = matched = families = 0
    for _, fws in sorted(firmware_families(records).items()):
        try:
            first, last = _ends(fws)
        except InsufficientVersions:
            continue
        families += 1
        old, new = _by_name(first), _by_name(last)
        for name in sorted(old.keys() & new.keys()):
            a, b = old[name], new[name]
            matched += 1
            identical += a.digest == b.digest
            for m in mitigations:
                if "Unknown" in (a.status(m), b.status(m)):
                    continue
                before, after = adopted(a, m), adopted(b, m)
                kind = "no_change" if before == after else ("positive" if after else "negative")
                by_name[m][kind] += 1
    return VersionedChanges(by_name, identical, matched, families)


# -- reuse ---------------------------------------------------------------------

@dataclass
class ReuseStats:
    per_vendor: dict[str, dict]
    histogram: dict[int, int]
    matrix: dict[str, dict[str, int]]
    total: int
    distinct: int

    def to_dict(self) -> dict:
        return {"per_vendor": self.per_vendor, "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
                "matrix": self.matrix, "total": self.total, "distinct": self.distinct}


def _digest_vendors(records: Iterable[BinaryRow]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = defaultdict(set)
    for row in records:
        out[row.digest].add(row.vendor)
    return out


def reuse_stats(records: Iterable[BinaryRow]) -> ReuseStats:
    """Uniqueness by content digest per vendor, and how digests spread across vendors.

    The vendor matrix is symmetric; its diagonal is 0 by convention (a
    vendor's own duplicates show up in the per-vendor ratio instead).
    """
    records = list(records)
    totals = Counter(r.vendor for r in records)
    digests: dict[str, set[str]] = defaultdict(set)
    for r in records:
        digests[r.vendor].add(r.digest)
    per_vendor = {v: {"total": totals[v], "unique": len(digests[v]), "ratio": len(digests[v]) / totals[v]}
                  for v in sorted(totals)}
    spread = _digest_vendors(records)
    histogram = Counter(len(vs) for vs in spread.values())
    vendors = sorted(totals)
    matrix = {a: {b: 0 for b in vendors} for a in vendors}
    for vs in spread.values():
        for a, b in itertools.permutations(sorted(vs), 2):
            matrix[a][b] += 1
    return ReuseStats(per_vendor, dict(sorted(histogram.items())), matrix, len(records), len(spread))


def shared_binary_rates(records: Iterable[BinaryRow], mitigations: Sequence[str] = MITIGATIONS,
                        policy: ApplicabilityPolicy = DEFAULT_POLICY) -> dict[str, Rate]:
    """Adoption over digests found at two or more vendors, each digest counted once.

    The representative of a digest is its earliest-released copy, so the
    release cutoff is judged on the first time it shipped.
    """
    records = list(records)
    spread = _digest_vendors(records)
    reps: dict[str, BinaryRow] = {}
    for row in sorted(records, key=lambda r: (r.release_date or dt.date.max, r.vendor, r.image_id, r.path)):
        if len(spread[row.digest]) >= 2:
            reps.setdefault(row.digest, row)
    chosen = [reps[d] for d in sorted(reps)]
    return {m: adoption_rate(chosen, RateQuery(m, policy=policy)) for m in mitigations}


# -- kernels -------------------------------------------------------------------

def months_between(start: dt.date, end: dt.date) -> int:
    """Whole calendar months from ``start`` to ``end``; negative when ``end`` is earlier."""
    months = (end.year - start.year) * 12 + (end.month - start.month)
    return months - (1 if end.day < start.day else 0)


def release_key(version: str) -> str:
    parts = version.split(".")
    if parts[:2] == ["2", "6"] and len(parts) > 2:
        return "2.6." + parts[2]
    return ".".join(parts[:2])


@dataclass
class KernelGap:
    per_vendor: dict[str, dict]
    gaps: list[tuple[str, str, int]]
    excluded: int
    diagnostics: list[str]

    def to_table(self) -> list[dict]:
        return [{"vendor": v, **s} for v, s in sorted(self.per_vendor.items())]


def kernel_gap(kernels: Iterable[KernelRow], release_dates: Optional[Mapping[str, dt.date]] = None) -> KernelGap:
    """Months from upstream release of each kernel's version to its build date."""
    table = release_dates if release_dates is not None else kernel_release_dates()
    by_vendor: dict[str, list[int]] = defaultdict(list)
    gaps, diagnostics, excluded = [], [], 0
    for k in kernels:
        released = table.get(release_key(k.version)) if k.version else None
        if released is None or k.build_date is None:
            excluded += 1
            continue
        gap = months_between(released, k.build_date)
        if gap < 0:
            diagnostics.append(f"{k.image_id}: build {k.build_date} predates release of {k.version} "
                               f"({released}); gap clamped to 0")
            gap = 0
        by_vendor[k.vendor].append(gap)
        gaps.append((k.vendor, k.image_id, gap))
    per_vendor = {v: {"count": len(g), "mean": sum(g) / len(g), "min": min(g), "max": max(g)}
                  for v, g in sorted(by_vendor.items())}
    return KernelGap(per_vendor, gaps, excluded, diagnostics)


def kernel_summary(kernels: Iterable[KernelRow]) -> dict[str, dict[str, int]]:
    """Per kernel mitigation: analysed, unsupported, protected, not protected and unknown counts."""
    kernels = list(kernels)
    names = sorted({m for k in kernels for m, _ in k.statuses})
    out = {}
    for m in names:
        c = Counter(dict(k.statuses).get(m, "Unknown") for k in kernels)
        out[m] = {"analyzed": len(kernels), "unsupported": c["Unsupported"], "protected": c["Protected"],
                  "not_protected": c["NotProtected"], "unknown": c["Unknown"]}
    return out


# -- output formats ------------------------------------------------------------

_MISSING = object()


def _cell(value) -> str:
    if value is _MISSING:
        return ""
    if value is None or value is UNDEFINED:
        return "Undefined"
    if isinstance(value, float):
        return repr(round(value, 6))
    return str(value)


def table_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    columns = list(rows[0])
    for row in rows[1:]:
        columns += [c for c in row if c not in columns]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c, _MISSING)) for c in columns])
    return buf.getvalue()


def table_to_json(rows) -> str:
    return json.dumps(rows, indent=1, sort_keys=True, default=lambda v: None if v is UNDEFINED else str(v)) + "\n"


def series_to_csv(points: Iterable[tuple], header=("x", "y")) -> str:
    """Plot data: one (x, y) pair per line."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for x, y in points:
        writer.writerow([_cell(x), _cell(y)])
    return buf.getvalue()


def time_series(records: Iterable[BinaryRow], mitigation: str,
                policy: ApplicabilityPolicy = DEFAULT_POLICY) -> list[tuple[str, Optional[float]]]:
    b = breakdown(records, "time_bucket", (mitigation,), policy)
    keys = sorted(b.rows, key=lambda k: (k == UNKNOWN, k != "~2010", k))
    return [(k, b.rows[k][mitigation].value if b.rows[k][mitigation].defined else None) for k in keys]
