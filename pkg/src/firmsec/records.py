"""NDJSON record schema shared by the scanner and the statistics engine.

Every line is one JSON object with ``schema_version`` and ``kind``
(binary, kernel, firmware or error).  Records never carry wall-clock
timestamps, so rescanning the same inputs reproduces the same bytes.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Iterable, Iterator, Optional

SCHEMA_VERSION = "1.0"
KINDS = ("binary", "kernel", "firmware", "error")
MITIGATIONS = ("canary", "relro", "nx", "fortify", "pie")
RESULTS_GLOB = "*.ndjson"


class SchemaMismatch(ValueError):
    pass


def schema_major(version: str) -> str:
    return str(version).split(".", 1)[0]


def dumps(record: dict) -> str:
    """Canonical single-line JSON (sorted keys) for deterministic output."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def make_record(kind: str, body: dict, meta: Optional[dict] = None) -> dict:
    if kind not in KINDS:
        raise ValueError(f"unknown record kind {kind!r}")
    rec = {"schema_version": SCHEMA_VERSION, "kind": kind}
    if meta:
        rec.update(meta)
    rec.update(body)
    return rec


def read_ndjson(path: os.PathLike | str) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaMismatch(f"{path}:{lineno}: not JSON ({exc.msg})") from exc


def load_results(results: os.PathLike | str | Iterable[dict]) -> list[dict]:
    """All records from a results directory (or an iterable), refusing mixed major versions."""
    if isinstance(results, (str, os.PathLike)):
        root = Path(results)
        files = sorted(root.glob(RESULTS_GLOB)) if root.is_dir() else [root]
        records = [r for f in files for r in read_ndjson(f)]
    else:
        records = list(results)
    majors = {schema_major(r.get("schema_version", "?")) for r in records}
    if len(majors) > 1:
        raise SchemaMismatch(f"mixed schema versions: {sorted(majors)}")
    if majors and majors != {schema_major(SCHEMA_VERSION)}:
        raise SchemaMismatch(f"schema {majors.pop()} not supported (expected {SCHEMA_VERSION})")
    return records


def _date(value) -> Optional[dt.date]:
    if not value:
        return None
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value)[:10])


@dataclass(frozen=True)
class BinaryRow:
    """Flat view of one binary record for aggregation."""

    image_id: str
    vendor: str
    product: str
    firmware_version: str
    release_date: Optional[dt.date]
    device_type: str
    path: str
    digest: str
    arch: str
    linkage: str
    role: str
    libc: str
    statuses: tuple[tuple[str, str], ...]
    relro_level: str = "None"

    @property
    def name(self) -> str:
        return PurePosixPath(self.path).name

    @property
    def binary_class(self) -> str:
        return f"{self.linkage} {self.role}"

    def status(self, mitigation: str) -> str:
        return dict(self.statuses)[mitigation]

    @classmethod
    def from_record(cls, r: dict) -> "BinaryRow":
        cls_ = r.get("class", {})
        statuses = tuple((m, r[m]["status"]) for m in MITIGATIONS)
        return cls(
            image_id=str(r.get("image_id") or ""),
            vendor=str(r.get("vendor") or "unknown"),
            product=str(r.get("product") or "unknown"),
            firmware_version=str(r.get("firmware_version") or ""),
            release_date=_date(r.get("release_date")),
            device_type=str(r.get("device_type") or "unknown"),
            path=str(r.get("path") or ""),
            digest=str(r.get("digest") or ""),
            arch=str(r.get("arch") or "unknown"),
            linkage=str(cls_.get("linkage", "unknown")),
            role=str(cls_.get("role", "unknown")),
            libc=str(cls_.get("libc", "unknown")),
            statuses=statuses,
            relro_level=str(r["relro"].get("level") or "None"),
        )


@dataclass(frozen=True)
class KernelRow:
    image_id: str
    vendor: str
    product: str
    version: str
    build_date: Optional[dt.date]
    arch: str
    statuses: tuple[tuple[str, str], ...] = field(default=())

    def status(self, mitigation: str) -> str:
        return dict(self.statuses)[mitigation]

    @classmethod
    def from_record(cls, r: dict) -> "KernelRow":
        mits = r.get("mitigations", {})
        return cls(
            image_id=str(r.get("image_id") or ""),
            vendor=str(r.get("vendor") or "unknown"),
            product=str(r.get("product") or "unknown"),
            version=str(r.get("version") or ""),
            build_date=_date(r.get("build_date")),
            arch=str(r.get("arch") or "unknown"),
            statuses=tuple(sorted((k, v["status"]) for k, v in mits.items())),
        )


def split_records(records: Iterable[dict]) -> tuple[list[BinaryRow], list[KernelRow], list[dict]]:
    """Binary rows, kernel rows and firmware records, in a stable order."""
    binaries, kernels, firmware = [], [], []
    for r in records:
        kind = r.get("kind")
        if kind == "binary":
            binaries.append(BinaryRow.from_record(r))
        elif kind == "kernel":
            kernels.append(KernelRow.from_record(r))
        elif kind == "firmware":
            firmware.append(r)
    binaries.sort(key=lambda b: (b.vendor, b.image_id, b.path, b.digest))
    kernels.sort(key=lambda k: (k.vendor, k.image_id, k.version))
    firmware.sort(key=lambda f: str(f.get("image_id")))
    return binaries, kernels, firmware
