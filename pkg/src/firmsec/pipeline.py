"""Scan driver: firmware inputs in, NDJSON records out.

Each input (archive, blob, directory or manifest row) is one firmware
image.  Images are independent, so they are fanned out to worker
processes and the results are put back in a fixed order before writing.
"""

from __future__ import annotations

import datetime as dt
import os
import re
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .elf import ELF_MAGIC, PT_DYNAMIC, PT_INTERP, ElfError, parse_elf
from .kernel import NoVersionFound, analyze_kernel, kernel_record_to_dict
from .mitigations import analyze_view
from .records import dumps, make_record
from .unpack import (
    CarveStats,
    FirmwareRecord,
    carve_configs,
    carve_elves,
    carve_kernels,
    expand_archive,
    ingest_manifest,
    iter_tree,
    looks_encrypted_or_nonlinux,
)

TMPDIR_ENV = "FIRMSEC_TMPDIR"
RECORDS_FILE = "records.ndjson"
SUMMARY_FILE = "summary.json"
KERNEL_SYMBOLS = frozenset({"start_kernel", "linux_banner"})
_KIND_ORDER = {"firmware": 0, "binary": 1, "kernel": 2, "error": 3}
_BANNER_RE = re.compile(rb"Linux version \d+\.\d+")


@dataclass(frozen=True)
class ScanOptions:
    kallsyms: bool = True
    carve: bool = True
    rar: bool = False


@dataclass(frozen=True)
class ImageTask:
    """One firmware image to scan; metadata comes from a manifest row or is blank."""

    image_id: str
    source_path: str
    vendor: str = ""
    product: str = ""
    firmware_version: str = ""
    release_date: Optional[dt.date] = None
    device_type: str = "unknown"

    @property
    def meta(self) -> dict:
        return {
            "image_id": self.image_id,
            "vendor": self.vendor,
            "product": self.product,
            "firmware_version": self.firmware_version,
            "release_date": self.release_date.isoformat() if self.release_date else None,
            "device_type": self.device_type,
        }

    def firmware_record(self) -> FirmwareRecord:
        return FirmwareRecord(self.image_id, self.vendor, self.product, self.firmware_version,
                              self.release_date, self.device_type, self.source_path)


@dataclass
class ImageResult:
    records: list[dict]
    processed: bool
    status: Optional[str] = None


@dataclass
class ScanSummary:
    inputs: int = 0
    images: int = 0
    unpacked: int = 0
    nothing_recognized: int = 0
    encrypted_or_nonlinux: int = 0
    binaries: int = 0
    kernels: int = 0
    errors: int = 0
    flagged_manifest_rows: int = 0
    timestamp: str = field(default_factory=lambda: dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def is_kernel_elf(view, data: bytes) -> bool:
    """A vmlinux: carries a version banner and either kernel entry symbols or no dynamic linking."""
    if not _BANNER_RE.search(data):
        return False
    if KERNEL_SYMBOLS & {s.name for s in view.static_symbols}:
        return True
    return not view.segments_of_type(PT_INTERP) and not view.segments_of_type(PT_DYNAMIC)


def tasks_from_inputs(inputs: Iterable[str]) -> list[ImageTask]:
    return [ImageTask(os.path.normpath(p), str(p)) for p in inputs]


def tasks_from_manifest(path: str) -> tuple[list[ImageTask], list[tuple[int, str]]]:
    result = ingest_manifest(path)
    tasks = [ImageTask(r.image_id, r.source_path, r.vendor, r.product, r.firmware_version, r.release_date,
                       r.device_type) for r in result.records]
    return tasks, result.flagged


def _leaves(source: Path, opts: ScanOptions, errors: list, diagnostics: list) -> Iterator[tuple[str, bytes]]:
    disabled = frozenset() if opts.rar else frozenset({"rar"})
    if source.is_dir():
        for rel, path in iter_tree(source, diagnostics):
            try:
                data = path.read_bytes()
            except OSError as exc:
                diagnostics.append(f"{rel}: {exc}")
                continue
            yield from expand_archive(data, errors=errors, name=rel, disabled=disabled)
    else:
        yield from expand_archive(source.read_bytes(), errors=errors, name="", disabled=disabled)


def scan_image(task: ImageTask, opts: ScanOptions = ScanOptions()) -> ImageResult:
    """Unpack one image and analyse every binary and kernel in it."""
    if os.environ.get(TMPDIR_ENV):
        tempfile.tempdir = os.environ[TMPDIR_ENV]
    meta = task.meta
    fw = task.firmware_record()
    source = Path(task.source_path)
    if not source.exists():
        err = make_record("error", {"path": task.source_path, "error": "FileNotFoundError",
                                    "message": "input does not exist"}, meta)
        return ImageResult([err], processed=False)

    records: list[dict] = []
    errors: list = []
    stats = CarveStats()
    kernel_blobs: list[tuple[str, bytes]] = []
    configs: list[str] = []
    seen_kernels: set[bytes] = set()
    blob_sample = b""

    def error(path: str, exc: BaseException) -> None:
        records.append(make_record("error", {"path": path, "error": type(exc).__name__, "message": str(exc)}, meta))

    def add_kernel(path: str, data: bytes) -> None:
        if data not in seen_kernels:
            seen_kernels.add(data)
            kernel_blobs.append((path, data))

    try:
        leaves = list(_leaves(source, opts, errors, fw.diagnostics))
    except OSError as exc:
        error(task.source_path, exc)
        return ImageResult(records, processed=False)

    for path, data in leaves:
        name = path or source.name
        if data[:4] == ELF_MAGIC:
            try:
                view = parse_elf(data)
            except ElfError as exc:
                error(name, exc)
                continue
            if is_kernel_elf(view, data):
                add_kernel(name, data)
                continue
            try:
                report = analyze_view(view, name)
            except Exception as exc:  # a detector bug must not sink the whole image
                error(name, exc)
                continue
            records.append(make_record("binary", report.to_dict(), meta))
            fw.binaries.append(name)
            continue
        blob_sample = blob_sample or data[:1 << 20]
        if not opts.carve:
            continue
        for art in carve_configs(data, name):
            configs.append(art.bytes.decode("utf-8", "replace"))
        for art in carve_kernels(data, name, stats):
            add_kernel(f"{name}@{art.offset:#x}" if art.note != "uncompressed" else name, art.bytes)
        for art in carve_elves(data, name, stats):
            sub = f"{name}@{art.offset:#x}"
            try:
                report = analyze_view(parse_elf(art.bytes), sub)
            except ElfError as exc:
                error(sub, exc)
                continue
            records.append(make_record("binary", report.to_dict(), meta))
            fw.binaries.append(sub)

    config_text = configs[0] if len(configs) == 1 else None
    if len(configs) > 1:
        fw.diagnostics.append(f"{len(configs)} kernel configs found; none attached to kernels")
    for path, data in kernel_blobs:
        try:
            krec = analyze_kernel(data, config_text=config_text, path=path, use_kallsyms=opts.kallsyms)
        except NoVersionFound as exc:
            stats.kernel_failed_candidates += 1
            stats.notes.append(f"{path}: {exc}")
            continue
        except Exception as exc:
            error(path, exc)
            continue
        records.append(make_record("kernel", kernel_record_to_dict(krec), meta))
        fw.kernels.append(path)

    fw.diagnostics.extend(str(e) for e in errors)
    if stats.elf_false_positives or stats.kernel_failed_candidates:
        fw.diagnostics.append(f"carving rejected {stats.elf_false_positives} ELF and "
                              f"{stats.kernel_failed_candidates} kernel candidates")
    fw.finalize(looks_encrypted_or_nonlinux(blob_sample, errors))
    records.append(make_record("firmware", fw.to_dict(), meta))
    return ImageResult(records, processed=True, status=fw.unpack_status.value)


def record_sort_key(rec: dict) -> tuple:
    return (str(rec.get("image_id", "")), _KIND_ORDER.get(rec.get("kind"), 9), str(rec.get("path", "")),
            str(rec.get("digest", "")), dumps(rec))


def _scan_one(args) -> ImageResult:
    task, opts = args
    return scan_image(task, opts)


def run_scan(tasks: list[ImageTask], opts: ScanOptions = ScanOptions(), jobs: int = 1) -> tuple[list[dict], ScanSummary]:
    """Scan all images; returns records in canonical order and the run summary."""
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    work = [(t, opts) for t in sorted(tasks, key=lambda t: t.image_id)]
    if jobs == 1 or len(work) < 2:
        results = [_scan_one(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            # map keeps submission order, so output does not depend on scheduling
            results = list(pool.map(_scan_one, work, chunksize=1))
    summary = ScanSummary(inputs=len(tasks))
    records: list[dict] = []
    for res in results:
        records.extend(res.records)
        if res.processed:
            summary.images += 1
        if res.status:
            setattr(summary, res.status, getattr(summary, res.status) + 1)
    for rec in records:
        kind = rec["kind"]
        if kind == "binary":
            summary.binaries += 1
        elif kind == "kernel":
            summary.kernels += 1
        elif kind == "error":
            summary.errors += 1
    records.sort(key=record_sort_key)
    return records, summary


def write_records(records: list[dict], path: os.PathLike | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
