"""Firmware unpacking: archive expansion, carving, tree walking, manifests."""

from __future__ import annotations

import bz2
import csv
import datetime as dt
import enum
import hashlib
import io
import json
import lzma
import os
import re
import struct
import tarfile
import zipfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Callable, Iterator, Optional

from .elf import ELF_MAGIC, ElfError, parse_elf
from .kconfig import IKCFG_START, extract_ikconfig, looks_like_kconfig
from .reference import device_types, kernel_signatures

DEFAULT_DEPTH = 4
# cap on any single decompressed stream, against decompression bombs
MAX_STREAM = 512 << 20
FIRMWARE_EXTENSIONS = frozenset({"img", "bin", "rar", "pkg", "chk", "tar", "zip", "stk", "rmt"})
# byte markers of common non-Linux embedded operating systems
NONLINUX_MARKERS = (b"VxWorks", b"eCos", b"ThreadX", b"uC/OS", b"Nucleus PLUS", b"FreeRTOS")


class CorruptArchive(Exception):
    pass


class DepthExceeded(Exception):
    pass


class SchemaError(ValueError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class UnpackStatus(enum.Enum):
    UNPACKED = "unpacked"
    NOTHING_RECOGNIZED = "nothing_recognized"
    ENCRYPTED_OR_NONLINUX = "encrypted_or_nonlinux"


class ArtifactKind(enum.Enum):
    ELF = "elf"
    KERNEL_CANDIDATE = "kernel_candidate"
    CONFIG_FILE = "config_file"


@dataclass(frozen=True)
class CarvedArtifact:
    kind: ArtifactKind
    parent: str
    offset: int
    bytes: bytes = field(repr=False)
    note: str = ""


@dataclass
class CarveStats:
    elf_false_positives: int = 0
    kernel_failed_candidates: int = 0
    notes: list[str] = field(default_factory=list)


def md5(data: bytes) -> str:
    return hashlib.md5(data, usedforsecurity=False).hexdigest()


# -- archive expansion ---------------------------------------------------------

@dataclass(frozen=True)
class Handler:
    name: str
    sniff: Callable[[bytes, str], bool]
    expand: Callable[[bytes, str], list[tuple[str, bytes]]]


def _strip_suffix(name: str, suffixes: tuple[str, ...]) -> str:
    base = PurePosixPath(name).name or "stream"
    for suf in suffixes:
        if base.lower().endswith(suf):
            return base[: -len(suf)] or "stream"
    return base + ".out"


def _bounded(decompressor, data: bytes, what: str) -> bytes:
    out = decompressor.decompress(data, MAX_STREAM)
    if not decompressor.eof:
        raise CorruptArchive(f"{what}: truncated or oversized stream")
    return out


def _gunzip(data: bytes, name: str):
    d = zlib.decompressobj(16 + zlib.MAX_WBITS)
    try:
        out = d.decompress(data, MAX_STREAM)
    except zlib.error as exc:
        raise CorruptArchive(f"gzip: {exc}") from exc
    if not d.eof:
        raise CorruptArchive("gzip: truncated or oversized stream")
    return [(_strip_suffix(name, (".tgz", ".gz")) + (".tar" if name.lower().endswith(".tgz") else ""), out)]


def _bunzip(data: bytes, name: str):
    try:
        return [(_strip_suffix(name, (".bz2", ".tbz2")), _bounded(bz2.BZ2Decompressor(), data, "bzip2"))]
    except (OSError, ValueError) as exc:
        raise CorruptArchive(f"bzip2: {exc}") from exc


def _unxz(data: bytes, name: str):
    try:
        return [(_strip_suffix(name, (".xz", ".txz")), _bounded(lzma.LZMADecompressor(lzma.FORMAT_XZ), data, "xz"))]
    except lzma.LZMAError as exc:
        raise CorruptArchive(f"xz: {exc}") from exc


def _unlzma(data: bytes, name: str):
    try:
        return [(_strip_suffix(name, (".lzma",)), _bounded(lzma.LZMADecompressor(lzma.FORMAT_ALONE), data, "lzma"))]
    except lzma.LZMAError as exc:
        raise CorruptArchive(f"lzma: {exc}") from exc


def _untar(data: bytes, name: str):
    out = []
    try:
        with tarfile.open(fileobj=io.BytesIO(data), mode="r:") as tf:
            for member in tf:
                if not member.isreg():
                    continue
                fh = tf.extractfile(member)
                if fh is not None:
                    out.append((member.name.lstrip("./") or member.name, fh.read()))
    except (tarfile.TarError, EOFError, OSError) as exc:
        raise CorruptArchive(f"tar: {exc}") from exc
    return out


class EncryptedEntry(CorruptArchive):
    pass


def _unzip(data: bytes, name: str):
    out = []
    try:
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            for info in zf.infolist():
                if info.is_dir():
                    continue
                if info.flag_bits & 0x1:
                    raise EncryptedEntry(f"zip: encrypted entry {info.filename}")
                out.append((info.filename, zf.read(info)))
    except (zipfile.BadZipFile, zlib.error, EOFError, OSError, NotImplementedError) as exc:
        raise CorruptArchive(f"zip: {exc}") from exc
    return out


def _unrar(data: bytes, name: str):
    try:
        import rarfile  # optional; free RAR decoders are licence-encumbered
    except ImportError as exc:
        raise CorruptArchive("rar: support not installed (pip install rarfile)") from exc
    out = []
    try:
        with rarfile.RarFile(io.BytesIO(data)) as rf:
            for info in rf.infolist():
                if not info.is_dir():
                    out.append((info.filename, rf.read(info)))
    except rarfile.Error as exc:
        raise CorruptArchive(f"rar: {exc}") from exc
    return out


def _is_lzma_alone(data: bytes, name: str) -> bool:
    # properties byte 0x5d, dictionary size a power of two, size field sane
    if len(data) < 13 or data[0] != 0x5D:
        return False
    dict_size = struct.unpack_from("<I", data, 1)[0]
    return dict_size >= 1 << 12 and dict_size & (dict_size - 1) == 0


HANDLERS: list[Handler] = [
    Handler("gzip", lambda d, n: d[:3] == b"\x1f\x8b\x08", _gunzip),
    Handler("bzip2", lambda d, n: d[:3] == b"BZh" and d[3:4].isdigit() and d[4:10] == b"1AY&SY", _bunzip),
    Handler("xz", lambda d, n: d[:6] == b"\xfd7zXZ\x00", _unxz),
    Handler("lzma", _is_lzma_alone, _unlzma),
    Handler("zip", lambda d, n: d[:4] == b"PK\x03\x04", _unzip),
    Handler("tar", lambda d, n: d[257:262] == b"ustar", _untar),
    Handler("rar", lambda d, n: d[:7] == b"Rar!\x1a\x07\x00" or d[:8] == b"Rar!\x1a\x07\x01\x00", _unrar),
]


def register_handler(handler: Handler, first: bool = True) -> None:
    """Add a container format; earlier handlers win when several sniff true."""
    if first:
        HANDLERS.insert(0, handler)
    else:
        HANDLERS.append(handler)


def _handler_for(data: bytes, name: str) -> Optional[Handler]:
    for h in HANDLERS:
        if h.sniff(data, name):
            return h
    return None


def expand_archive(data: bytes, depth_limit: int = DEFAULT_DEPTH, errors: Optional[list] = None,
                   name: str = "", disabled: frozenset = frozenset()) -> list[tuple[str, bytes]]:
    """Recursively expand containers; returns the leaf files as (path, bytes).

    Non-container inputs come back unchanged as a single leaf.  Corrupt
    containers and nesting past ``depth_limit`` are recorded in ``errors``
    (when given) and passed through as opaque leaves, as are containers whose
    handler name is in ``disabled``.  Expansion memoises on
    content digest, so an archive that contains itself terminates.
    """
    if depth_limit < 1:
        raise ValueError("depth_limit must be >= 1")
    errors = errors if errors is not None else []
    memo: dict[str, list[tuple[str, bytes]]] = {}
    active: set[str] = set()

    def walk(blob: bytes, path: str, depth: int) -> list[tuple[str, bytes]]:
        handler = _handler_for(blob, path)
        if handler is None:
            return [(path, blob)]
        if handler.name in disabled:
            errors.append(CorruptArchive(f"{path or '<input>'}: {handler.name} support disabled"))
            return [(path, blob)]
        digest = md5(blob)
        if digest in active:
            errors.append(CorruptArchive(f"{path or '<input>'}: container includes itself; not re-expanded"))
            return []
        if digest in memo:
            return [(_join(path, rel), b) for rel, b in memo[digest]]
        if depth >= depth_limit:
            errors.append(DepthExceeded(f"{path or '<input>'}: {handler.name} nested deeper than {depth_limit}"))
            return [(path, blob)]
        try:
            children = handler.expand(blob, path)
        except CorruptArchive as exc:
            errors.append(CorruptArchive(f"{path or '<input>'}: {exc}") if not isinstance(exc, EncryptedEntry) else exc)
            return [(path, blob)]
        active.add(digest)
        leaves = []
        for child_name, child in children:
            for rel, leaf in walk(child, child_name, depth + 1):
                leaves.append((rel, leaf))
        active.discard(digest)
        memo[digest] = leaves
        return [(_join(path, rel), b) for rel, b in leaves]

    return walk(bytes(data), name, 0)


def _join(parent: str, rel: str) -> str:
    if not parent:
        return rel
    return f"{parent}/{rel}" if rel else parent


# -- carving -------------------------------------------------------------------

def _elf_header_sane(data: bytes, off: int) -> bool:
    hdr = data[off:off + 64]
    if len(hdr) < 52 or hdr[:4] != ELF_MAGIC:
        return False
    ei_class, ei_data, ei_version = hdr[4], hdr[5], hdr[6]
    if ei_class not in (1, 2) or ei_data not in (1, 2) or ei_version != 1:
        return False
    if ei_class == 2 and len(hdr) < 64:
        return False
    order = "<" if ei_data == 1 else ">"
    e_type, e_machine, e_version = struct.unpack_from(order + "HHI", hdr, 16)
    if e_type not in (1, 2, 3, 4) or e_machine == 0 or e_version != 1:
        return False
    if ei_class == 1:
        ehsize, phentsize, phnum = struct.unpack_from(order + "HHH", hdr, 40)
        return ehsize == 52 and (phnum == 0 or phentsize == 32)
    ehsize, phentsize, phnum = struct.unpack_from(order + "HHH", hdr, 52)
    return ehsize == 64 and (phnum == 0 or phentsize == 56)


def carve_elves(data: bytes, parent: str = "", stats: Optional[CarveStats] = None) -> list[CarvedArtifact]:
    """ELF images embedded in a blob, each running to the next accepted header."""
    stats = stats if stats is not None else CarveStats()
    starts = []
    pos = data.find(ELF_MAGIC)
    while pos >= 0:
        if _elf_header_sane(data, pos):
            starts.append(pos)
        pos = data.find(ELF_MAGIC, pos + 1)
    out = []
    for i, start in enumerate(starts):
        end = starts[i + 1] if i + 1 < len(starts) else len(data)
        blob = data[start:end]
        try:
            parse_elf(blob)
        except ElfError as exc:
            stats.elf_false_positives += 1
            stats.notes.append(f"{parent}@{start:#x}: ELF magic rejected by parser ({exc})")
            continue
        out.append(CarvedArtifact(ArtifactKind.ELF, parent, start, blob))
    return out


_DECOMPRESSORS = {
    "gzip": lambda: zlib.decompressobj(16 + zlib.MAX_WBITS),
    "xz": lambda: lzma.LZMADecompressor(lzma.FORMAT_XZ),
    "lzma": lambda: lzma.LZMADecompressor(lzma.FORMAT_ALONE),
    "bzip2": lambda: bz2.BZ2Decompressor(),
}
_BANNER_RE = re.compile(rb"Linux version \d+\.\d+")


def _try_stream(kind: str, data: bytes) -> Optional[bytes]:
    d = _DECOMPRESSORS[kind]()
    try:
        out = d.decompress(data, MAX_STREAM)
    except (zlib.error, lzma.LZMAError, OSError, ValueError, EOFError):
        return None
    return out if d.eof else None


def carve_kernels(data: bytes, parent: str = "", stats: Optional[CarveStats] = None) -> list[CarvedArtifact]:
    """Kernel candidates: compressed streams whose plaintext carries a version banner.

    A blob that already contains the banner uncompressed is itself a
    candidate.  Streams that fail to decompress, or decompress to something
    without a banner, are dropped and counted.
    """
    stats = stats if stats is not None else CarveStats()
    sigs = kernel_signatures()
    out = []
    if _BANNER_RE.search(data):
        out.append(CarvedArtifact(ArtifactKind.KERNEL_CANDIDATE, parent, 0, data, "uncompressed"))
    for sig in sigs["compression"]:
        magic = bytes.fromhex(sig["magic"])
        pos = data.find(magic)
        while pos >= 0:
            plain = _try_stream(sig["name"], data[pos:])
            if plain is not None and _BANNER_RE.search(plain):
                out.append(CarvedArtifact(ArtifactKind.KERNEL_CANDIDATE, parent, pos, plain, sig["name"]))
            else:
                stats.kernel_failed_candidates += 1
                stats.notes.append(f"{parent}@{pos:#x}: {sig['name']} candidate rejected")
            pos = data.find(magic, pos + 1)
    return sorted(out, key=lambda a: a.offset)


def carve_configs(data: bytes, parent: str = "") -> list[CarvedArtifact]:
    """Kernel configs: IKCONFIG blobs or plain ``.config`` text."""
    out = []
    if IKCFG_START in data:
        text = extract_ikconfig(data)
        if text is not None:
            out.append(CarvedArtifact(ArtifactKind.CONFIG_FILE, parent, data.find(IKCFG_START), text.encode()))
    elif not data.startswith(ELF_MAGIC) and len(data) < (4 << 20):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError:
            return out
        if looks_like_kconfig(text):
            out.append(CarvedArtifact(ArtifactKind.CONFIG_FILE, parent, 0, data))
    return out


def looks_encrypted_or_nonlinux(data: bytes, errors: list) -> bool:
    if any(isinstance(e, EncryptedEntry) for e in errors):
        return True
    return any(m in data for m in NONLINUX_MARKERS)


# -- directory trees -----------------------------------------------------------

def iter_tree(root: os.PathLike | str, diagnostics: Optional[list[str]] = None) -> Iterator[tuple[str, Path]]:
    """Regular files under ``root`` as (relative path, path), sorted.

    Directory symlinks are followed once per real directory, which breaks
    loops.  File symlinks are skipped: their targets are counted where they
    really live, so busybox-style link farms do not inflate counts.
    """
    diagnostics = diagnostics if diagnostics is not None else []
    root = Path(root)
    seen: set[str] = set()

    def visit(directory: Path, rel: str) -> Iterator[tuple[str, Path]]:
        try:
            real = os.path.realpath(directory)
        except OSError as exc:
            diagnostics.append(f"{rel or '.'}: {exc}")
            return
        if real in seen:
            diagnostics.append(f"{rel or '.'}: symlink loop or repeated directory; skipped")
            return
        seen.add(real)
        try:
            entries = sorted(os.scandir(directory), key=lambda e: e.name)
        except OSError as exc:
            diagnostics.append(f"{rel or '.'}: {exc}")
            return
        for entry in entries:
            child_rel = f"{rel}/{entry.name}" if rel else entry.name
            try:
                if entry.is_dir(follow_symlinks=True):
                    yield from visit(Path(entry.path), child_rel)
                elif entry.is_file(follow_symlinks=False):
                    yield child_rel, Path(entry.path)
            except OSError as exc:
                diagnostics.append(f"{child_rel}: {exc}")

    yield from visit(root, "")


def walk_tree(root_dir: os.PathLike | str, diagnostics: Optional[list[str]] = None):
    """Scan every ELF file under ``root_dir``; returns the MitigationReports."""
    from .mitigations import scan_binary

    diagnostics = diagnostics if diagnostics is not None else []
    reports = []
    for rel, path in iter_tree(root_dir, diagnostics):
        try:
            with open(path, "rb") as fh:
                if fh.read(4) != ELF_MAGIC:
                    continue
                fh.seek(0)
                data = fh.read()
        except OSError as exc:
            diagnostics.append(f"{rel}: {exc}")
            continue
        try:
            reports.append(scan_binary(data, rel))
        except ElfError as exc:
            diagnostics.append(f"{rel}: {type(exc).__name__}: {exc}")
    return reports


# -- manifests -----------------------------------------------------------------

MANIFEST_FIELDS = ("image_id", "vendor", "product", "firmware_version", "release_date", "device_type", "file_path")
_REQUIRED = ("vendor", "product", "file_path")


@dataclass
class FirmwareRecord:
    image_id: str
    vendor: str
    product: str
    firmware_version: str
    release_date: Optional[dt.date]
    device_type: str
    source_path: str
    binaries: list[str] = field(default_factory=list)
    kernels: list[str] = field(default_factory=list)
    unpack_status: Optional[UnpackStatus] = None
    diagnostics: list[str] = field(default_factory=list)

    def finalize(self, encrypted_or_nonlinux: bool = False) -> None:
        if self.binaries or self.kernels:
            self.unpack_status = UnpackStatus.UNPACKED
        elif encrypted_or_nonlinux:
            self.unpack_status = UnpackStatus.ENCRYPTED_OR_NONLINUX
        else:
            self.unpack_status = UnpackStatus.NOTHING_RECOGNIZED

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "vendor": self.vendor,
            "product": self.product,
            "firmware_version": self.firmware_version,
            "release_date": self.release_date.isoformat() if self.release_date else None,
            "device_type": self.device_type,
            "source_path": self.source_path,
            "binaries": list(self.binaries),
            "kernels": list(self.kernels),
            "unpack_status": self.unpack_status.value if self.unpack_status else None,
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FirmwareRecord":
        date = dt.date.fromisoformat(d["release_date"]) if d.get("release_date") else None
        status = UnpackStatus(d["unpack_status"]) if d.get("unpack_status") else None
        return cls(d["image_id"], d.get("vendor", ""), d.get("product", ""), d.get("firmware_version", ""), date,
                   d.get("device_type", "unknown"), d.get("source_path", ""), list(d.get("binaries", ())),
                   list(d.get("kernels", ())), status, list(d.get("diagnostics", ())))


@dataclass
class ManifestResult:
    records: list[FirmwareRecord]
    flagged: list[tuple[int, str]]


def has_firmware_extension(path: str) -> bool:
    """True when any suffix is a firmware extension, so fw.tar.gz passes via .tar."""
    return any(s.lstrip(".").lower() in FIRMWARE_EXTENSIONS for s in PurePosixPath(path.replace("\\", "/")).suffixes)


def normalize_device_type(value: Optional[str]) -> str:
    if not value or not value.strip():
        return "unknown"
    wanted = " ".join(value.split()).lower()
    for known in device_types():
        if known.lower() == wanted:
            return known
    return "unknown"


def _manifest_rows(path: Path) -> list[dict]:
    text = path.read_text(encoding="utf-8-sig")
    if path.suffix.lower() == ".json" or text.lstrip().startswith("["):
        try:
            rows = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(exc.lineno, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(rows, list):
            raise SchemaError(0, "JSON manifest must be an array of objects")
        for i, row in enumerate(rows, 1):
            if not isinstance(row, dict):
                raise SchemaError(i, "entry is not an object")
        return rows
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise SchemaError(0, "empty manifest")
    missing = [f for f in _REQUIRED if f not in reader.fieldnames]
    if missing:
        raise SchemaError(1, f"header lacks columns {', '.join(missing)}")
    return list(reader)


def ingest_manifest(file: os.PathLike | str) -> ManifestResult:
    """Firmware stubs from a CSV (with header) or JSON-array manifest.

    Rows whose file name carries no firmware extension are flagged and left
    out.  Structural problems raise SchemaError with the 1-based data row.
    """
    path = Path(file)
    records, flagged = [], []
    seen_ids: set[str] = set()
    for n, row in enumerate(_manifest_rows(path), 1):
        row = {k.strip(): (v.strip() if isinstance(v, str) else v) for k, v in row.items() if k}
        for key in _REQUIRED:
            if not row.get(key):
                raise SchemaError(n, f"missing {key}")
        raw_date = row.get("release_date") or ""
        try:
            date = dt.date.fromisoformat(raw_date[:10]) if raw_date else None
        except ValueError as exc:
            raise SchemaError(n, f"release_date {raw_date!r} is not ISO-8601") from exc
        file_path = str(row["file_path"])
        if not has_firmware_extension(file_path):
            flagged.append((n, f"{file_path}: extension not in firmware list"))
            continue
        image_id = str(row.get("image_id") or f"{row['vendor']}/{row['product']}/{row.get('firmware_version', '')}/"
                       f"{PurePosixPath(file_path).name}")
        if image_id in seen_ids:
            raise SchemaError(n, f"duplicate image_id {image_id!r}")
        seen_ids.add(image_id)
        source = file_path
        if not os.path.isabs(source):
            source = str((path.parent / source))
        records.append(FirmwareRecord(
            image_id=image_id, vendor=str(row["vendor"]), product=str(row["product"]),
            firmware_version=str(row.get("firmware_version") or ""), release_date=date,
            device_type=normalize_device_type(row.get("device_type")), source_path=source))
    return ManifestResult(records, flagged)
