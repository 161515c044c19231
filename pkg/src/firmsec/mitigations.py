"""Per-binary detection of the five user-space exploit mitigations.

Dynamic and unstripped binaries are judged from symbols and relocations.
Static stripped binaries fall back to locating libc's abort message and
confirming that code both references it and is itself called.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .elf import (
    DF_1_NOW, DF_BIND_NOW, DT_BIND_NOW, DT_FLAGS, DT_FLAGS_1, PF_R, PF_W, PF_X, PT_GNU_RELRO, PT_GNU_STACK,
    BinaryClass, ElfType, ElfView, Libc, Linkage, Role, classify_binary, find_string, parse_elf,
)
from .reference import is_fortified_symbol
from .xrefs import UnsupportedArch, callers_of_region, scan_references

MITIGATIONS = ("canary", "relro", "nx", "fortify", "pie")

CANARY_SYMBOLS = frozenset({"__stack_chk_fail", "__stack_chk_fail_local"})
CANARY_MESSAGE = b"stack smashing detected"
FORTIFY_MESSAGE = b"buffer overflow detected"
# how far back to look for the start of the string that embeds a message
_STRING_BACKTRACK = 64


class Status(enum.Enum):
    PROTECTED = "Protected"
    NOT_PROTECTED = "NotProtected"
    NOT_APPLICABLE = "NotApplicable"
    UNKNOWN = "Unknown"


class Method(enum.Enum):
    SYMBOL = "symbol"
    RELOCATION = "relocation"
    STRING_HEURISTIC = "string_heuristic"
    HEADER = "header"
    CONFIG = "config"


class RelroLevel(enum.IntEnum):
    NONE = 0
    PARTIAL = 1
    FULL = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label: str) -> "RelroLevel":
        return cls[label.upper()]


@dataclass(frozen=True)
class MitigationVerdict:
    status: Status
    evidence: tuple[str, ...]
    method: Optional[Method]
    level: Optional[RelroLevel] = None

    @property
    def protected(self) -> bool:
        return self.status is Status.PROTECTED

    def to_dict(self) -> dict:
        d = {
            "status": self.status.value,
            "method": self.method.value if self.method else None,
            "evidence": list(self.evidence),
        }
        if self.level is not None:
            d["level"] = self.level.label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MitigationVerdict":
        level = RelroLevel.from_label(d["level"]) if d.get("level") else None
        method = Method(d["method"]) if d.get("method") else None
        return cls(Status(d["status"]), tuple(d.get("evidence", ())), method, level)


def _verdict(status: Status, method: Optional[Method], *evidence: str, level=None) -> MitigationVerdict:
    return MitigationVerdict(status, tuple(evidence), method, level)


def _not_applicable(cls: BinaryClass) -> MitigationVerdict:
    return _verdict(Status.NOT_APPLICABLE, Method.HEADER, f"role={cls.role.value}; only executables apply")


def _flags(seg) -> str:
    return "".join(c for c, bit in (("R", PF_R), ("W", PF_W), ("E", PF_X)) if seg.flags & bit)


# -- symbol and string evidence ------------------------------------------------

def _symbol_verdict(view: ElfView, match) -> Optional[MitigationVerdict]:
    relocs = sorted({r.symbol for r in view.relocations if match(r.symbol)})
    if relocs:
        return _verdict(Status.PROTECTED, Method.RELOCATION, *(f"relocation {n}" for n in relocs))
    dyn = sorted({s.name for s in view.dynamic_symbols if match(s.name)})
    static = sorted({s.name for s in view.static_symbols if match(s.name)} - set(dyn))
    if dyn or static:
        return _verdict(Status.PROTECTED, Method.SYMBOL,
                        *(f"dynamic symbol {n}" for n in dyn), *(f"static symbol {n}" for n in static))
    return None


def _string_span(raw: bytes, offset: int, length: int) -> tuple[int, int]:
    """File range of the NUL-terminated string containing raw[offset:offset+length]."""
    start = offset
    floor = max(0, offset - _STRING_BACKTRACK)
    while start > floor and raw[start - 1] not in (0, 0x0A):
        start -= 1
    end = raw.find(b"\0", offset + length)
    return start, (end if end >= 0 else offset + length)


def _string_heuristic(view: ElfView, message: bytes) -> MitigationVerdict:
    method = Method.STRING_HEURISTIC
    offsets = find_string(view, message)
    if not offsets:
        return _verdict(Status.NOT_PROTECTED, method, f"no \"{message.decode()}\" string")
    evidence = []
    try:
        for off in offsets:
            start, end = _string_span(view.raw_bytes, off, len(message))
            vaddr = view.offset_to_vaddr(start)
            if vaddr is None:
                continue
            refs = [r for r in scan_references(view, vaddr, vaddr + (end - start) + 1) if not r.is_call]
            if not refs:
                evidence.append(f"string at {vaddr:#x} has no code references")
                continue
            for ref in refs:
                callers = callers_of_region(view, ref)
                if callers:
                    return _verdict(
                        Status.PROTECTED, method,
                        f"string at {vaddr:#x} + {len(refs)} code refs",
                        f"referencing code at {ref.origin:#x} is called from {callers[0].site:#x}"
                        " (approximate called-by check)")
            evidence.append(f"string at {vaddr:#x} + {len(refs)} code refs, but no caller of the referencing code")
    except UnsupportedArch as exc:
        return _verdict(Status.UNKNOWN, method, f"no code-reference scanner for {exc}")
    return _verdict(Status.NOT_PROTECTED, method, *(evidence or [f"string not mapped by any PT_LOAD"]))


def _needs_heuristic(cls: BinaryClass) -> bool:
    return cls.linkage is Linkage.STATIC and cls.stripped


# -- detectors --------------------------------------------------------------

def detect_canary(view: ElfView, cls: BinaryClass, force_heuristic: bool = False) -> MitigationVerdict:
    if not force_heuristic:
        found = _symbol_verdict(view, lambda n: n in CANARY_SYMBOLS)
        if found is not None:
            return found
        if not _needs_heuristic(cls):
            return _verdict(Status.NOT_PROTECTED, Method.SYMBOL, "no __stack_chk_fail symbol or relocation")
    return _string_heuristic(view, CANARY_MESSAGE)


def detect_fortify(view: ElfView, cls: BinaryClass, force_heuristic: bool = False) -> MitigationVerdict:
    if force_heuristic:
        verdict = _string_heuristic(view, FORTIFY_MESSAGE)
    else:
        verdict = _symbol_verdict(view, is_fortified_symbol)
        if verdict is None:
            if _needs_heuristic(cls):
                verdict = _string_heuristic(view, FORTIFY_MESSAGE)
            else:
                verdict = _verdict(Status.NOT_PROTECTED, Method.SYMBOL, "no whitelisted __*_chk symbol")
    if verdict.status is Status.NOT_PROTECTED and cls.libc is Libc.UCLIBC:
        verdict = MitigationVerdict(verdict.status, verdict.evidence + ("libc lacks fortify support",), verdict.method)
    return verdict


def _bind_now_flags(view: ElfView) -> list[str]:
    found = []
    if view.dynamic_values(DT_BIND_NOW):
        found.append("DT_BIND_NOW")
    if any(v & DF_BIND_NOW for v in view.dynamic_values(DT_FLAGS)):
        found.append("BIND_NOW")
    if any(v & DF_1_NOW for v in view.dynamic_values(DT_FLAGS_1)):
        found.append("DF_1_NOW")
    return found


def detect_relro(view: ElfView) -> MitigationVerdict:
    def result(level, method, *evidence):
        status = Status.PROTECTED if level > RelroLevel.NONE else Status.NOT_PROTECTED
        return _verdict(status, method, *evidence, level=level)

    relros = view.segments_of_type(PT_GNU_RELRO)
    if not relros:
        return result(RelroLevel.NONE, Method.HEADER, "no PT_GNU_RELRO")
    relro = relros[0]
    where = f"PT_GNU_RELRO {relro.vaddr:#x}+{relro.memsz:#x} flags={_flags(relro)}"
    if relro.writable:
        return result(RelroLevel.NONE, Method.HEADER, where, "PT_GNU_RELRO is writable")
    bind_now = _bind_now_flags(view)
    now_atom = ("bind-now via " + ",".join(bind_now)) if bind_now else "no bind-now flag"

    if not view.sections_valid or not view.sections:
        level = RelroLevel.FULL if bind_now else RelroLevel.PARTIAL
        return result(level, Method.HEADER, where, now_atom, "section table unavailable; decided from program headers")

    got = view.section(".got")
    if got is not None and got.size and not relro.covers(got.addr, got.size):
        return result(RelroLevel.NONE, Method.HEADER, where, f".got {got.addr:#x}+{got.size:#x} outside PT_GNU_RELRO")
    got_atom = f".got {got.addr:#x}+{got.size:#x} inside PT_GNU_RELRO" if got is not None and got.size else "no .got"

    gotplt = view.section(".got.plt")
    if gotplt is not None and gotplt.size and not relro.covers(gotplt.addr, gotplt.size):
        seg = view.segment_for_vaddr(gotplt.addr)
        if seg is not None and seg.writable:
            return result(RelroLevel.PARTIAL, Method.HEADER, where, got_atom,
                          f".got.plt {gotplt.addr:#x} writable outside PT_GNU_RELRO", now_atom)
    if bind_now:
        return result(RelroLevel.FULL, Method.HEADER, where, got_atom, now_atom)
    return result(RelroLevel.PARTIAL, Method.HEADER, where, got_atom, now_atom)


def detect_nx(view: ElfView, cls: BinaryClass) -> MitigationVerdict:
    if cls.role is not Role.EXECUTABLE:
        return _not_applicable(cls)
    stacks = view.segments_of_type(PT_GNU_STACK)
    if not stacks:
        return _verdict(Status.NOT_PROTECTED, Method.HEADER, "no PT_GNU_STACK; loader default is an executable stack")
    flags = _flags(stacks[0])
    if stacks[0].executable:
        return _verdict(Status.NOT_PROTECTED, Method.HEADER, f"PT_GNU_STACK flags={flags}")
    return _verdict(Status.PROTECTED, Method.HEADER, f"PT_GNU_STACK flags={flags}")


def detect_pie(view: ElfView, cls: BinaryClass) -> MitigationVerdict:
    if cls.role is not Role.EXECUTABLE:
        return _not_applicable(cls)
    if view.elf_type is ElfType.DYN:
        return _verdict(Status.PROTECTED, Method.HEADER, "e_type=ET_DYN")
    if view.elf_type is ElfType.EXEC:
        return _verdict(Status.NOT_PROTECTED, Method.HEADER, "e_type=ET_EXEC")
    return _verdict(Status.UNKNOWN, Method.HEADER, f"e_type={view.elf_type_code}")


# -- composition -------------------------------------------------------------

@dataclass(frozen=True)
class MitigationReport:
    path: str
    digest: str
    arch: str
    cls: BinaryClass
    canary: MitigationVerdict
    relro: MitigationVerdict
    nx: MitigationVerdict
    fortify: MitigationVerdict
    pie: MitigationVerdict
    diagnostics: tuple[str, ...] = field(default=())

    def verdict(self, mitigation: str) -> MitigationVerdict:
        return getattr(self, mitigation)

    @property
    def relro_level(self) -> RelroLevel:
        return self.relro.level if self.relro.level is not None else RelroLevel.NONE

    @property
    def evidence(self) -> list[str]:
        return [f"{m}: {atom}" for m in MITIGATIONS for atom in self.verdict(m).evidence]

    def to_dict(self) -> dict:
        d = {"path": self.path, "digest": self.digest, "arch": self.arch, "class": self.cls.to_dict()}
        for m in MITIGATIONS:
            d[m] = self.verdict(m).to_dict()
        d["evidence"] = self.evidence
        if self.diagnostics:
            d["diagnostics"] = list(self.diagnostics)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MitigationReport":
        verdicts = {m: MitigationVerdict.from_dict(d[m]) for m in MITIGATIONS}
        return cls(d["path"], d["digest"], d["arch"], BinaryClass.from_dict(d["class"]),
                   diagnostics=tuple(d.get("diagnostics", ())), **verdicts)


def content_digest(data: bytes) -> str:
    return hashlib.md5(data, usedforsecurity=False).hexdigest()


def analyze_view(view: ElfView, path: str = "", force_heuristic: bool = False) -> MitigationReport:
    cls = classify_binary(view)
    return MitigationReport(
        path=path,
        digest=content_digest(view.raw_bytes),
        arch=view.arch_name,
        cls=cls,
        canary=detect_canary(view, cls, force_heuristic),
        relro=detect_relro(view),
        nx=detect_nx(view, cls),
        fortify=detect_fortify(view, cls, force_heuristic),
        pie=detect_pie(view, cls),
        diagnostics=tuple(cls.diagnostics) + tuple(view.warnings),
    )


def scan_binary(data: bytes, path: str = "", force_heuristic: bool = False) -> MitigationReport:
    """Parse, classify and run every detector over one ELF image."""
    return analyze_view(parse_elf(data), path, force_heuristic)
