"""Read-only ELF model used by every detector.

Only what the hardening checks need is decoded: identification, program
headers, section headers, the dynamic section, symbol tables and
relocations.  Firmware binaries are often damaged by carving, so a broken
section table degrades the view to segments only instead of failing.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

ELF_MAGIC = b"\x7fELF"

# program header types
PT_NULL = 0
PT_LOAD = 1
PT_DYNAMIC = 2
PT_INTERP = 3
PT_GNU_STACK = 0x6474E551
PT_GNU_RELRO = 0x6474E552

PF_X = 0x1
PF_W = 0x2
PF_R = 0x4

# section header types
SHT_SYMTAB = 2
SHT_RELA = 4
SHT_NOBITS = 8
SHT_REL = 9
SHT_DYNSYM = 11

# dynamic tags
DT_NULL = 0
DT_NEEDED = 1
DT_PLTRELSZ = 2
DT_PLTGOT = 3
DT_HASH = 4
DT_STRTAB = 5
DT_SYMTAB = 6
DT_RELA = 7
DT_RELASZ = 8
DT_RELAENT = 9
DT_STRSZ = 10
DT_SYMENT = 11
DT_SONAME = 14
DT_REL = 17
DT_RELSZ = 18
DT_RELENT = 19
DT_PLTREL = 20
DT_JMPREL = 23
DT_BIND_NOW = 24
DT_FLAGS = 30
DT_GNU_HASH = 0x6FFFFEF5
DT_FLAGS_1 = 0x6FFFFFFB
DT_MIPS_SYMTABNO = 0x70000011

DF_BIND_NOW = 0x8
DF_1_NOW = 0x1
DF_1_PIE = 0x08000000

EM_X86 = 3
EM_MIPS = 8
EM_MIPS_RS3_LE = 10
EM_PPC = 20
EM_PPC64 = 21
EM_ARM = 40
EM_X86_64 = 62
EM_AARCH64 = 183


class ElfError(ValueError):
    """Base class for inputs that cannot be modelled as ELF."""


class NotElf(ElfError):
    pass


class UnsupportedClass(ElfError):
    pass


class Truncated(ElfError):
    pass


class Machine(enum.Enum):
    ARM = "ARM"
    AARCH64 = "AArch64"
    MIPS = "MIPS"
    X86 = "x86"
    X64 = "x64"
    POWERPC = "PowerPC"
    OTHER = "Other"


_MACHINES = {
    EM_ARM: Machine.ARM,
    EM_AARCH64: Machine.AARCH64,
    EM_MIPS: Machine.MIPS,
    EM_MIPS_RS3_LE: Machine.MIPS,
    EM_X86: Machine.X86,
    EM_X86_64: Machine.X64,
    EM_PPC: Machine.POWERPC,
    EM_PPC64: Machine.POWERPC,
}


class ElfType(enum.Enum):
    REL = 1
    EXEC = 2
    DYN = 3
    OTHER = -1


@dataclass(frozen=True)
class ProgramHeader:
    type: int
    flags: int
    offset: int
    vaddr: int
    filesz: int
    memsz: int

    @property
    def readable(self) -> bool:
        return bool(self.flags & PF_R)

    @property
    def writable(self) -> bool:
        return bool(self.flags & PF_W)

    @property
    def executable(self) -> bool:
        return bool(self.flags & PF_X)

    def covers(self, start: int, size: int) -> bool:
        """True when ``[start, start+size)`` lies inside the memory image."""
        return self.vaddr <= start and start + size <= self.vaddr + self.memsz


@dataclass(frozen=True)
class Section:
    name: str
    type: int
    flags: int
    addr: int
    offset: int
    size: int
    link: int = 0
    entsize: int = 0

    @property
    def file_backed(self) -> bool:
        return self.type != SHT_NOBITS


@dataclass(frozen=True)
class Symbol:
    name: str
    value: int
    type: int
    bind: int = 0
    shndx: int = 0

    @property
    def defined(self) -> bool:
        return self.shndx != 0


@dataclass(frozen=True)
class Relocation:
    offset: int
    symbol: str
    type: int = 0


@dataclass(frozen=True)
class ElfView:
    """Parsed projection of one ELF file.  Never mutated after parsing."""

    raw_bytes: bytes
    machine: Machine
    machine_code: int
    bitness: int
    endianness: str
    elf_type: ElfType
    elf_type_code: int
    entry: int
    segments: tuple[ProgramHeader, ...]
    sections: tuple[Section, ...]
    dynamic_entries: tuple[tuple[int, int], ...]
    dynamic_symbols: tuple[Symbol, ...]
    static_symbols: tuple[Symbol, ...]
    relocations: tuple[Relocation, ...]
    interpreter: Optional[str]
    needed: tuple[str, ...] = ()
    soname: Optional[str] = None
    sections_valid: bool = True
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def arch_name(self) -> str:
        if self.machine is Machine.OTHER:
            return f"Other({self.machine_code})"
        return self.machine.value

    def segments_of_type(self, ptype: int) -> list[ProgramHeader]:
        return [s for s in self.segments if s.type == ptype]

    def has_segment(self, ptype: int) -> bool:
        return any(s.type == ptype for s in self.segments)

    def section(self, name: str) -> Optional[Section]:
        for sec in self.sections:
            if sec.name == name:
                return sec
        return None

    def dynamic_values(self, tag: int) -> list[int]:
        return [v for t, v in self.dynamic_entries if t == tag]

    def dynamic_value(self, tag: int) -> Optional[int]:
        vals = self.dynamic_values(tag)
        return vals[0] if vals else None

    def executable_segments(self) -> list[ProgramHeader]:
        return [s for s in self.segments if s.type == PT_LOAD and s.executable]

    def vaddr_to_offset(self, vaddr: int) -> Optional[int]:
        for seg in self.segments:
            if seg.type == PT_LOAD and seg.vaddr <= vaddr < seg.vaddr + seg.filesz:
                off = seg.offset + (vaddr - seg.vaddr)
                if off < len(self.raw_bytes):
                    return off
        return None

    def offset_to_vaddr(self, offset: int) -> Optional[int]:
        for seg in self.segments:
            if seg.type == PT_LOAD and seg.offset <= offset < seg.offset + seg.filesz:
                return seg.vaddr + (offset - seg.offset)
        return None

    def read_vaddr(self, vaddr: int, size: int) -> Optional[bytes]:
        off = self.vaddr_to_offset(vaddr)
        if off is None or off + size > len(self.raw_bytes):
            return None
        return self.raw_bytes[off:off + size]

    def read_word(self, vaddr: int, size: Optional[int] = None) -> Optional[int]:
        size = size or self.bitness // 8
        data = self.read_vaddr(vaddr, size)
        if data is None:
            return None
        return int.from_bytes(data, "little" if self.endianness == "little" else "big")

    def segment_for_vaddr(self, vaddr: int) -> Optional[ProgramHeader]:
        for seg in self.segments:
            if seg.type == PT_LOAD and seg.vaddr <= vaddr < seg.vaddr + seg.memsz:
                return seg
        return None

    def symbol_names(self) -> set[str]:
        return {s.name for s in self.dynamic_symbols} | {s.name for s in self.static_symbols}


class _Reader:
    def __init__(self, data: bytes, bitness: int, endianness: str):
        self.data = data
        self.prefix = "<" if endianness == "little" else ">"
        self.word = "Q" if bitness == 64 else "I"
        self.wsize = bitness // 8

    def unpack(self, fmt: str, offset: int) -> tuple:
        fmt = self.prefix + fmt.replace("W", self.word)
        if offset < 0 or offset + struct.calcsize(fmt) > len(self.data):
            raise Truncated(f"read of {fmt!r} at {offset:#x} runs past end of file")
        return struct.unpack_from(fmt, self.data, offset)

    def cstring(self, offset: int, limit: int = 4096) -> str:
        if offset < 0 or offset >= len(self.data):
            return ""
        end = self.data.find(b"\0", offset, offset + limit)
        if end < 0:
            end = min(len(self.data), offset + limit)
        return self.data[offset:end].decode("latin-1")


def parse_elf(data: bytes) -> ElfView:
    """Parse ``data`` into an :class:`ElfView`.

    Raises :class:`NotElf` on a bad magic, :class:`UnsupportedClass` on an
    invalid class/data byte and :class:`Truncated` when the header or the
    program header table is cut short.  A damaged section table is not an
    error: the view comes back with ``sections_valid=False``.
    """
    data = bytes(data)
    if not data:
        raise NotElf("empty input")
    if len(data) < 4:
        if ELF_MAGIC.startswith(data):
            raise Truncated("file ends inside the ELF magic")
        raise NotElf("bad ELF magic")
    if data[:4] != ELF_MAGIC:
        raise NotElf("bad ELF magic")
    if len(data) < 16:
        raise Truncated("file ends inside e_ident")
    ei_class, ei_data = data[4], data[5]
    if ei_class not in (1, 2) or ei_data not in (1, 2):
        raise UnsupportedClass(f"EI_CLASS={ei_class} EI_DATA={ei_data}")
    bitness = 32 if ei_class == 1 else 64
    endianness = "little" if ei_data == 1 else "big"
    rd = _Reader(data, bitness, endianness)
    warnings: list[str] = []

    (e_type, e_machine, _ver, e_entry, e_phoff, e_shoff, _flags, _ehsize, e_phentsize, e_phnum,
     e_shentsize, e_shnum, e_shstrndx) = rd.unpack("HHIWWWIHHHHHH", 16)

    segments = _parse_segments(rd, e_phoff, e_phentsize, e_phnum, bitness)
    sections, sections_valid = _parse_sections(rd, e_shoff, e_shentsize, e_shnum, e_shstrndx, bitness, warnings)

    interpreter = None
    for seg in segments:
        if seg.type == PT_INTERP:
            interpreter = rd.cstring(seg.offset, min(seg.filesz, 4096) or 4096)
            break

    dynamic = _parse_dynamic(rd, segments, warnings)
    machine = _MACHINES.get(e_machine, Machine.OTHER)
    probe = _Probe(data, segments, rd)

    dynstr_addr = _first(dynamic, DT_STRTAB)
    needed: list[str] = []
    soname = None
    if dynstr_addr is not None:
        stroff = probe.vaddr_to_offset(dynstr_addr)
        if stroff is not None:
            for tag, val in dynamic:
                if tag == DT_NEEDED:
                    needed.append(rd.cstring(stroff + val))
                elif tag == DT_SONAME and soname is None:
                    soname = rd.cstring(stroff + val)

    symtabs = {}
    for idx, sec in enumerate(sections):
        if sec.type in (SHT_SYMTAB, SHT_DYNSYM):
            symtabs[idx] = _read_symbols(rd, sec, sections, bitness, warnings)
    static_symbols = next((syms for i, syms in symtabs.items() if sections[i].type == SHT_SYMTAB), [])
    dynamic_symbols = next((syms for i, syms in symtabs.items() if sections[i].type == SHT_DYNSYM), None)
    if dynamic_symbols is None:
        dynamic_symbols = _dynamic_symbols_from_segments(rd, probe, dynamic, bitness, e_machine, warnings)

    relocations = _relocations_from_sections(rd, sections, symtabs, bitness, e_machine, endianness, warnings)
    if not relocations and dynamic:
        relocations = _relocations_from_dynamic(rd, probe, dynamic, dynamic_symbols, bitness, e_machine,
                                                endianness, warnings)

    return ElfView(
        raw_bytes=data,
        machine=machine,
        machine_code=e_machine,
        bitness=bitness,
        endianness=endianness,
        elf_type=ElfType(e_type) if e_type in (1, 2, 3) else ElfType.OTHER,
        elf_type_code=e_type,
        entry=e_entry,
        segments=tuple(segments),
        sections=tuple(sections),
        dynamic_entries=tuple(dynamic),
        dynamic_symbols=tuple(dynamic_symbols),
        static_symbols=tuple(s for s in static_symbols if s.name or s.value),
        relocations=tuple(relocations),
        interpreter=interpreter,
        needed=tuple(needed),
        soname=soname,
        sections_valid=sections_valid,
        warnings=tuple(warnings),
    )


def _first(entries, tag):
    for t, v in entries:
        if t == tag:
            return v
    return None


class _Probe:
    """Address translation usable before the ElfView exists."""

    def __init__(self, data, segments, rd):
        self.data = data
        self.segments = segments
        self.rd = rd

    def vaddr_to_offset(self, vaddr):
        for seg in self.segments:
            if seg.type == PT_LOAD and seg.vaddr <= vaddr < seg.vaddr + seg.filesz:
                off = seg.offset + vaddr - seg.vaddr
                return off if off < len(self.data) else None
        return None


def _parse_segments(rd, phoff, phentsize, phnum, bitness):
    if phnum == 0:
        return []
    expected = 32 if bitness == 32 else 56
    if phentsize < expected:
        raise Truncated(f"e_phentsize {phentsize} smaller than {expected}")
    if phoff + phnum * phentsize > len(rd.data):
        raise Truncated("program header table extends past end of file")
    segments = []
    for i in range(phnum):
        off = phoff + i * phentsize
        if bitness == 32:
            p_type, p_offset, p_vaddr, _paddr, p_filesz, p_memsz, p_flags, _align = rd.unpack("IIIIIIII", off)
        else:
            p_type, p_flags, p_offset, p_vaddr, _paddr, p_filesz, p_memsz, _align = rd.unpack("IIQQQQQQ", off)
        segments.append(ProgramHeader(p_type, p_flags, p_offset, p_vaddr, p_filesz, p_memsz))
    return segments


def _parse_sections(rd, shoff, shentsize, shnum, shstrndx, bitness, warnings):
    if shoff == 0:
        return [], True
    expected = 40 if bitness == 32 else 64
    fmt = "IIIIIIIIII" if bitness == 32 else "IIQQQQIIQQ"
    try:
        if shentsize < expected:
            raise Truncated(f"e_shentsize {shentsize}")
        if shnum == 0:
            # extended numbering: the real count lives in section 0
            shnum = rd.unpack(fmt, shoff)[5]
        if shstrndx == 0xFFFF:
            shstrndx = rd.unpack(fmt, shoff)[6]
        if shnum == 0 or shnum > 0xFFFFF or shoff + shnum * shentsize > len(rd.data):
            raise Truncated("section header table extends past end of file")
        raw = []
        for i in range(shnum):
            vals = rd.unpack(fmt, shoff + i * shentsize)
            name, stype, flags, addr, offset, size, link, _info, _align, entsize = vals
            raw.append((name, stype, flags, addr, offset, size, link, entsize))
        if not 0 <= shstrndx < shnum:
            raise Truncated("e_shstrndx out of range")
        str_off, str_size = raw[shstrndx][4], raw[shstrndx][5]
        if str_off + str_size > len(rd.data):
            raise Truncated("section name table past end of file")
    except Truncated as exc:
        warnings.append(f"section table unusable: {exc}")
        return [], False

    sections = []
    for name_off, stype, flags, addr, offset, size, link, entsize in raw:
        name = rd.cstring(str_off + name_off, 256) if name_off < str_size else ""
        if stype != SHT_NOBITS and offset + size > len(rd.data):
            # placeholder keeps sh_link indices valid but claims no file bytes
            warnings.append(f"section {name or '?'} claims bytes past end of file")
            stype, size = SHT_NOBITS, 0
        sections.append(Section(name, stype, flags, addr, offset, size, link, entsize))
    return sections, True


def _parse_dynamic(rd, segments, warnings):
    dyn = next((s for s in segments if s.type == PT_DYNAMIC), None)
    if dyn is None:
        return []
    entsize = 2 * rd.wsize
    end = min(dyn.offset + dyn.filesz, len(rd.data))
    entries = []
    off = dyn.offset
    while off + entsize <= end:
        tag, val = rd.unpack("WW", off)
        if tag == DT_NULL:
            break
        entries.append((tag, val))
        off += entsize
    if not entries:
        warnings.append("PT_DYNAMIC present but holds no entries")
    return entries


def _read_symbols(rd, sec, sections, bitness, warnings):
    entsize = 16 if bitness == 32 else 24
    if sec.size == 0 or not sec.file_backed:
        return []
    strsec = sections[sec.link] if 0 <= sec.link < len(sections) else None
    if strsec is None or not strsec.file_backed:
        warnings.append(f"{sec.name}: string table missing")
        return []
    return _decode_symbols(rd, sec.offset, sec.size // entsize, strsec.offset, strsec.size, bitness)


def _decode_symbols(rd, off, count, stroff, strsize, bitness):
    syms = []
    entsize = 16 if bitness == 32 else 24
    for i in range(count):
        base = off + i * entsize
        try:
            if bitness == 32:
                st_name, st_value, _size, st_info, _other, st_shndx = rd.unpack("IIIBBH", base)
            else:
                st_name, st_info, _other, st_shndx, st_value, _size = rd.unpack("IBBHQQ", base)
        except Truncated:
            break
        name = rd.cstring(stroff + st_name, 1024) if st_name < strsize else ""
        syms.append(Symbol(name, st_value, st_info & 0xF, st_info >> 4, st_shndx))
    return syms


def _dynamic_symbols_from_segments(rd, probe, dynamic, bitness, e_machine, warnings):
    symtab = _first(dynamic, DT_SYMTAB)
    strtab = _first(dynamic, DT_STRTAB)
    if symtab is None or strtab is None:
        return []
    sym_off = probe.vaddr_to_offset(symtab)
    str_off = probe.vaddr_to_offset(strtab)
    if sym_off is None or str_off is None:
        warnings.append("DT_SYMTAB/DT_STRTAB not file backed")
        return []
    count = None
    if e_machine in (EM_MIPS, EM_MIPS_RS3_LE):
        count = _first(dynamic, DT_MIPS_SYMTABNO)
    if count is None and _first(dynamic, DT_HASH) is not None:
        hoff = probe.vaddr_to_offset(_first(dynamic, DT_HASH))
        if hoff is not None:
            try:
                count = rd.unpack("I", hoff + 4)[0]
            except Truncated:
                count = None
    if count is None and _first(dynamic, DT_GNU_HASH) is not None:
        count = _gnu_hash_count(rd, probe, _first(dynamic, DT_GNU_HASH), bitness)
    if count is None:
        warnings.append("dynamic symbol count unknown")
        return []
    strsize = _first(dynamic, DT_STRSZ) or (len(rd.data) - str_off)
    return _decode_symbols(rd, sym_off, min(count, 1 << 20), str_off, strsize, bitness)


def _gnu_hash_count(rd, probe, addr, bitness):
    off = probe.vaddr_to_offset(addr)
    if off is None:
        return None
    try:
        nbuckets, symoffset, bloom_size, _shift = rd.unpack("IIII", off)
        buckets_off = off + 16 + bloom_size * (bitness // 8)
        buckets = rd.unpack("I" * nbuckets, buckets_off) if nbuckets else ()
        last = max(buckets, default=0)
        if last < symoffset:
            return symoffset
        chain_off = buckets_off + 4 * nbuckets
        idx = last
        while True:
            (h,) = rd.unpack("I", chain_off + 4 * (idx - symoffset))
            idx += 1
            if h & 1:
                return idx
    except Truncated:
        return None


def _rel_sym_index(info, bitness, e_machine, endianness):
    if bitness == 32:
        return info >> 8, info & 0xFF
    if e_machine == EM_MIPS and endianness == "little":
        return info & 0xFFFFFFFF, (info >> 56) & 0xFF
    return info >> 32, info & 0xFFFFFFFF


def _decode_relocs(rd, off, size, rela, symbols, bitness, e_machine, endianness):
    entsize = (3 if rela else 2) * (bitness // 8)
    relocs = []
    for i in range(size // entsize):
        try:
            r_offset, r_info = rd.unpack("WW", off + i * entsize)
        except Truncated:
            break
        sym_idx, rtype = _rel_sym_index(r_info, bitness, e_machine, endianness)
        name = symbols[sym_idx].name if 0 < sym_idx < len(symbols) else ""
        relocs.append(Relocation(r_offset, name, rtype))
    return relocs


def _relocations_from_sections(rd, sections, symtabs, bitness, e_machine, endianness, warnings):
    relocs = []
    for sec in sections:
        if sec.type not in (SHT_REL, SHT_RELA) or not sec.file_backed:
            continue
        symbols = symtabs.get(sec.link, [])
        relocs.extend(_decode_relocs(rd, sec.offset, sec.size, sec.type == SHT_RELA, symbols, bitness,
                                     e_machine, endianness))
    return relocs


def _relocations_from_dynamic(rd, probe, dynamic, symbols, bitness, e_machine, endianness, warnings):
    relocs = []
    tables = [(_first(dynamic, DT_REL), _first(dynamic, DT_RELSZ), False),
              (_first(dynamic, DT_RELA), _first(dynamic, DT_RELASZ), True),
              (_first(dynamic, DT_JMPREL), _first(dynamic, DT_PLTRELSZ), _first(dynamic, DT_PLTREL) == DT_RELA)]
    for addr, size, rela in tables:
        if addr is None or not size:
            continue
        off = probe.vaddr_to_offset(addr)
        if off is None:
            warnings.append(f"relocation table at {addr:#x} not file backed")
            continue
        relocs.extend(_decode_relocs(rd, off, size, rela, symbols, bitness, e_machine, endianness))
    return relocs


# -- classification ---------------------------------------------------------

class Linkage(enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


class Role(enum.Enum):
    EXECUTABLE = "executable"
    LIBRARY = "library"
    RELOCATABLE_OBJECT = "relocatable_object"
    UNKNOWN = "unknown"


class Libc(enum.Enum):
    GLIBC = "glibc"
    UCLIBC = "uclibc"
    MUSL = "musl"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class BinaryClass:
    linkage: Linkage
    role: Role
    stripped: bool
    libc: Libc
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    @property
    def label(self) -> str:
        return f"{self.linkage.value} {self.role.value}"

    def to_dict(self) -> dict:
        return {
            "linkage": self.linkage.value,
            "role": self.role.value,
            "stripped": self.stripped,
            "libc": self.libc.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryClass":
        return cls(Linkage(d["linkage"]), Role(d["role"]), bool(d["stripped"]), Libc(d["libc"]))


# exact sonames each libc installs for itself
_LIBC_SONAMES = {"libc.so.6": Libc.GLIBC, "libc.so.0": Libc.UCLIBC, "libc.so": Libc.MUSL}


def _detect_libc(names: Iterable[str]) -> Libc:
    names = [n for n in names if n]
    lowered = [n.lower() for n in names]
    if any("uclibc" in n for n in lowered):
        return Libc.UCLIBC
    if any("musl" in n for n in lowered):
        return Libc.MUSL
    for n in names:
        base = n.rsplit("/", 1)[-1]
        if base in _LIBC_SONAMES:
            return _LIBC_SONAMES[base]
    if any(n.rsplit("/", 1)[-1].startswith(("libc.so", "ld-linux")) for n in names):
        return Libc.GLIBC
    return Libc.UNKNOWN


def is_static_pie(view: ElfView) -> bool:
    """Self-relocating static executable: ET_DYN + DF_1_PIE, nothing to load."""
    flags_1 = view.dynamic_value(DT_FLAGS_1) or 0
    return (view.elf_type is ElfType.DYN and bool(flags_1 & DF_1_PIE)
            and view.interpreter is None and not view.needed)


def classify_binary(view: ElfView) -> BinaryClass:
    diagnostics = []
    has_dynamic = view.has_segment(PT_DYNAMIC)
    if has_dynamic and not is_static_pie(view):
        linkage = Linkage.DYNAMIC
    else:
        linkage = Linkage.STATIC
        if has_dynamic:
            diagnostics.append("static-pie: PT_DYNAMIC only drives self-relocation")

    flags_1 = view.dynamic_value(DT_FLAGS_1) or 0
    if view.elf_type is ElfType.REL:
        role = Role.RELOCATABLE_OBJECT
    elif view.interpreter is not None or view.elf_type is ElfType.EXEC:
        role = Role.EXECUTABLE
    elif view.elf_type is ElfType.DYN and view.soname:
        role = Role.LIBRARY
    elif view.elf_type is ElfType.DYN and flags_1 & DF_1_PIE:
        role = Role.EXECUTABLE
    elif view.elf_type is ElfType.DYN:
        role = Role.LIBRARY
        diagnostics.append("ET_DYN without PT_INTERP, DT_SONAME or DF_1_PIE; assumed library")
    else:
        role = Role.UNKNOWN

    stripped = not view.static_symbols
    libc = _detect_libc([view.interpreter or "", *view.needed])
    return BinaryClass(linkage, role, stripped, libc, tuple(diagnostics))


def find_string(view: ElfView | bytes, needle: bytes) -> list[int]:
    """File offsets of all non-overlapping occurrences of ``needle``."""
    if not needle:
        raise ValueError("needle must be non-empty")
    data = view.raw_bytes if isinstance(view, ElfView) else view
    hits = []
    pos = data.find(needle)
    while pos >= 0:
        hits.append(pos)
        pos = data.find(needle, pos + len(needle))
    return hits
