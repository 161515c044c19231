"""Kernel image analysis: version banner, configuration, symbols and mitigations."""

from __future__ import annotations

import datetime as dt
import enum
import hashlib
import re
from dataclasses import dataclass, field
from functools import total_ordering
from typing import Optional, Union

from .elf import ELF_MAGIC, ElfError, Machine, parse_elf
from .kallsyms import KallsymsNotFound, LayoutUnsupported, locate_kallsyms
from .kconfig import KernelConfig, extract_ikconfig, parse_kconfig
from .reference import is_fortified_symbol, kernel_mitigation_table

_BANNER = re.compile(rb"Linux version (\d+)\.(\d+)(?:\.(\d+))?[^\0\n\r]*")
_MONTHS = {m: i for i, m in enumerate(
    ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"), 1)}
# "Fri Jan 20 15:50:29 CST 2017", timezone optional
_BUILD_DATE = re.compile(
    r"(?:Mon|Tue|Wed|Thu|Fri|Sat|Sun)\s+(?P<mon>[A-Z][a-z]{2})\s+(?P<day>\d{1,2})\s+"
    r"\d{1,2}:\d{2}:\d{2}(?:\s+[A-Za-z][A-Za-z0-9+\-:]*)?\s+(?P<year>\d{4})")


class NoVersionFound(Exception):
    pass


@total_ordering
@dataclass(frozen=True)
class KernelVersion:
    major: int
    minor: int
    patch: int = 0

    @classmethod
    def parse(cls, text: str) -> "KernelVersion":
        parts = text.strip().lstrip("v").split(".")
        if len(parts) < 2 or not all(p.isdigit() for p in parts[:3]):
            raise ValueError(f"not a dotted kernel version: {text!r}")
        nums = [int(p) for p in parts[:3]]
        return cls(*nums)

    def _key(self):
        return (self.major, self.minor, self.patch)

    def __lt__(self, other: "KernelVersion") -> bool:
        return self._key() < other._key()

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}.{self.patch}"

    @property
    def release_key(self) -> str:
        """Key into the release-date table: 2.6.x kernels by patch level, later ones by major.minor."""
        if (self.major, self.minor) == (2, 6):
            return f"2.6.{self.patch}"
        return f"{self.major}.{self.minor}"


def parse_build_date(banner: str) -> Optional[dt.date]:
    matches = list(_BUILD_DATE.finditer(banner))
    if not matches:
        return None
    m = matches[-1]
    month = _MONTHS.get(m["mon"])
    if month is None:
        return None
    try:
        return dt.date(int(m["year"]), month, int(m["day"]))
    except ValueError:
        return None


def find_kernel_version(data: bytes) -> tuple[KernelVersion, str, Optional[dt.date]]:
    """First well-formed "Linux version" banner in the image."""
    for m in _BANNER.finditer(data):
        try:
            version = KernelVersion(int(m[1]), int(m[2]), int(m[3] or 0))
        except ValueError:
            continue
        banner = m[0].decode("latin-1").strip()
        return version, banner, parse_build_date(banner)
    raise NoVersionFound("no 'Linux version' banner")


# -- mitigations and applicability ---------------------------------------------

class KernelMitigation(enum.Enum):
    STACK_PROTECTOR = "StackProtector"
    PXN = "PXN"
    KASLR = "KASLR"
    FREELIST_RANDOM = "FreelistRandom"
    USERCOPY = "Usercopy"
    FORTIFY = "Fortify"
    KERNEL_RWX = "KernelRWX"


class Applicability(enum.Enum):
    SUPPORTED = "supported"
    UNSUPPORTED = "unsupported"


class KStatus(enum.Enum):
    PROTECTED = "Protected"
    NOT_PROTECTED = "NotProtected"
    UNSUPPORTED = "Unsupported"
    UNKNOWN = "Unknown"


class Basis(enum.Enum):
    CONFIG = "config"
    INDICATOR_SYMBOL = "indicator_symbol"
    VERSION_GATE = "version_gate"


class SymbolSource(enum.Enum):
    ELF_SYMTAB = "elf_symtab"
    KALLSYMS = "kallsyms"
    NONE = "none"


def _mitigation_info(mitigation: KernelMitigation) -> dict:
    return kernel_mitigation_table()["mitigations"][mitigation.value]


def _arch_name(arch: Union[Machine, str]) -> str:
    return arch.value if isinstance(arch, Machine) else str(arch)


def gate_version(mitigation: KernelMitigation, arch: Union[Machine, str]) -> Optional[KernelVersion]:
    gate = _mitigation_info(mitigation)["gates"].get(_arch_name(arch))
    return KernelVersion.parse(gate) if gate else None


def applicable(mitigation: KernelMitigation, arch: Union[Machine, str], version: KernelVersion) -> Applicability:
    """Supported iff the architecture has the feature and ``version`` is at or past its gate."""
    gate = gate_version(mitigation, arch)
    if gate is None or version < gate:
        return Applicability.UNSUPPORTED
    return Applicability.SUPPORTED


@dataclass(frozen=True)
class KernelVerdict:
    status: KStatus
    basis: Basis
    evidence: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"status": self.status.value, "basis": self.basis.value, "evidence": list(self.evidence)}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelVerdict":
        return cls(KStatus(d["status"]), Basis(d["basis"]), tuple(d.get("evidence", ())))


@dataclass(frozen=True)
class KernelRecord:
    version: KernelVersion
    banner: str
    build_date: Optional[dt.date]
    arch: Machine
    config: Optional[KernelConfig] = None
    symbols: Optional[tuple[str, ...]] = None
    symbol_source: SymbolSource = SymbolSource.NONE
    path: str = ""
    digest: str = ""
    diagnostics: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.symbols is not None and not self.symbols:
            object.__setattr__(self, "symbols", None)
        if self.symbols is None and self.symbol_source is not SymbolSource.NONE:
            object.__setattr__(self, "symbol_source", SymbolSource.NONE)


def _config_option_state(config: KernelConfig, info: dict) -> Optional[tuple[bool, str]]:
    names = [info["config"], *info.get("config_aliases", [])]
    for name in names:
        if name and name in config:
            return config.is_set(name), name
    if info["config"]:
        return False, info["config"]
    return None


def _indicator_present(symbols: set[str], indicator: str) -> Optional[str]:
    if indicator == "__*_chk":
        hits = sorted(s for s in symbols if is_fortified_symbol(s))
        return hits[0] if hits else None
    return indicator if indicator in symbols else None


def detect_kernel_mitigations(record: KernelRecord) -> dict[KernelMitigation, KernelVerdict]:
    """Per-mitigation status with evidence precedence config > indicator symbol > version gate."""
    symbols = set(record.symbols or ())
    out = {}
    for mit in KernelMitigation:
        info = _mitigation_info(mit)
        if record.arch is Machine.OTHER:
            out[mit] = KernelVerdict(KStatus.UNKNOWN, Basis.VERSION_GATE, ("architecture not identified",))
            continue
        gate = gate_version(mit, record.arch)
        if applicable(mit, record.arch, record.version) is Applicability.UNSUPPORTED:
            why = f"{record.arch.value} has no support" if gate is None else f"{record.version} < gate {gate}"
            out[mit] = KernelVerdict(KStatus.UNSUPPORTED, Basis.VERSION_GATE, (why,))
            continue
        if record.config is not None and info["config"]:
            is_set, name = _config_option_state(record.config, info)
            status = KStatus.PROTECTED if is_set else KStatus.NOT_PROTECTED
            out[mit] = KernelVerdict(status, Basis.CONFIG, (f"{name} {'set' if is_set else 'unset'}",))
            continue
        if symbols and info["indicator"]:
            hit = _indicator_present(symbols, info["indicator"])
            if hit:
                out[mit] = KernelVerdict(KStatus.PROTECTED, Basis.INDICATOR_SYMBOL, (f"symbol {hit}",))
            else:
                out[mit] = KernelVerdict(KStatus.NOT_PROTECTED, Basis.INDICATOR_SYMBOL,
                                         (f"no {info['indicator']} symbol",))
            continue
        why = "eligible by version; no config or indicator to confirm enablement"
        out[mit] = KernelVerdict(KStatus.UNKNOWN, Basis.VERSION_GATE, (f"gate {gate}", why))
    return out


def detect_supplementary(record: KernelRecord) -> dict[str, KernelVerdict]:
    """Detectors outside the headline set (vmap kernel stacks)."""
    out = {}
    for name, info in kernel_mitigation_table()["supplementary"].items():
        if record.config is not None:
            is_set = record.config.is_set(info["config"])
            out[name] = KernelVerdict(KStatus.PROTECTED if is_set else KStatus.NOT_PROTECTED, Basis.CONFIG,
                                      (f"{info['config']} {'set' if is_set else 'unset'}",))
        elif record.symbols:
            present = info["indicator"] in record.symbols
            out[name] = KernelVerdict(KStatus.PROTECTED if present else KStatus.NOT_PROTECTED,
                                      Basis.INDICATOR_SYMBOL, (f"symbol {info['indicator']} {'present' if present else 'absent'}",))
        else:
            out[name] = KernelVerdict(KStatus.UNKNOWN, Basis.VERSION_GATE, ("no config or symbols",))
    return out


# -- whole-image analysis ---------------------------------------------------

_CONFIG_ARCH = (
    ("CONFIG_ARM64", Machine.AARCH64),
    ("CONFIG_ARM", Machine.ARM),
    ("CONFIG_MIPS", Machine.MIPS),
    ("CONFIG_PPC", Machine.POWERPC),
    ("CONFIG_X86_64", Machine.X64),
    ("CONFIG_X86_32", Machine.X86),
    ("CONFIG_X86", Machine.X86),
)
_SYMBOL_ARCH = (
    (("arm64_", "__arm64_"), Machine.AARCH64),
    (("arm_", "__arm_", "__aeabi_"), Machine.ARM),
    (("mips_", "__mips_", "r4k_"), Machine.MIPS),
    (("ppc_", "ppc32_", "ppc64_", "powerpc_"), Machine.POWERPC),
    (("x86_64_", "x64_"), Machine.X64),
    (("x86_",), Machine.X86),
)
_BANNER_ARCH = (
    ("aarch64", Machine.AARCH64), ("arm64", Machine.AARCH64), ("arm", Machine.ARM),
    ("mips", Machine.MIPS), ("powerpc", Machine.POWERPC), ("ppc", Machine.POWERPC),
    ("x86_64", Machine.X64), ("i686", Machine.X86), ("i386", Machine.X86),
)


def _arch_from_config(config: Optional[KernelConfig]) -> Optional[Machine]:
    if config is None:
        return None
    for name, arch in _CONFIG_ARCH:
        if config.is_set(name):
            return arch
    return None


def _arch_from_content(banner: str, symbols: Optional[tuple[str, ...]]) -> Optional[Machine]:
    if symbols:
        counts = {}
        for prefixes, arch in _SYMBOL_ARCH:
            counts[arch] = counts.get(arch, 0) + sum(1 for s in symbols if s.startswith(prefixes))
        arch, best = max(counts.items(), key=lambda kv: kv[1])
        if best >= 3:
            return arch
    lowered = banner.lower()
    for needle, arch in _BANNER_ARCH:
        if needle + "-" in lowered:
            return arch
    return None


def analyze_kernel(data: bytes, config_text: Optional[str] = None, path: str = "",
                   use_kallsyms: bool = True) -> KernelRecord:
    """Build a KernelRecord from a vmlinux ELF or a decompressed raw image."""
    diagnostics = []
    elf_arch = None
    symbols: Optional[tuple[str, ...]] = None
    source = SymbolSource.NONE

    if data[:4] == ELF_MAGIC:
        try:
            view = parse_elf(data)
        except ElfError as exc:
            diagnostics.append(f"vmlinux ELF unreadable: {exc}")
        else:
            elf_arch = view.machine
            names = tuple(s.name for s in view.static_symbols if s.name)
            if names:
                symbols, source = names, SymbolSource.ELF_SYMTAB

    version, banner, build_date = find_kernel_version(data)

    if symbols is None and use_kallsyms:
        try:
            table = locate_kallsyms(data)
            symbols, source = tuple(table.names), SymbolSource.KALLSYMS
        except KallsymsNotFound:
            diagnostics.append("kallsyms not found")
        except LayoutUnsupported as exc:
            diagnostics.append(f"kallsyms layout unsupported: {exc}")

    if config_text is None:
        config_text = extract_ikconfig(data)
        if config_text is not None:
            diagnostics.append("config recovered from embedded IKCONFIG")
    config = parse_kconfig(config_text) if config_text is not None else None
    if config is not None:
        diagnostics.extend(str(w) for w in config.warnings)
        diagnostics.append("config values y and m both count as set")

    arch = _arch_from_config(config) or elf_arch or _arch_from_content(banner, symbols) or Machine.OTHER
    return KernelRecord(
        version=version, banner=banner, build_date=build_date, arch=arch, config=config,
        symbols=symbols, symbol_source=source, path=path,
        digest=hashlib.md5(data, usedforsecurity=False).hexdigest(), diagnostics=tuple(diagnostics))


def kernel_record_to_dict(record: KernelRecord) -> dict:
    mitigations = detect_kernel_mitigations(record)
    return {
        "path": record.path,
        "digest": record.digest,
        "version": str(record.version),
        "banner": record.banner,
        "build_date": record.build_date.isoformat() if record.build_date else None,
        "arch": record.arch.value,
        "config_present": record.config is not None,
        "symbol_source": record.symbol_source.value,
        "symbol_count": len(record.symbols or ()),
        "mitigations": {m.value: v.to_dict() for m, v in mitigations.items()},
        "supplementary": {k: v.to_dict() for k, v in detect_supplementary(record).items()},
        "diagnostics": list(record.diagnostics),
    }
