"""Binary hardening measurement for Linux-based embedded firmware."""

from .elf import ElfError, NotElf, parse_elf
from .mitigations import MitigationReport, RelroLevel, Status, scan_binary

__version__ = "0.1.0"

__all__ = ["ElfError", "MitigationReport", "NotElf", "RelroLevel", "Status", "parse_elf", "scan_binary"]
