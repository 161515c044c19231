"""Lightweight code-reference scanning.

Instead of disassembling, each architecture scanner looks for the handful
of encodings compilers use to materialise an address or make a direct
call: ARM literal pools, PC-relative literals and movw/movt pairs, AArch64
adrp pairs, MIPS lui pairs and GOT loads, PowerPC lis pairs, and x86
absolute or rip-relative displacements.  Only executable PT_LOAD segments
are scanned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .elf import PT_LOAD, ElfView, Machine

# how far below a reference the start of its enclosing function may lie
DEFAULT_WINDOW = 0x100
# instructions searched after a hi-half for the matching lo-half
PAIR_LOOKAHEAD = 8


class UnsupportedArch(Exception):
    """No scanner for this machine; callers report 'unknown', not 'absent'."""


@dataclass(frozen=True)
class CodeRef:
    site: int
    target: int
    kind: str
    insn: Optional[int] = None

    @property
    def origin(self) -> int:
        """Address of the instruction responsible for the reference."""
        return self.insn if self.insn is not None else self.site

    @property
    def is_call(self) -> bool:
        return self.kind == "call"


@dataclass
class _Chunk:
    base: int
    data: bytes


def _exec_chunks(view: ElfView, align: int = 1) -> Iterator[_Chunk]:
    raw = view.raw_bytes
    for seg in view.segments:
        if seg.type != PT_LOAD or not seg.executable or seg.filesz == 0:
            continue
        start = seg.offset
        end = min(seg.offset + seg.filesz, len(raw))
        base = seg.vaddr
        skip = (-base) % align
        start += skip
        base += skip
        if end - start < align:
            continue
        n = (end - start) // align * align
        yield _Chunk(base, raw[start:start + n])


def _words(view: ElfView, chunk: _Chunk, size: int = 4) -> np.ndarray:
    order = "<" if view.endianness == "little" else ">"
    return np.frombuffer(chunk.data, dtype=f"{order}u{size}").astype(np.int64 if size == 4 else np.uint64)


def _sext(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


def _mask(view: ElfView, value: int) -> int:
    return value & ((1 << view.bitness) - 1)


def scan_references(view: ElfView, lo: int, hi: int, calls_only: bool = False) -> list[CodeRef]:
    """Every reference whose resolved target lies in ``[lo, hi)``."""
    scanner = _SCANNERS.get(view.machine)
    if scanner is None:
        raise UnsupportedArch(view.arch_name)
    refs = scanner(view, lo, hi, calls_only)
    return sorted(set(refs), key=lambda r: (r.site, r.kind, r.target))


def find_code_references(view: ElfView, target_vaddr: int) -> list[CodeRef]:
    """Code locations that resolve exactly to ``target_vaddr``."""
    return [r for r in scan_references(view, target_vaddr, target_vaddr + 1) if not r.is_call]


def _arm_branches(w, addrs):
    b = (w & 0x0F000000) == 0x0A000000
    return b, addrs + 8 + (((w & 0xFFFFFF) ^ 0x800000) - 0x800000) * 4


def _aarch64_branches(w, addrs):
    b = (w & 0xFC000000) == 0x14000000
    bcond = (w & 0xFF000010) == 0x54000000
    cb = (w & 0x7E000000) == 0x34000000
    tb = (w & 0x7E000000) == 0x36000000
    tgt = np.where(b, addrs + (((w & 0x3FFFFFF) ^ 0x2000000) - 0x2000000) * 4,
                   np.where(tb, addrs + ((((w >> 5) & 0x3FFF) ^ 0x2000) - 0x2000) * 4,
                            addrs + ((((w >> 5) & 0x7FFFF) ^ 0x40000) - 0x40000) * 4))
    return b | bcond | cb | tb, tgt


def _mips_branches(w, addrs):
    op = w >> 26
    cond = (op == 4) | (op == 5) | (op == 6) | (op == 7) | ((op >= 0x14) & (op <= 0x17)) | (op == 1)
    j = op == 2
    tgt = np.where(j, ((addrs + 4) & 0xF0000000) | ((w & 0x3FFFFFF) << 2),
                   addrs + 4 + (((w & 0xFFFF) ^ 0x8000) - 0x8000) * 4)
    return cond | j, tgt


def _ppc_branches(w, addrs):
    op = w >> 26
    bc = (op == 16) & ((w & 3) == 0)
    b = (op == 18) & ((w & 3) == 0)
    tgt = np.where(b, addrs + (((w & 0x03FFFFFC) ^ 0x02000000) - 0x02000000),
                   addrs + (((w & 0xFFFC) ^ 0x8000) - 0x8000))
    return bc | b, tgt


# (unconditional return test, local branch decoder) per fixed-width ISA
_FLOW = {
    Machine.ARM: (lambda w: (w == 0xE12FFF1E) | ((w & 0xFFFF8000) == 0xE8BD8000) | (w == 0xE49DF004),
                  _arm_branches),
    Machine.AARCH64: (lambda w: w == 0xD65F03C0, _aarch64_branches),
    Machine.MIPS: (lambda w: w == 0x03E00008, _mips_branches),
    Machine.POWERPC: (lambda w: w == 0x4E800020, _ppc_branches),
}


def _same_function(view: ElfView, start: int, origin: int) -> bool:
    """False when a return between ``start`` and ``origin`` ends the function.

    Compilers move cold blocks past the return, so a return only counts as
    a boundary if no branch before it lands between it and ``origin``.
    """
    flow = _FLOW.get(view.machine)
    if flow is None or origin <= start:
        return True
    body = view.read_vaddr(start, origin - start + 4)
    if not body:
        return True
    is_return, branches = flow
    order = "<" if view.endianness == "little" else ">"
    w = np.frombuffer(body[: len(body) // 4 * 4], dtype=f"{order}u4").astype(np.int64)
    addrs = start + 4 * np.arange(len(w), dtype=np.int64)
    rets = np.nonzero(is_return(w))[0]
    if len(rets) == 0:
        return True
    last = int(addrs[rets[-1]])
    if view.machine is Machine.MIPS:
        last += 4  # delay slot
    is_branch, tgt = branches(w, addrs)
    bridged = is_branch & (addrs < last) & (tgt > last) & (tgt <= origin)
    return bool(np.any(bridged))


def callers_of_region(view: ElfView, ref: CodeRef, window: int = DEFAULT_WINDOW) -> list[CodeRef]:
    """Direct calls into the function that contains ``ref``.

    The function start is approximated by the highest call target at or
    below the referencing instruction, at most ``window`` bytes away.
    """
    origin = ref.origin
    calls = scan_references(view, max(0, origin - window), origin + 1, calls_only=True)
    if not calls:
        return []
    start = max(c.target for c in calls)
    if not _same_function(view, start, origin):
        return []
    return [c for c in calls if c.target == start and not (start <= c.site <= origin)]


# -- word-aligned literal pools (shared) -------------------------------------

def _literal_words(view, chunk, lo, hi, size):
    words = _words(view, chunk, size)
    if size == 8:
        hits = np.nonzero((words >= np.uint64(max(lo, 0))) & (words < np.uint64(hi)))[0]
    else:
        hits = np.nonzero((words >= lo) & (words < hi))[0]
    return [CodeRef(chunk.base + size * int(i), int(words[i]), "literal") for i in hits]


# -- ARM (A32) ---------------------------------------------------------------

def _scan_arm(view, lo, hi, calls_only):
    refs = []
    thumb = _has_thumb(view)
    for chunk in _exec_chunks(view, 4):
        w = _words(view, chunk)
        addrs = chunk.base + 4 * np.arange(len(w), dtype=np.int64)

        # BL / BLX immediate
        bl = ((w & 0x0E000000) == 0x0A000000) & ((w & 0x01000000) != 0)
        off = ((w & 0xFFFFFF) ^ 0x800000) - 0x800000
        tgt = (addrs + 8 + off * 4 + np.where((w >> 28) == 0xF, ((w >> 24) & 1) * 2, 0)) & 0xFFFFFFFF
        for i in np.nonzero(bl & (tgt >= lo) & (tgt < hi))[0]:
            refs.append(CodeRef(int(addrs[i]), int(tgt[i]), "call"))
        if thumb:
            refs.extend(_thumb_calls(view, chunk, lo, hi))
        if calls_only:
            continue

        literal_sites = {r.site: r for r in _literal_words(view, chunk, lo, hi, 4)}

        # ldr rd, [pc, #+-imm12]
        for i in np.nonzero((w & 0x0F7F0000) == 0x051F0000)[0]:
            insn = int(w[i])
            imm = insn & 0xFFF
            lit = int(addrs[i]) + 8 + (imm if insn & (1 << 23) else -imm)
            if lit in literal_sites:
                r = literal_sites[lit]
                literal_sites[lit] = CodeRef(r.site, r.target, r.kind, int(addrs[i]))
                continue
            value = view.read_word(lit, 4)
            if value is None:
                continue
            rd = (insn >> 12) & 0xF
            for j in range(i + 1, min(i + 1 + PAIR_LOOKAHEAD, len(w))):
                nxt = int(w[j])
                if (nxt & 0x0FE00FF0) == 0x00800000:  # add rX, rN, rM (no shift)
                    rn, rm = (nxt >> 16) & 0xF, nxt & 0xF
                    if {rn, rm} == {15, rd}:
                        val = (int(addrs[j]) + 8 + value) & 0xFFFFFFFF
                        if lo <= val < hi:
                            refs.append(CodeRef(int(addrs[j]), val, "pc_literal", int(addrs[i])))
                        break
                if (nxt >> 12) & 0xF == rd and (nxt & 0x0C000000) == 0:
                    break
        refs.extend(literal_sites.values())

        # movw rd, #lo16 ... movt rd, #hi16
        movt = (w & 0x0FF00000) == 0x03400000
        hi16 = ((w >> 4) & 0xF000) | (w & 0xFFF)
        movt &= (hi16 >= (max(lo, 0) >> 16)) & (hi16 <= ((hi - 1) >> 16))
        for j in np.nonzero(movt)[0]:
            rd = (int(w[j]) >> 12) & 0xF
            for i in range(j - 1, max(-1, j - 1 - PAIR_LOOKAHEAD), -1):
                prev = int(w[i])
                if (prev & 0x0FF00000) == 0x03000000 and (prev >> 12) & 0xF == rd:
                    val = (int(hi16[j]) << 16) | ((prev >> 4) & 0xF000) | (prev & 0xFFF)
                    if lo <= val < hi:
                        refs.append(CodeRef(int(addrs[i]), val, "movw_movt"))
                    break
    return refs


def _has_thumb(view: ElfView) -> bool:
    """Thumb code is signalled by odd function addresses (interworking bit)."""
    if view.entry & 1:
        return True
    return any(sym.type == 2 and sym.value & 1 for sym in (*view.static_symbols, *view.dynamic_symbols))


def _thumb_calls(view, chunk, lo, hi):
    """Thumb-2 BL/BLX immediates, scanned at every halfword."""
    order = "<" if view.endianness == "little" else ">"
    h = np.frombuffer(chunk.data, dtype=f"{order}u2").astype(np.int64)
    if len(h) < 2:
        return []
    first, second = h[:-1], h[1:]
    cand = ((first & 0xF800) == 0xF000) & ((second & 0xC000) == 0xC000)
    s = (first >> 10) & 1
    j1 = (second >> 13) & 1
    j2 = (second >> 11) & 1
    i1 = 1 - (j1 ^ s)
    i2 = 1 - (j2 ^ s)
    imm = (s << 24) | (i1 << 23) | (i2 << 22) | ((first & 0x3FF) << 12) | ((second & 0x7FF) << 1)
    imm = (imm ^ 0x1000000) - 0x1000000
    sites = chunk.base + 2 * np.arange(len(first), dtype=np.int64)
    tgt = sites + 4 + imm
    blx = (second & 0x1000) == 0
    tgt = np.where(blx, tgt & ~3, tgt) & 0xFFFFFFFF
    return [CodeRef(int(sites[i]), int(tgt[i]), "call")
            for i in np.nonzero(cand & (tgt >= lo) & (tgt < hi))[0]]


# -- AArch64 -----------------------------------------------------------------

def _scan_aarch64(view, lo, hi, calls_only):
    refs = []
    for chunk in _exec_chunks(view, 4):
        w = _words(view, chunk)
        addrs = chunk.base + 4 * np.arange(len(w), dtype=np.int64)

        bl = (w & 0xFC000000) == 0x94000000
        tgt = addrs + (((w & 0x3FFFFFF) ^ 0x2000000) - 0x2000000) * 4
        for i in np.nonzero(bl & (tgt >= lo) & (tgt < hi))[0]:
            refs.append(CodeRef(int(addrs[i]), int(tgt[i]), "call"))
        if calls_only:
            continue

        imm21 = (((w >> 5) & 0x7FFFF) << 2) | ((w >> 29) & 3)
        imm21 = (imm21 ^ 0x100000) - 0x100000
        adr = (w & 0x9F000000) == 0x10000000
        adr_tgt = addrs + imm21
        for i in np.nonzero(adr & (adr_tgt >= lo) & (adr_tgt < hi))[0]:
            refs.append(CodeRef(int(addrs[i]), int(adr_tgt[i]), "adr"))

        adrp = (w & 0x9F000000) == 0x90000000
        page = (addrs & ~0xFFF) + imm21 * 4096
        adrp &= (page >= (lo & ~0xFFF) - 0x1000) & (page < hi + 0x1000)
        for i in np.nonzero(adrp)[0]:
            rd = int(w[i]) & 31
            for j in range(i + 1, min(i + 1 + PAIR_LOOKAHEAD, len(w))):
                nxt = int(w[j])
                rn = (nxt >> 5) & 31
                val = None
                if (nxt & 0x7F800000) == 0x11000000 and rn == rd:  # add (immediate)
                    val = int(page[i]) + (((nxt >> 10) & 0xFFF) << (12 * ((nxt >> 22) & 1)))
                elif (nxt & 0x3B000000) == 0x39000000 and rn == rd:  # ldr/str (unsigned offset)
                    val = int(page[i]) + (((nxt >> 10) & 0xFFF) << ((nxt >> 30) & 3))
                if val is not None:
                    if lo <= val < hi:
                        refs.append(CodeRef(int(addrs[i]), val, "adrp"))
                    break
        refs.extend(_literal_words(view, _Chunk(chunk.base + (-chunk.base) % 8,
                                                chunk.data[(-chunk.base) % 8:]), lo, hi, 8)
                    if len(chunk.data) >= 8 else [])
    return refs


# -- MIPS --------------------------------------------------------------------

_MIPS_BASE_OPS = {0x20, 0x21, 0x23, 0x24, 0x25, 0x28, 0x29, 0x2B, 0x37, 0x3F}
_MIPS_GP = 28
_MIPS_T9 = 25


def _mips_got(view: ElfView) -> Optional[tuple[int, int, int]]:
    """(gp, first slot, end) for the primary GOT, if one can be located."""
    got = view.section(".got")
    if got is not None and got.size:
        start, end = got.addr, got.addr + got.size
    else:
        start = view.dynamic_value(3)  # DT_PLTGOT holds the .got address on MIPS
        if start is None:
            return None
        local = view.dynamic_value(0x7000000A) or 0  # DT_MIPS_LOCAL_GOTNO
        symtabno = view.dynamic_value(0x70000011) or 0
        gotsym = view.dynamic_value(0x70000013) or 0
        end = start + max(local + symtabno - gotsym, 1) * (view.bitness // 8)
    return start + 0x7FF0, start, end


def _mips_follow_lo(w, addrs, i, reg, base):
    """Resolve ``base`` + the first lo16 consumer of ``reg`` after insn i."""
    for j in range(i + 1, min(i + 1 + PAIR_LOOKAHEAD, len(w))):
        nxt = int(w[j])
        op, rs, rt = nxt >> 26, (nxt >> 21) & 31, (nxt >> 16) & 31
        imm = nxt & 0xFFFF
        if rs == reg and op in (0x09, 0x19):  # addiu / daddiu
            return base + _sext(imm, 16), rt
        if rs == reg and op == 0x0D:  # ori
            return base | imm, rt
        if rs == reg and op in _MIPS_BASE_OPS:
            return base + _sext(imm, 16), None
        if rt == reg and op not in (0x2B, 0x28, 0x29, 0x3F) and op != 0:
            return None, None
    return None, None


def _scan_mips(view, lo, hi, calls_only):
    refs = []
    got = _mips_got(view)
    for chunk in _exec_chunks(view, 4):
        w = _words(view, chunk)
        addrs = chunk.base + 4 * np.arange(len(w), dtype=np.int64)
        op = w >> 26

        jal = op == 3
        tgt = ((addrs + 4) & 0xF0000000) | ((w & 0x3FFFFFF) << 2)
        for i in np.nonzero(jal & (tgt >= lo) & (tgt < hi))[0]:
            refs.append(CodeRef(int(addrs[i]), int(tgt[i]), "call"))
        bal = (op == 1) & (((w >> 16) & 31) == 0x11)
        btgt = addrs + 4 + (((w & 0xFFFF) ^ 0x8000) - 0x8000) * 4
        for i in np.nonzero(bal & (btgt >= lo) & (btgt < hi))[0]:
            refs.append(CodeRef(int(addrs[i]), int(btgt[i]), "call"))

        # lw/ld rt, off(gp): GOT slot, possibly a page entry plus a lo16.
        # PIC code often copies $gp into a callee-saved register, so any
        # base other than $sp/$zero counts when the slot lands in the GOT.
        if got is not None:
            gp, got_lo, got_hi = got
            base = (w >> 21) & 31
            slot = gp + (((w & 0xFFFF) ^ 0x8000) - 0x8000)
            gotload = ((op == 0x23) | (op == 0x37)) & (base != 29) & (base != 0)
            gotload &= (slot >= got_lo) & (slot < got_hi)
            if calls_only:
                gotload &= ((w >> 16) & 31) == _MIPS_T9
            for i in np.nonzero(gotload)[0]:
                rt = (int(w[i]) >> 16) & 31
                value = view.read_word(_mask(view, int(slot[i])))
                if value is None:
                    continue
                kind = "call" if calls_only else "got"
                if lo <= value < hi:
                    refs.append(CodeRef(int(addrs[i]), value, kind))
                    continue
                val, _ = _mips_follow_lo(w, addrs, i, rt, value)
                if val is not None and lo <= _mask(view, val) < hi:
                    refs.append(CodeRef(int(addrs[i]), _mask(view, val), kind))
        if calls_only:
            continue

        # lui rt, hi16 ; addiu/ori/load rX, rt, lo16
        lui = (op == 0x0F) & (((w >> 21) & 31) == 0)
        hi16 = w & 0xFFFF
        lui &= (hi16 >= (max(lo - 0x8000, 0) >> 16)) & (hi16 <= ((hi + 0x8000) >> 16))
        for i in np.nonzero(lui)[0]:
            rt = (int(w[i]) >> 16) & 31
            val, _ = _mips_follow_lo(w, addrs, i, rt, int(hi16[i]) << 16)
            if val is not None and lo <= _mask(view, val) < hi:
                refs.append(CodeRef(int(addrs[i]), _mask(view, val), "hi_lo"))
        refs.extend(_literal_words(view, chunk, lo, hi, 4))
    return refs


# -- PowerPC -----------------------------------------------------------------

def _scan_powerpc(view, lo, hi, calls_only):
    refs = []
    for chunk in _exec_chunks(view, 4):
        w = _words(view, chunk)
        addrs = chunk.base + 4 * np.arange(len(w), dtype=np.int64)
        op = w >> 26

        bl = (op == 18) & ((w & 1) == 1)
        li = ((w & 0x03FFFFFC) ^ 0x02000000) - 0x02000000
        tgt = np.where((w & 2) != 0, li, addrs + li)
        for i in np.nonzero(bl & (tgt >= lo) & (tgt < hi))[0]:
            refs.append(CodeRef(int(addrs[i]), int(tgt[i]), "call"))
        if calls_only:
            continue

        lis = (op == 15) & (((w >> 16) & 31) == 0)
        for i in np.nonzero(lis)[0]:
            rd = (int(w[i]) >> 21) & 31
            base = (int(w[i]) & 0xFFFF) << 16
            for j in range(i + 1, min(i + 1 + PAIR_LOOKAHEAD, len(w))):
                nxt = int(w[j])
                nop, ra, rs = nxt >> 26, (nxt >> 16) & 31, (nxt >> 21) & 31
                imm = nxt & 0xFFFF
                val = None
                if nop in (14, 32, 34, 36, 38, 40, 44) and ra == rd:  # addi and D-form loads/stores
                    val = base + _sext(imm, 16)
                elif nop == 24 and rs == rd:  # ori rA, rS, imm
                    val = base | imm
                if val is not None:
                    val = _mask(view, val)
                    if lo <= val < hi:
                        refs.append(CodeRef(int(addrs[i]), val, "hi_lo"))
                    break
        refs.extend(_literal_words(view, chunk, lo, hi, 4))
    return refs


# -- x86 / x86-64 ------------------------------------------------------------

def _scan_x86(view, lo, hi, calls_only):
    refs = []
    for chunk in _exec_chunks(view, 1):
        if len(chunk.data) < 5:
            continue
        b = np.frombuffer(chunk.data, dtype=np.uint8).astype(np.int64)
        v = b[:-3] | (b[1:-2] << 8) | (b[2:-1] << 16) | (b[3:] << 24)
        sites = chunk.base + np.arange(len(v), dtype=np.int64)
        rel = sites + 4 + ((v ^ 0x80000000) - 0x80000000)
        if view.bitness == 32:
            rel &= 0xFFFFFFFF
        prev = np.concatenate(([0], b[:-4]))
        in_rel = (rel >= lo) & (rel < hi)

        for i in np.nonzero(in_rel & (prev == 0xE8))[0]:
            refs.append(CodeRef(int(sites[i]), int(rel[i]), "call", int(sites[i]) - 1))
        if calls_only:
            continue
        for i in np.nonzero((v >= lo) & (v < hi))[0]:
            refs.append(CodeRef(int(sites[i]), int(v[i]), "abs32"))
        if view.bitness == 64:
            # a zero displacement is almost always padding, not an operand
            for i in np.nonzero(in_rel & (prev != 0xE8) & (prev != 0xE9) & (v != 0))[0]:
                refs.append(CodeRef(int(sites[i]), int(rel[i]), "rip"))
    return refs


_SCANNERS = {
    Machine.ARM: _scan_arm,
    Machine.AARCH64: _scan_aarch64,
    Machine.MIPS: _scan_mips,
    Machine.POWERPC: _scan_powerpc,
    Machine.X86: _scan_x86,
    Machine.X64: _scan_x86,
}


def supported(view: ElfView) -> bool:
    return view.machine in _SCANNERS
