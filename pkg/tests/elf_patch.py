"""Byte-level program header edits for synthetic negative fixtures."""

import struct

PT_NULL = 0
PT_GNU_STACK = 0x6474E551
PT_GNU_RELRO = 0x6474E552
PF_W = 2


def _phdrs(data: bytes):
    is64 = data[4] == 2
    e = "<" if data[5] == 1 else ">"
    if is64:
        phoff, = struct.unpack_from(e + "Q", data, 32)
        phentsize, phnum = struct.unpack_from(e + "HH", data, 54)
    else:
        phoff, = struct.unpack_from(e + "I", data, 28)
        phentsize, phnum = struct.unpack_from(e + "HH", data, 42)
    for i in range(phnum):
        off = phoff + i * phentsize
        ptype, = struct.unpack_from(e + "I", data, off)
        flags_off = off + 4 if is64 else off + 24
        yield e, off, ptype, flags_off


def set_segment_flags(data: bytes, ptype: int, add: int) -> bytes:
    out = bytearray(data)
    hit = False
    for e, _, t, flags_off in _phdrs(data):
        if t == ptype:
            flags, = struct.unpack_from(e + "I", out, flags_off)
            struct.pack_into(e + "I", out, flags_off, flags | add)
            hit = True
    assert hit, f"no segment of type {ptype:#x}"
    return bytes(out)


def drop_segment(data: bytes, ptype: int) -> bytes:
    out = bytearray(data)
    hit = False
    for e, off, t, _ in _phdrs(data):
        if t == ptype:
            struct.pack_into(e + "I", out, off, PT_NULL)
            hit = True
    assert hit, f"no segment of type {ptype:#x}"
    return bytes(out)


def make_relro_writable(data: bytes) -> bytes:
    return set_segment_flags(data, PT_GNU_RELRO, PF_W)


def drop_gnu_stack(data: bytes) -> bytes:
    return drop_segment(data, PT_GNU_STACK)
