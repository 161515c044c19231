"""Independent kallsyms encoder used as a test oracle.

Follows the build-time compressor of the kernel's scripts/kallsyms.c:
count adjacent byte-pair profits, seed single characters into their own
slots, then fill free slots from 255 down with the most profitable pair,
compressing every symbol after each pick.  It shares no code with the
extractor under test.
"""

import random
import struct

import numpy as np


def _pairs(sym):
    return [sym[i] | (sym[i + 1] << 8) for i in range(len(sym) - 1)]


def build_token_table(full_names):
    syms = [list(n) for n in full_names]
    profit = np.zeros(0x10000, dtype=np.int64)
    for s in syms:
        for p in _pairs(s):
            profit[p] += 1
    table = [None] * 256
    for s in syms:
        for c in s:
            table[c] = [c]
    for slot in range(255, -1, -1):
        if table[slot] is not None:
            continue
        best = int(np.argmax(profit))  # first maximum: lowest pair index wins ties
        if profit[best] == 0:
            break
        a, b = best & 0xFF, best >> 8
        table[slot] = [a, b]
        for k, s in enumerate(syms):
            if len(s) < 2:
                continue
            i, out, changed = 0, [], False
            while i < len(s):
                if i + 1 < len(s) and s[i] == a and s[i + 1] == b:
                    out.append(slot)
                    i += 2
                    changed = True
                else:
                    out.append(s[i])
                    i += 1
            if changed:
                for p in _pairs(s):
                    profit[p] -= 1
                for p in _pairs(out):
                    profit[p] += 1
                syms[k] = out

    def expand(code):
        ent = table[code]
        if ent is None:
            return b""
        if len(ent) == 1:
            return bytes([ent[0]])
        return expand(ent[0]) + expand(ent[1])

    tokens = [expand(i) for i in range(256)]
    return tokens, syms


def build_image(names, types=None, rng=None, word=4, endian="<", marker_width=4, prefix=64, suffix=64):
    """Return (image bytes, names blob, full names) for ``names``."""
    rng = rng or random.Random(0)
    types = types or [rng.choice("TtDdBbRr") for _ in names]
    full = [t.encode() + n.encode() for t, n in zip(types, names)]
    tokens, encoded = build_token_table(full)
    def align(buf, n):
        while len(buf) % n:
            buf.append(0)

    img = bytearray(rng.randbytes(prefix))
    align(img, word)
    img += rng.randbytes(4 * len(names))  # offsets
    img += struct.pack(endian + ("I" if word == 4 else "Q"), 0xC0008000)  # relative base
    align(img, word)
    img += struct.pack(endian + ("I" if word == 4 else "Q"), len(names))
    names_start = len(img)
    blob = bytearray()
    markers = []
    for i, e in enumerate(encoded):
        if i % 256 == 0:
            markers.append(len(blob))
        n = len(e)
        blob += bytes([n]) if n <= 0x7F else bytes([(n & 0x7F) | 0x80, n >> 7])
        blob += bytes(e)
    img += blob
    align(img, word)
    for m in markers:
        img += struct.pack(endian + ("I" if marker_width == 4 else "Q"), m)
    align(img, word)
    index = []
    table = bytearray()
    for t in tokens:
        index.append(len(table))
        table += t + b"\0"
    img += table
    align(img, word)
    for off in index:
        img += struct.pack(endian + "H", off)
    img += rng.randbytes(suffix)
    assert img[names_start:names_start + len(blob)] == blob
    return bytes(img), bytes(blob), full


def random_symbol(rng):
    parts = ["sys", "do", "init", "vfs", "__", "kmem", "cache", "irq", "net", "dev", "read", "write", "alloc",
             "free", "lock", "page", "ext4", "usb", "tcp", "ipv4", "sched", "task", "timer", "_", "stack",
             "chk", "fail", "start", "kernel", "copy", "user"]
    n = rng.randint(1, 5)
    name = "_".join(rng.choice(parts) for _ in range(n))
    if rng.random() < 0.3:
        name += str(rng.randint(0, 999))
    return name
