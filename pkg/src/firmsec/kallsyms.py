"""Native recovery of the kernel's compressed symbol table (kallsyms).

The build emits, in order: the address/offset table, ``kallsyms_num_syms``,
the compressed ``kallsyms_names`` stream, ``kallsyms_markers`` (names
offset of every 256th symbol), ``kallsyms_token_table`` (256
NUL-terminated strings) and ``kallsyms_token_index`` (256 u16 offsets into
the token table).  We anchor on the token index, which is easy to
recognise, and walk backwards from there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

TOKENS = 256
MAX_TOKEN_LEN = 128
# the index is preceded by ALGN padding (.balign 4 or 8)
_MAX_PAD = 8
_MARKER_STRIDE = 256
# upper bound on an average compressed record, used to bound searches
_MAX_RECORD = 64
# tables with almost no filled slots (identity lookup tables, zero runs) are noise
_MIN_FILLED = 16


class KallsymsNotFound(Exception):
    """No token table / token index pair in the image."""


class LayoutUnsupported(Exception):
    """A token table was found but the surrounding arrays could not be decoded."""


@dataclass(frozen=True)
class KallsymsTable:
    tokens: tuple[bytes, ...]
    token_table_offset: int
    token_index_offset: int
    names_offset: int
    names_blob: bytes
    num_syms: int
    word_size: int
    endianness: str
    full_names: tuple[bytes, ...]  # type character included

    @property
    def names(self) -> list[str]:
        return [n[1:].decode("latin-1") for n in self.full_names]

    @property
    def types(self) -> list[str]:
        return [chr(n[0]) if n else "?" for n in self.full_names]


def _token_index_candidates(data: bytes, order: str) -> list[tuple[int, np.ndarray]]:
    n = len(data) // 2
    if n < TOKENS:
        return []
    a = np.frombuffer(data[: n * 2], dtype=f"{order}u2").astype(np.int64)
    d = np.diff(a)
    # slots the compressor never filled hold empty strings (step 1)
    good = (d >= 1) & (d <= MAX_TOKEN_LEN + 1)
    bad = np.concatenate(([0], np.cumsum(~good)))
    # runs of 255 good steps starting at a zero entry
    starts = np.nonzero(a[: n - TOKENS + 1] == 0)[0]
    starts = starts[bad[starts + TOKENS - 1] - bad[starts] == 0]
    return [(int(s) * 2, a[s:s + TOKENS]) for s in starts]


def _tokens_before(data: bytes, index_off: int, idx: np.ndarray) -> Optional[tuple[int, tuple[bytes, ...]]]:
    """Find the token table ending just before ``index_off`` and matching ``idx``."""
    last = int(idx[-1])
    for pad in range(_MAX_PAD):
        end = index_off - pad
        if pad and data[end] != 0:
            break
        # the last token runs from table+last to a NUL at end-1
        nul = end - 1
        if nul < 0 or data[nul] != 0:
            continue
        # the final token's length is unknown; try every plausible one
        for tlen in range(0, MAX_TOKEN_LEN + 1):
            table = nul - tlen - last
            if table < 0:
                break
            if tlen and data[table + last] == 0:
                break
            tokens = _split_tokens(data, table, idx)
            if tokens is not None and len(tokens[-1]) == tlen:
                return table, tokens
    return None


def _split_tokens(data: bytes, table: int, idx: np.ndarray) -> Optional[tuple[bytes, ...]]:
    tokens = []
    offs = [int(x) for x in idx]
    if sum(1 for a, b in zip(offs, offs[1:]) if b - a > 1) < _MIN_FILLED:
        return None
    for i, off in enumerate(offs):
        start = table + off
        end = data.find(b"\0", start)
        if end < start:
            return None
        if i + 1 < TOKENS and end != table + offs[i + 1] - 1:
            return None
        tokens.append(bytes(data[start:end]))
    return tuple(tokens)


def _decode_records(data: bytes, start: int, count: int, limit: int):
    """Walk ``count`` records from ``start``; returns record start offsets or None."""
    pos = start
    offs = []
    for _ in range(count):
        if pos >= limit:
            return None
        offs.append(pos)
        n = data[pos]
        if n & 0x80:
            if pos + 1 >= limit:
                return None
            n = (n & 0x7F) | (data[pos + 1] << 7)
            pos += 2
        else:
            pos += 1
        if n == 0:
            return None
        pos += n
    offs.append(pos)
    return offs


def _markers_before(data: bytes, table: int, width: int, order: str):
    """Yield (marker values, marker array offset) candidates ending before ``table``."""
    dtype = f"{order}u{width}"
    for pad in range(0, _MAX_PAD + 1, 2):
        end = table - pad
        if end % width:
            continue
        if pad and any(data[end:table]):
            break
        vals = []
        pos = end - width
        while pos >= 0:
            v = int(np.frombuffer(data, dtype=dtype, count=1, offset=pos)[0])
            if vals and v >= vals[-1]:
                break
            vals.append(v)
            if v == 0:
                yield list(reversed(vals)), pos
                break
            if vals and len(vals) > 1 and vals[-2] - v > _MARKER_STRIDE * _MAX_RECORD * 4:
                break
            pos -= width


def locate_kallsyms(data: bytes) -> KallsymsTable:
    data = bytes(data)
    found_tokens = False
    for order, endianness in (("<", "little"), (">", "big")):
        for index_off, idx in _token_index_candidates(data, order):
            hit = _tokens_before(data, index_off, idx)
            if hit is None:
                continue
            found_tokens = True
            table, tokens = hit
            result = _names_for(data, table, tokens, order, endianness, index_off)
            if result is not None:
                return result
    if found_tokens:
        raise LayoutUnsupported("token table found but names/markers could not be decoded")
    raise KallsymsNotFound("no kallsyms token table")


def _names_for(data, table, tokens, order, endianness, index_off) -> Optional[KallsymsTable]:
    for width in (4, 8):
        for markers, marker_off in _markers_before(data, table, width, order):
            k = len(markers)
            # names end at the marker array, give or take alignment padding
            lo_n, hi_n = (k - 1) * _MARKER_STRIDE + 1, k * _MARKER_STRIDE
            span = markers[-1] + _MARKER_STRIDE * _MAX_RECORD * 2
            first = max(0, marker_off - span - 8)
            for nw in (4, 8):
                dtype = f"{order}u{nw}"
                base = first - first % nw
                count = (marker_off - base) // nw
                if count <= 0:
                    continue
                words = np.frombuffer(data, dtype=dtype, count=count, offset=base).astype(np.int64)
                cands = np.nonzero((words >= lo_n) & (words <= hi_n))[0]
                for c in cands[::-1]:
                    num_pos = base + int(c) * nw
                    num = int(words[c])
                    names = num_pos + nw
                    offs = _decode_records(data, names, num, marker_off)
                    if offs is None or not (marker_off - _MAX_PAD <= offs[-1] <= marker_off):
                        continue
                    if any(offs[i * _MARKER_STRIDE] - names != markers[i] for i in range(k)):
                        continue
                    full = tuple(_expand(data, offs[i], tokens) for i in range(num))
                    return KallsymsTable(tokens, table, index_off, names, data[names:offs[-1]],
                                         num, width, endianness, full)
    return None


def _expand(data: bytes, pos: int, tokens) -> bytes:
    n = data[pos]
    if n & 0x80:
        n = (n & 0x7F) | (data[pos + 1] << 7)
        pos += 2
    else:
        pos += 1
    return b"".join(tokens[c] for c in data[pos:pos + n])


def extract_kallsyms(data: bytes) -> list[str]:
    """Symbol names in table order, type character stripped."""
    return locate_kallsyms(data).names


# -- re-encoding ------------------------------------------------------------

def _replace_pair(codes: list[int], left: int, right: int, slot: int) -> list[int]:
    out = []
    i = 0
    while i < len(codes):
        if i + 1 < len(codes) and codes[i] == left and codes[i + 1] == right:
            out.append(slot)
            i += 2
        else:
            out.append(codes[i])
            i += 1
    return out


def _pair_profit(seqs, left: int, right: int) -> int:
    return sum(1 for codes in seqs for a, b in zip(codes, codes[1:]) if a == left and b == right)


def encode_names(full_names, tokens) -> bytes:
    """Compress names (type character included) with a recovered token table.

    The token table only stores expansions, so the pair behind each learned
    token is recovered by replaying the build-time compressor: slots are
    filled from 255 downwards, and when an expansion splits into several
    candidate pairs the one with the highest current profit wins, ties going
    to the lowest pair index.
    """
    seqs = [list(n) for n in full_names]
    by_expansion: dict[bytes, list[int]] = {}
    for i, tok in enumerate(tokens):
        if tok == bytes([i]):
            by_expansion.setdefault(tok, []).append(i)
    for slot in range(TOKENS - 1, -1, -1):
        tok = tokens[slot]
        if len(tok) < 2:
            continue
        cands = [(left, right)
                 for cut in range(1, len(tok))
                 for left in by_expansion.get(tok[:cut], ())
                 for right in by_expansion.get(tok[cut:], ())]
        if not cands:
            raise LayoutUnsupported(f"token {slot} is not a pair of earlier tokens")
        if len(cands) == 1:
            left, right = cands[0]
        else:
            left, right = max(cands, key=lambda c: (_pair_profit(seqs, *c), -(c[0] | c[1] << 8)))
        seqs = [_replace_pair(codes, left, right, slot) for codes in seqs]
        by_expansion.setdefault(tok, []).append(slot)

    out = bytearray()
    for codes in seqs:
        n = len(codes)
        if n > 0x7F:
            out += bytes([(n & 0x7F) | 0x80, n >> 7])
        else:
            out.append(n)
        out += bytes(codes)
    return bytes(out)
