"""Canonical Huffman coding of non-negative integer symbols.

Bits are packed most-significant-first within bytes. A table holding a single
symbol gets a zero-length code, so constant inputs cost no payload bits.

Serialized table: ``n_symbols u32`` followed by ``n_symbols`` pairs of
``symbol u32, length u8`` sorted by (length, symbol).
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass

import numba
import numpy as np

from .datamodel import FormatError, TruncationError

MAX_CODE_LENGTH = 62


def code_lengths(freqs: np.ndarray) -> dict[int, int]:
    """Huffman code length per symbol with nonzero frequency."""
    symbols = np.flatnonzero(freqs)
    if symbols.size == 0:
        return {}
    if symbols.size == 1:
        return {int(symbols[0]): 0}
    # (weight, tiebreak, members); members merged as lists keep this O(n log n) in depth updates
    heap = [(int(freqs[s]), i, [int(s)]) for i, s in enumerate(symbols)]
    heapq.heapify(heap)
    depth = {int(s): 0 for s in symbols}
    tiebreak = len(heap)
    while len(heap) > 1:
        w1, _, m1 = heapq.heappop(heap)
        w2, _, m2 = heapq.heappop(heap)
        for s in m1:
            depth[s] += 1
        for s in m2:
            depth[s] += 1
        if len(m1) < len(m2):
            m1, m2 = m2, m1
        m1.extend(m2)
        heapq.heappush(heap, (w1 + w2, tiebreak, m1))
        tiebreak += 1
    if max(depth.values()) > MAX_CODE_LENGTH:
        raise FormatError("Huffman code length exceeds 62 bits")
    return depth


@dataclass(frozen=True)
class HuffmanTable:
    symbols: np.ndarray   # int64, sorted by (length, symbol)
    lengths: np.ndarray   # int64, aligned with symbols

    @classmethod
    def from_frequencies(cls, freqs) -> "HuffmanTable":
        lengths = code_lengths(np.asarray(freqs))
        items = sorted((l, s) for s, l in lengths.items())
        return cls(np.array([s for _, s in items], dtype=np.int64),
                   np.array([l for l, _ in items], dtype=np.int64))

    def codes(self) -> np.ndarray:
        """Canonical code words aligned with ``symbols``."""
        out = np.zeros(self.symbols.size, dtype=np.int64)
        code = 0
        prev = int(self.lengths[0]) if self.lengths.size else 0
        for i, length in enumerate(self.lengths.tolist()):
            code <<= length - prev
            out[i] = code
            code += 1
            prev = length
        return out

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<I", self.symbols.size)]
        rec = np.empty(self.symbols.size, dtype=[("s", "<u4"), ("l", "u1")])
        rec["s"] = self.symbols
        rec["l"] = self.lengths
        parts.append(rec.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["HuffmanTable", int]:
        if offset + 4 > len(buf):
            raise TruncationError("truncated Huffman table")
        (n,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        end = offset + 5 * n
        if end > len(buf):
            raise TruncationError("truncated Huffman table")
        rec = np.frombuffer(buf, dtype=[("s", "<u4"), ("l", "u1")], count=n, offset=offset)
        lengths = rec["l"].astype(np.int64)
        if n and (np.any(np.diff(lengths) < 0) or lengths.max() > MAX_CODE_LENGTH):
            raise FormatError("Huffman table is not canonical")
        return cls(rec["s"].astype(np.int64), lengths), end


@numba.njit(cache=True, nogil=True)
def _encode_kernel(data, lut_code, lut_len, out):
    pos = 0
    for i in range(data.size):
        s = data[i]
        code = lut_code[s]
        length = lut_len[s]
        for b in range(length - 1, -1, -1):
            if (code >> b) & 1:
                out[pos >> 3] |= np.uint8(0x80 >> (pos & 7))
            pos += 1
    return pos


@numba.njit(cache=True, nogil=True)
def _decode_kernel(buf, nbits, count, first_code, first_index, count_by_len, symbols, out):
    pos = 0
    for i in range(count):
        code = 0
        length = 0
        while True:
            if length >= first_code.size - 1:
                return -1
            if pos >= nbits:
                return -2
            code = (code << 1) | ((buf[pos >> 3] >> (7 - (pos & 7))) & 1)
            pos += 1
            length += 1
            rel = code - first_code[length]
            if 0 <= rel < count_by_len[length]:
                out[i] = symbols[first_index[length] + rel]
                break
    return pos


def encode(data: np.ndarray, table: HuffmanTable) -> tuple[bytes, int]:
    """Returns (packed bytes, number of valid bits)."""
    data = np.ascontiguousarray(data, dtype=np.int64)
    if data.size == 0 or table.symbols.size == 0:
        return b"", 0
    alphabet = int(table.symbols.max()) + 1
    lut_code = np.zeros(alphabet, dtype=np.int64)
    lut_len = np.full(alphabet, -1, dtype=np.int64)
    lut_code[table.symbols] = table.codes()
    lut_len[table.symbols] = table.lengths
    if data.min() < 0 or data.max() >= alphabet or np.any(lut_len[data] < 0):
        raise ValueError("data contains symbols missing from the Huffman table")
    nbits = int(lut_len[data].sum())
    out = np.zeros((nbits + 7) // 8, dtype=np.uint8)
    _encode_kernel(data, lut_code, lut_len, out)
    return out.tobytes(), nbits


def decode(buf: bytes, nbits: int, count: int, table: HuffmanTable) -> np.ndarray:
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if table.symbols.size == 0:
        raise FormatError("empty Huffman table for non-empty data")
    if table.symbols.size == 1:
        return np.full(count, table.symbols[0], dtype=np.int64)
    if len(buf) * 8 < nbits:
        raise TruncationError("Huffman bit stream shorter than declared")
    maxlen = int(table.lengths.max())
    codes = table.codes()
    first_code = np.zeros(maxlen + 2, dtype=np.int64)
    first_index = np.zeros(maxlen + 2, dtype=np.int64)
    count_by_len = np.zeros(maxlen + 2, dtype=np.int64)
    for length in range(1, maxlen + 1):
        idx = np.flatnonzero(table.lengths == length)
        if idx.size:
            first_code[length] = codes[idx[0]]
            first_index[length] = idx[0]
            count_by_len[length] = idx.size
    out = np.empty(count, dtype=np.int64)
    arr = np.frombuffer(buf, dtype=np.uint8)
    used = _decode_kernel(arr, nbits, count, first_code, first_index, count_by_len,
                          table.symbols, out)
    if used == -1:
        raise FormatError("invalid Huffman code word")
    if used == -2:
        raise TruncationError("Huffman bit stream ended early")
    return out
