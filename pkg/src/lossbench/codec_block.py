"""Fixed-rate block-transform codec.

Each 4x4x4 block is coded into exactly ``bits_per_block = round(64 * bitrate)``
bits: an 8-bit exponent byte followed by an embedded bit-plane code of the
transformed block, cut off (or zero filled) at the budget. Steps per block:

1. ``e`` = binary exponent of max|b| (``max|b| < 2**e``), clamped to
   [-126, 128]; byte ``e + 127``, byte 0 marks an all-zero block.
2. ``q = rint(b * 2**(fpb - e))``, a signed integer with ``|q| <= 2**fpb``.
3. ``q << 6`` goes through the integer lifting transform along k, j, then i.
   The six guard bits absorb the rounding of the right shifts so that
   ``(inverse(forward(q << 6)) + 32) >> 6 == q`` exactly.
4. Coefficients are reordered by total sequency ``i + j + k``.
5. Magnitudes are coded plane by plane from bit ``fpb + 6`` down, with signs
   sent when a coefficient first becomes significant. Within a plane the
   already significant prefix is refined bit by bit, then the rest is scanned
   with group tests (one bit: "anything left in this plane?").

Blocks are concatenated in raster block order, most significant bit first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numba
import numpy as np

from .datamodel import (Codec, CompressedStream, ConfigError, DomainError, Field,
                        FormatError, Mode, TruncationError)

GUARD_BITS = 6
EXPONENT_BITS = 8
EXP_BIAS = 127
EXP_MIN, EXP_MAX = -126, 128
STREAM_FIXED_POINT_BITS = 30
# blocks per numpy batch; bounds peak memory on large fields
CHUNK_BLOCKS = 1 << 15


@dataclass(frozen=True)
class BlockParams:
    bitrate: float
    fixed_point_bits: int = 30

    def __post_init__(self):
        if not 0 < self.bitrate <= 32:
            raise ConfigError(f"bitrate must lie in (0, 32], got {self.bitrate}")
        if not 1 <= self.fixed_point_bits <= 30:
            raise ConfigError(f"fixed_point_bits must lie in [1, 30], got {self.fixed_point_bits}")
        if self.bits_per_block < EXPONENT_BITS:
            raise ConfigError(f"bitrate {self.bitrate} leaves fewer than 8 bits per block")

    @property
    def bits_per_block(self) -> int:
        return int(round(64 * self.bitrate))

    @property
    def planes(self) -> int:
        return self.fixed_point_bits + GUARD_BITS + 1


def _sequency_order() -> np.ndarray:
    i, j, k = np.meshgrid(np.arange(4), np.arange(4), np.arange(4), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    return np.lexsort((k, j, i, i + j + k))


SEQUENCY_ORDER = _sequency_order()
INVERSE_ORDER = np.argsort(SEQUENCY_ORDER)


# ------------------------------------------------------------------ layout

def working_shape(dims) -> tuple[int, int, int]:
    """3-D array shape the codec tiles; 1-D and 2-D data are zero padded and refolded."""
    dims = tuple(int(d) for d in dims)
    if len(dims) == 3:
        return dims
    n = int(np.prod(dims))
    if n <= 48:
        return (-(-n // 16), 4, 4)
    return (-(-n // 64), 8, 8)


def to_working(values: np.ndarray, dims) -> np.ndarray:
    shape = working_shape(dims)
    flat = np.zeros(int(np.prod(shape)), dtype=np.float32)
    flat[:values.size] = values
    return flat.reshape(shape)


def block_partition(a: np.ndarray) -> np.ndarray:
    """(n_blocks, 4, 4, 4) blocks in raster block order, edges replicated."""
    a = np.asarray(a)
    if a.ndim != 3:
        raise DomainError(f"block_partition needs a 3-D array, got {a.ndim}-D")
    pad = [(0, -n % 4) for n in a.shape]
    p = np.pad(a, pad, mode="edge")
    n0, n1, n2 = (s // 4 for s in p.shape)
    return p.reshape(n0, 4, n1, 4, n2, 4).transpose(0, 2, 4, 1, 3, 5).reshape(-1, 4, 4, 4)


def block_merge(blocks: np.ndarray, shape) -> np.ndarray:
    n0, n1, n2 = (-(-s // 4) for s in shape)
    p = blocks.reshape(n0, n1, n2, 4, 4, 4).transpose(0, 3, 1, 4, 2, 5)
    p = p.reshape(4 * n0, 4 * n1, 4 * n2)
    return p[:shape[0], :shape[1], :shape[2]]


def n_blocks(dims) -> int:
    return int(np.prod([-(-s // 4) for s in working_shape(dims)]))


# ------------------------------------------------------------------ transform

def lift_forward(x, y, z, w):
    x = x + w; x >>= 1; w = w - x
    z = z + y; z >>= 1; y = y - z
    x = x + z; x >>= 1; z = z - x
    w = w + y; w >>= 1; y = y - w
    w = w + (y >> 1); y = y - (w >> 1)
    return x, y, z, w


def lift_inverse(x, y, z, w):
    y = y + (w >> 1); w = w - (y >> 1)
    y = y + w; w = w << 1; w = w - y
    z = z + x; x = x << 1; x = x - z
    y = y + z; z = z << 1; z = z - y
    w = w + x; x = x << 1; x = x - w
    return x, y, z, w


def _apply(a: np.ndarray, fn, axes) -> np.ndarray:
    for axis in axes:
        v = np.moveaxis(a, axis, 0)
        a = np.moveaxis(np.stack(fn(v[0], v[1], v[2], v[3])), 0, axis)
    return a


def forward_transform(q: np.ndarray) -> np.ndarray:
    """Integer blocks (..., 4, 4, 4) -> coefficients, guard bits included."""
    a = np.asarray(q, dtype=np.int64) << GUARD_BITS
    nd = a.ndim
    return _apply(a, lift_forward, (nd - 1, nd - 2, nd - 3))


def inverse_transform(c: np.ndarray) -> np.ndarray:
    nd = c.ndim
    a = _apply(np.asarray(c, dtype=np.int64), lift_inverse, (nd - 3, nd - 2, nd - 1))
    return (a + (1 << (GUARD_BITS - 1))) >> GUARD_BITS


# ------------------------------------------------------------------ quantize

def block_exponents(blocks: np.ndarray) -> np.ndarray:
    """Exponent byte per block; 0 for all-zero blocks."""
    peak = np.abs(blocks.reshape(len(blocks), -1).astype(np.float64)).max(axis=1)
    e = np.clip(np.frexp(peak)[1], EXP_MIN, EXP_MAX)
    return np.where(peak > 0, e + EXP_BIAS, 0).astype(np.int64)


def to_fixed_point(blocks: np.ndarray, ebyte: np.ndarray, fpb: int) -> np.ndarray:
    e = np.where(ebyte > 0, ebyte - EXP_BIAS, 0)
    scaled = np.ldexp(blocks.astype(np.float64), (fpb - e).reshape(-1, 1, 1, 1))
    return np.where(ebyte.reshape(-1, 1, 1, 1) > 0, np.rint(scaled), 0).astype(np.int64)


def from_fixed_point(q: np.ndarray, ebyte: np.ndarray, fpb: int) -> np.ndarray:
    e = np.where(ebyte > 0, ebyte - EXP_BIAS, 0)
    v = np.ldexp(q.astype(np.float64), (e - fpb).reshape(-1, 1, 1, 1))
    return np.where(ebyte.reshape(-1, 1, 1, 1) > 0, v, 0.0)


# ------------------------------------------------------------------ bit planes

@numba.njit(cache=True, nogil=True, inline="always")
def _put(out, pos, bit):
    if bit:
        out[pos >> 3] |= np.uint8(0x80 >> (pos & 7))


@numba.njit(cache=True, nogil=True, inline="always")
def _get(buf, pos):
    return (buf[pos >> 3] >> (7 - (pos & 7))) & 1


@numba.njit(cache=True, nogil=True)
def _encode_blocks(coeffs, ebyte, bpb, planes, out, first_bit):
    nb = coeffs.shape[0]
    for b in range(nb):
        pos = first_bit + b * bpb
        end = pos + bpb
        e = ebyte[b]
        for t in range(7, -1, -1):
            _put(out, pos, (e >> t) & 1)
            pos += 1
        if e == 0:
            continue
        c = coeffs[b]
        n = 0
        for plane in range(planes - 1, -1, -1):
            if pos >= end:
                break
            # refinement of the significant prefix
            for i in range(n):
                if pos >= end:
                    break
                m = abs(c[i])
                bit = (m >> plane) & 1
                _put(out, pos, bit)
                pos += 1
                if bit and (m >> (plane + 1)) == 0:
                    if pos >= end:
                        break
                    _put(out, pos, c[i] < 0)
                    pos += 1
            # group tests over the rest
            while n < 64 and pos < end:
                any_set = 0
                for i in range(n, 64):
                    if (abs(c[i]) >> plane) & 1:
                        any_set = 1
                        break
                _put(out, pos, any_set)
                pos += 1
                if not any_set:
                    break
                while n < 64 and pos < end:
                    bit = (abs(c[n]) >> plane) & 1
                    if n < 63:
                        _put(out, pos, bit)
                        pos += 1
                    n += 1
                    if bit:
                        if pos < end:
                            _put(out, pos, c[n - 1] < 0)
                            pos += 1
                        break


@numba.njit(cache=True, nogil=True)
def _decode_blocks(buf, nb, bpb, planes, max_planes, first_bit, coeffs, ebyte):
    for b in range(nb):
        pos = first_bit + b * bpb
        end = pos + bpb
        e = 0
        for t in range(8):
            e = (e << 1) | _get(buf, pos)
            pos += 1
        ebyte[b] = e
        c = coeffs[b]
        for i in range(64):
            c[i] = 0
        if e == 0:
            continue
        mag = np.zeros(64, dtype=np.int64)
        neg = np.zeros(64, dtype=np.bool_)
        n = 0
        lowest = max(planes - max_planes, 0)
        for plane in range(planes - 1, lowest - 1, -1):
            if pos >= end:
                break
            for i in range(n):
                if pos >= end:
                    break
                bit = _get(buf, pos)
                pos += 1
                if bit:
                    if mag[i] == 0:
                        if pos >= end:
                            break
                        neg[i] = _get(buf, pos) == 1
                        pos += 1
                    mag[i] |= np.int64(1) << plane
            while n < 64 and pos < end:
                any_set = _get(buf, pos)
                pos += 1
                if not any_set:
                    break
                while n < 64 and pos < end:
                    if n < 63:
                        bit = _get(buf, pos)
                        pos += 1
                    else:
                        bit = 1
                    n += 1
                    if bit:
                        if pos < end:
                            neg[n - 1] = _get(buf, pos) == 1
                            pos += 1
                            mag[n - 1] |= np.int64(1) << plane
                        break
        for i in range(64):
            c[i] = -mag[i] if neg[i] else mag[i]


# ------------------------------------------------------------------ blocks

def _check_finite_blocks(blocks: np.ndarray):
    bad = ~np.isfinite(blocks.reshape(len(blocks), -1))
    if bad.any():
        raise DomainError(f"non-finite values in blocks {np.flatnonzero(bad.any(axis=1))[:20].tolist()}")


def encode_blocks(blocks: np.ndarray, p: BlockParams) -> bytes:
    """Code (n, 4, 4, 4) float blocks into ``n * bits_per_block`` bits."""
    blocks = np.asarray(blocks, dtype=np.float32).reshape(-1, 4, 4, 4)
    _check_finite_blocks(blocks)
    nb = len(blocks)
    bpb = p.bits_per_block
    out = np.zeros((nb * bpb + 7) // 8, dtype=np.uint8)
    for s in range(0, nb, CHUNK_BLOCKS):
        chunk = blocks[s:s + CHUNK_BLOCKS]
        c, ebyte = encode_coefficients(chunk, p)
        _encode_blocks(np.ascontiguousarray(c), ebyte, bpb, p.planes, out, s * bpb)
    return out.tobytes()


def decode_coefficients(buf: bytes, nb: int, p: BlockParams,
                        max_planes: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """(coefficients in sequency order (n, 64), exponent bytes) as the decoder sees them."""
    bpb = p.bits_per_block
    if len(buf) * 8 < nb * bpb:
        raise TruncationError(f"{len(buf) * 8} bits cannot hold {nb} blocks of {bpb} bits")
    arr = np.frombuffer(buf, dtype=np.uint8)
    mp = p.planes if max_planes is None else int(max_planes)
    c = np.empty((nb, 64), dtype=np.int64)
    ebyte = np.empty(nb, dtype=np.int64)
    _decode_blocks(arr, nb, bpb, p.planes, mp, 0, c, ebyte)
    return c, ebyte


def encode_coefficients(blocks: np.ndarray, p: BlockParams) -> tuple[np.ndarray, np.ndarray]:
    """Exact (untruncated) sequency-ordered coefficients and exponent bytes."""
    blocks = np.asarray(blocks, dtype=np.float32).reshape(-1, 4, 4, 4)
    ebyte = block_exponents(blocks)
    q = to_fixed_point(blocks, ebyte, p.fixed_point_bits)
    return forward_transform(q).reshape(len(blocks), 64)[:, SEQUENCY_ORDER], ebyte


def decode_blocks(buf: bytes, nb: int, p: BlockParams,
                  max_planes: Optional[int] = None) -> np.ndarray:
    """Inverse of :func:`encode_blocks`; float64 blocks (n, 4, 4, 4)."""
    bpb = p.bits_per_block
    if len(buf) * 8 < nb * bpb:
        raise TruncationError(f"{len(buf) * 8} bits cannot hold {nb} blocks of {bpb} bits")
    arr = np.frombuffer(buf, dtype=np.uint8)
    mp = p.planes if max_planes is None else int(max_planes)
    out = np.empty((nb, 4, 4, 4))
    for s in range(0, nb, CHUNK_BLOCKS):
        m = min(CHUNK_BLOCKS, nb - s)
        c = np.empty((m, 64), dtype=np.int64)
        ebyte = np.empty(m, dtype=np.int64)
        _decode_blocks(arr, m, bpb, p.planes, mp, s * bpb, c, ebyte)
        q = inverse_transform(c[:, INVERSE_ORDER].reshape(m, 4, 4, 4))
        out[s:s + m] = from_fixed_point(q, ebyte, p.fixed_point_bits)
    return out


def encode_block(b: np.ndarray, p: BlockParams) -> np.ndarray:
    """One block -> array of exactly ``bits_per_block`` bits (0/1 uint8)."""
    raw = encode_blocks(np.asarray(b).reshape(1, 4, 4, 4), p)
    return np.unpackbits(np.frombuffer(raw, np.uint8))[:p.bits_per_block]


def decode_block(bits: np.ndarray, p: BlockParams, max_planes: Optional[int] = None) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if bits.size < p.bits_per_block:
        raise TruncationError(f"block needs {p.bits_per_block} bits, got {bits.size}")
    raw = np.packbits(bits[:p.bits_per_block]).tobytes()
    return decode_blocks(raw, 1, p, max_planes)[0]


# ------------------------------------------------------------------ stream

def compress_stages(f: Field, p: BlockParams, threads: int = 1) -> Iterator[str]:
    if p.fixed_point_bits != STREAM_FIXED_POINT_BITS:
        raise ConfigError("streams are written with fixed_point_bits = 30 only")
    if not np.isfinite(f.values).all():
        bad = np.flatnonzero(~np.isfinite(f.values))
        raise DomainError(f"field {f.name!r} has non-finite values at indices {bad[:20].tolist()}")
    blocks = block_partition(to_working(f.values, f.dims))
    yield "setup"
    payload = encode_blocks(blocks, p)
    yield "kernel"
    stream = CompressedStream(Codec.BLOCK, Mode.FIXED_RATE, f.dims, p.bitrate, payload)
    yield "serialize"
    del blocks
    return stream


def decompress_stages(s: CompressedStream, name: str = "decompressed",
                      threads: int = 1) -> Iterator[str]:
    if s.codec is not Codec.BLOCK or s.mode is not Mode.FIXED_RATE:
        raise FormatError(f"not a fixed-rate block stream: {s.codec.name}/{s.mode.name}")
    p = BlockParams(s.param)
    nb = n_blocks(s.dims)
    expected = (nb * p.bits_per_block + 7) // 8
    if s.payload_len != expected:
        raise TruncationError(f"payload is {s.payload_len} bytes, {nb} blocks need {expected}")
    shape = working_shape(s.dims)
    yield "setup"
    blocks = decode_blocks(s.payload, nb, p)
    yield "kernel"
    a = block_merge(blocks, shape).reshape(-1)[:int(np.prod(s.dims))]
    out = Field(name, s.dims, a.astype(np.float32))
    yield "serialize"
    return out


def _drain(gen):
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            return stop.value


def compress_block_codec(f: Field, p: BlockParams, **kw) -> CompressedStream:
    return _drain(compress_stages(f, p, **kw))


def decompress_block_codec(s: CompressedStream, name: str = "decompressed", **kw) -> Field:
    return _drain(decompress_stages(s, name, **kw))
