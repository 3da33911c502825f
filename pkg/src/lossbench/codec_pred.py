"""Error-bounded prediction codec: predict, quantize residuals, Huffman code.

Every value is tied to an integer grid index ``q = rint(x / (2 * eb))``. The
decoder only ever sees reconstructed values ``2 * eb * q``, so predicting from
reconstructed neighbours is the same as predicting ``q`` from neighbouring
``q``. That keeps the encoder fully vectorized while the decoder replays the
Lorenzo recurrence exactly in integers. Values whose float32 reconstruction
would miss the bound, or whose residual code falls outside ``[1, quant_cap)``,
are stored verbatim behind the outlier sentinel code 0.

Per-partition payload, in order::

    predictor bitmap   ceil(n_blocks / 8) bytes, 1 = regression
    regression coeffs  4 x f32 per regression block (i, j, k slopes, intercept)
    Huffman table      see huffman.py
    coded stream       n_bits u64 | bytes
    outliers           count u64 | count x f32 (raster order)

The stream payload is ``flags u8 | block_edge u8 | quant_cap u32`` followed,
when flags bit 0 is set, by ``target dims 3 x u32 | n_parts u32 | length u64``,
then one ``length u64 | body`` per partition. PW_REL adds ``theta f64``, the
packed sign and zero masks, and ``n_fix u64 | n_fix x (u64 index, f32 value)``
for points whose exp/log round trip drifted past the bound.
"""

from __future__ import annotations

import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numba
import numpy as np

from . import huffman
from .datamodel import (Codec, CompressedStream, ConfigError, DomainError, Field,
                        FormatError, Mode, TruncationError, padded_dims)
from .preprocess import (PadSpec, default_target_dims, log_forward, log_inverse,
                         merge_3d_to_1d, partition_1d_to_3d)

FLAG_PARTITIONED = 0x01
# |x / step| beyond this has no usable grid index
Q_LIMIT = float(2 ** 40)


@dataclass(frozen=True)
class PredParams:
    abs_bound: float
    block_edge: int = 6
    quant_cap: int = 65536

    def __post_init__(self):
        if not (self.abs_bound > 0 and math.isfinite(self.abs_bound)):
            raise ConfigError(f"abs_bound must be positive, got {self.abs_bound}")
        if self.quant_cap < 4 or self.quant_cap % 2 or self.quant_cap > 2 ** 24:
            raise ConfigError(f"quant_cap must be even and in [4, 2^24], got {self.quant_cap}")
        if not 2 <= self.block_edge <= 255:
            raise ConfigError(f"block_edge must be in [2, 255], got {self.block_edge}")


@dataclass
class QuantGrid:
    codes: np.ndarray       # int64, 0 = outlier
    outliers: np.ndarray    # flat indices, increasing
    outlier_values: np.ndarray  # float32


# ------------------------------------------------------------------ predictors

def predict_lorenzo(recon: np.ndarray, i: int, j: int, k: int) -> float:
    """Lorenzo prediction at (i, j, k) from already reconstructed neighbours."""
    def f(a, b, c):
        if a < 0 or b < 0 or c < 0:
            return 0.0
        return float(recon[a, b, c])
    return (f(i - 1, j, k) + f(i, j - 1, k) + f(i, j, k - 1)
            - f(i - 1, j - 1, k) - f(i - 1, j, k - 1) - f(i, j - 1, k - 1)
            + f(i - 1, j - 1, k - 1))


def lorenzo_residual(a: np.ndarray) -> np.ndarray:
    """``a - lorenzo(a)`` everywhere, neighbours outside the array read as 0."""
    p = np.pad(a, ((1, 0), (1, 0), (1, 0)))
    return np.diff(np.diff(np.diff(p, axis=0), axis=1), axis=2)


def predict_regression(block: np.ndarray) -> np.ndarray:
    """Least-squares plane ``a*i + b*j + c*k + d`` over a block's local grid."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 3:
        block = block.reshape(padded_dims(block.shape))
    coeffs = _fit_planes(block[None], [block.shape])
    return coeffs[0]


def _block_extents(n: int, edge: int) -> np.ndarray:
    full, rem = divmod(n, edge)
    return np.array([edge] * full + ([rem] if rem else []), dtype=np.int64)


def _fit_planes(x: np.ndarray, shapes=None) -> np.ndarray:
    # x: (nb, b0, b1, b2) equal-shape blocks; centered coordinates decouple the normal equations
    nb, b0, b1, b2 = x.shape
    out = np.zeros((nb, 4))
    mean = x.mean(axis=(1, 2, 3))
    for axis, b in enumerate((b0, b1, b2)):
        if b < 2:
            continue
        c = np.arange(b) - (b - 1) / 2
        shape = [1, 1, 1]
        shape[axis] = b
        num = (x * c.reshape(shape)).sum(axis=(1, 2, 3))
        den = (b0 * b1 * b2 / b) * (c ** 2).sum()
        out[:, axis] = num / den
    out[:, 3] = mean - out[:, 0] * (b0 - 1) / 2 - out[:, 1] * (b1 - 1) / 2 - out[:, 2] * (b2 - 1) / 2
    return out


def _block_slices(dims, edge):
    ext = [_block_extents(n, edge) for n in dims]
    starts = [np.concatenate([[0], np.cumsum(e)[:-1]]) for e in ext]
    return ext, starts


def _iter_block_groups(dims, edge):
    """Yield (block index array, slices per axis) grouped by block shape."""
    ext, starts = _block_slices(dims, edge)
    nbx = [len(e) for e in ext]
    groups = {}
    for bi in range(nbx[0]):
        for bj in range(nbx[1]):
            for bk in range(nbx[2]):
                shape = (int(ext[0][bi]), int(ext[1][bj]), int(ext[2][bk]))
                groups.setdefault(shape, []).append((bi, bj, bk))
    for shape, members in groups.items():
        members = np.array(members, dtype=np.int64)
        flat = (members[:, 0] * nbx[1] + members[:, 1]) * nbx[2] + members[:, 2]
        origin = np.stack([starts[a][members[:, a]] for a in range(3)], axis=1)
        yield shape, flat, origin


def _gather(a: np.ndarray, shape, origin: np.ndarray) -> np.ndarray:
    idx = [origin[:, a][:, None] + np.arange(shape[a])[None, :] for a in range(3)]
    return a[idx[0][:, :, None, None], idx[1][:, None, :, None], idx[2][:, None, None, :]]


def block_count(dims, edge) -> int:
    return int(np.prod([-(-n // edge) for n in dims]))


def regression_coefficients(x: np.ndarray, edge: int) -> np.ndarray:
    """Plane fit per block (raster block order), shape (n_blocks, 4)."""
    out = np.zeros((block_count(x.shape, edge), 4))
    for shape, flat, origin in _iter_block_groups(x.shape, edge):
        out[flat] = _fit_planes(_gather(x, shape, origin))
    return out


def regression_field(coeffs: np.ndarray, dims, edge: int) -> np.ndarray:
    """Expand per-block plane coefficients to per-point predictions."""
    ext, _ = _block_slices(dims, edge)
    nbx = [len(e) for e in ext]
    c = coeffs.reshape(*nbx, 4)
    local = [np.concatenate([np.arange(e) for e in ext[a]]).astype(np.float64) for a in range(3)]
    expanded = c
    for a in range(3):
        expanded = np.repeat(expanded, ext[a], axis=a)
    return (expanded[..., 0] * local[0][:, None, None]
            + expanded[..., 1] * local[1][None, :, None]
            + expanded[..., 2] * local[2][None, None, :]
            + expanded[..., 3])


def _block_sums(a: np.ndarray, edge: int) -> np.ndarray:
    for axis in range(3):
        a = np.add.reduceat(a, np.arange(0, a.shape[axis], edge), axis=axis)
    return a.reshape(-1)


def _expand_blocks(per_block: np.ndarray, dims, edge: int) -> np.ndarray:
    ext, _ = _block_slices(dims, edge)
    a = per_block.reshape([len(e) for e in ext])
    for axis in range(3):
        a = np.repeat(a, ext[axis], axis=axis)
    return a


# ------------------------------------------------------------------ quantizer

def grid_index(x: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    """(q, valid): rounded grid index and whether it is representable."""
    r = np.rint(x / step)
    valid = np.abs(r) < Q_LIMIT
    return np.where(valid, r, 0.0).astype(np.int64), valid


def reconstruct_from_index(q: np.ndarray, step: float) -> np.ndarray:
    return (q.astype(np.float64) * step).astype(np.float32)


def _regression_index(coeffs32: np.ndarray, dims, edge, step) -> np.ndarray:
    pred = regression_field(coeffs32.astype(np.float64), dims, edge) / step
    return np.rint(np.clip(pred, -Q_LIMIT, Q_LIMIT)).astype(np.int64)


def quantize(x: np.ndarray, p: PredParams):
    """Vectorized encoder core for one 3-D array.

    Returns (QuantGrid, regression flag per block, float32 coefficients of the
    regression blocks).
    """
    eb = p.abs_bound
    step = 2.0 * eb
    dims = x.shape
    edge = p.block_edge
    q, valid = grid_index(x, step)
    recon = reconstruct_from_index(q, step).astype(np.float64)
    exact_ok = valid & (np.abs(recon - x) <= eb)

    # predictor choice on original values
    lor_cost = _block_sums(np.abs(lorenzo_residual(x)), edge)
    coeffs32 = regression_coefficients(x, edge).astype(np.float32)
    reg_pred = regression_field(coeffs32.astype(np.float64), dims, edge)
    reg_cost = _block_sums(np.abs(x - reg_pred), edge)
    use_reg = reg_cost < lor_cost

    pred = q - lorenzo_residual(q)
    if use_reg.any():
        reg_q = _regression_index(np.where(use_reg[:, None], coeffs32, 0), dims, edge, step)
        pred = np.where(_expand_blocks(use_reg, dims, edge), reg_q, pred)
    center = p.quant_cap // 2
    codes = (q - pred) + center
    ok = exact_ok & (codes >= 1) & (codes < p.quant_cap)
    codes = np.where(ok, codes, 0).reshape(-1)
    outliers = np.flatnonzero(~ok.reshape(-1))
    grid = QuantGrid(codes, outliers, x.reshape(-1)[outliers].astype(np.float32))
    return grid, use_reg, coeffs32[use_reg]


@numba.njit(cache=True, nogil=True)
def _replay(delta, preset, use_preset, n0, n1, n2):
    q = np.empty(n0 * n1 * n2, dtype=np.int64)
    s0 = n1 * n2
    for i in range(n0):
        for j in range(n1):
            for k in range(n2):
                idx = i * s0 + j * n2 + k
                if use_preset[idx]:
                    q[idx] = preset[idx]
                    continue
                p = 0
                if i > 0:
                    p += q[idx - s0]
                    if j > 0:
                        p -= q[idx - s0 - n2]
                        if k > 0:
                            p += q[idx - s0 - n2 - 1]
                    if k > 0:
                        p -= q[idx - s0 - 1]
                if j > 0:
                    p += q[idx - n2]
                    if k > 0:
                        p -= q[idx - n2 - 1]
                if k > 0:
                    p += q[idx - 1]
                q[idx] = p + delta[idx]
    return q


def dequantize(grid: QuantGrid, use_reg: np.ndarray, coeffs32: np.ndarray, dims,
               p: PredParams) -> np.ndarray:
    step = 2.0 * p.abs_bound
    edge = p.block_edge
    n = int(np.prod(dims))
    delta = grid.codes - p.quant_cap // 2
    preset = np.zeros(n, dtype=np.int64)
    use_preset = np.zeros(n, dtype=np.bool_)
    if use_reg.any():
        full = np.zeros((use_reg.size, 4), dtype=np.float32)
        full[use_reg] = coeffs32
        reg_mask = _expand_blocks(use_reg, dims, edge).reshape(-1)
        reg_q = _regression_index(full, dims, edge, step).reshape(-1)
        preset[reg_mask] = reg_q[reg_mask] + delta[reg_mask]
        use_preset |= reg_mask
    out_q, _ = grid_index(grid.outlier_values.astype(np.float64), step)
    preset[grid.outliers] = out_q
    use_preset[grid.outliers] = True
    q = _replay(delta, preset, use_preset, *dims)
    recon = reconstruct_from_index(q, step)
    recon[grid.outliers] = grid.outlier_values
    return recon


# ------------------------------------------------------------------ payload

def _encode_part(x: np.ndarray, p: PredParams) -> bytes:
    grid, use_reg, coeffs = quantize(x.astype(np.float64), p)
    table = huffman.HuffmanTable.from_frequencies(np.bincount(grid.codes, minlength=1))
    coded, nbits = huffman.encode(grid.codes, table)
    return b"".join([
        np.packbits(use_reg).tobytes(),
        coeffs.astype("<f4").tobytes(),
        table.to_bytes(),
        struct.pack("<Q", nbits), coded,
        struct.pack("<Q", grid.outliers.size), grid.outlier_values.astype("<f4").tobytes(),
    ])


class _Reader:
    def __init__(self, buf: bytes, offset: int = 0, end: Optional[int] = None):
        self.buf = buf
        self.pos = offset
        self.end = len(buf) if end is None else end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncationError("payload ended early")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def _decode_part(buf: bytes, offset: int, end: int, dims, p: PredParams) -> np.ndarray:
    r = _Reader(buf, offset, end)
    n = int(np.prod(dims))
    nblocks = block_count(dims, p.block_edge)
    use_reg = np.unpackbits(np.frombuffer(r.take((nblocks + 7) // 8), np.uint8))[:nblocks]
    use_reg = use_reg.astype(bool)
    nreg = int(use_reg.sum())
    coeffs = np.frombuffer(r.take(16 * nreg), "<f4").reshape(nreg, 4).astype(np.float32)
    table, r.pos = huffman.HuffmanTable.from_bytes(buf[:r.end], r.pos)
    (nbits,) = r.unpack("<Q")
    coded = r.take((nbits + 7) // 8)
    codes = huffman.decode(coded, nbits, n, table)
    (nout,) = r.unpack("<Q")
    out_vals = np.frombuffer(r.take(4 * nout), "<f4").astype(np.float32)
    outliers = np.flatnonzero(codes == 0)
    if outliers.size != nout:
        raise FormatError(f"{outliers.size} sentinel codes but {nout} stored outliers")
    if r.pos != r.end:
        raise FormatError("trailing bytes in partition payload")
    grid = QuantGrid(codes, outliers, out_vals)
    return dequantize(grid, use_reg, coeffs, dims, p).reshape(dims)


def _map(fn, items, threads: int):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _check_finite(f: Field):
    bad = np.flatnonzero(~np.isfinite(f.values))
    if bad.size:
        raise DomainError(f"field {f.name!r} has non-finite values at indices {bad[:20].tolist()}")


def compress_stages(f: Field, p: PredParams, mode: Mode = Mode.ABS,
                    rel_bound: Optional[float] = None,
                    target_dims: Optional[Sequence[int]] = None,
                    threads: int = 1) -> Iterator[str]:
    """Staged compressor: yields after setup, kernel and serialize; returns the stream."""
    _check_finite(f)
    if mode not in (Mode.ABS, Mode.PW_REL):
        raise ConfigError(f"prediction codec does not support {mode.name}")
    if mode is Mode.PW_REL:
        if rel_bound is None:
            raise ConfigError("PW_REL needs rel_bound")
        lt = log_forward(f, rel_bound)
        work = lt.field
        p = PredParams(lt.abs_bound, p.block_edge, p.quant_cap)
    else:
        work = f
    flags = 0
    if len(f.dims) == 1 and f.size > 1:
        flags |= FLAG_PARTITIONED
        target = tuple(target_dims) if target_dims else default_target_dims(f.size)
        parts, pad = partition_1d_to_3d(work, target)
        arrays = [part.array for part in parts]
    else:
        pad = None
        arrays = [work.values.reshape(padded_dims(f.dims))]
    yield "setup"

    bodies = _map(lambda a: _encode_part(a, p), arrays, threads)
    extra = b""
    if mode is Mode.PW_REL:
        # decode once to catch points the exp/log round trip pushed past the bound
        ys = [_decode_part(b, 0, len(b), a.shape, p) for b, a in zip(bodies, arrays)]
        y = np.concatenate([a.reshape(-1) for a in ys])[:f.size]
        xhat = log_inverse(work.with_values(y), lt.signs, lt.zeros).values.astype(np.float64)
        x = f.values.astype(np.float64)
        keep = lt.zeros | (np.abs(xhat - x) <= rel_bound * np.abs(x))
        fix = np.flatnonzero(~keep)
        fixrec = np.empty(fix.size, dtype=[("i", "<u8"), ("v", "<f4")])
        fixrec["i"] = fix
        fixrec["v"] = f.values[fix]
        extra = b"".join([struct.pack("<d", lt.theta), np.packbits(lt.signs).tobytes(),
                          np.packbits(lt.zeros).tobytes(),
                          struct.pack("<Q", fix.size), fixrec.tobytes()])
    yield "kernel"

    out = io.BytesIO()
    out.write(struct.pack("<BBI", flags, p.block_edge, p.quant_cap))
    if pad is not None:
        out.write(struct.pack("<3IIQ", *pad.target_dims, pad.n_parts, pad.original_length))
    for body in bodies:
        out.write(struct.pack("<Q", len(body)))
        out.write(body)
    out.write(extra)
    param = p.abs_bound if mode is Mode.ABS else rel_bound
    stream = CompressedStream(Codec.PRED, mode, f.dims, param, out.getvalue())
    yield "serialize"
    del bodies, arrays, work
    return stream


def decompress_stages(stream: CompressedStream, name: str = "decompressed",
                      threads: int = 1) -> Iterator[str]:
    if stream.codec is not Codec.PRED:
        raise FormatError(f"not a prediction-codec stream: {stream.codec.name}")
    buf = stream.payload
    r = _Reader(buf)
    flags, edge, cap = r.unpack("<BBI")
    dims = tuple(stream.dims)
    n = int(np.prod(dims))
    if stream.mode is Mode.PW_REL:
        rel = stream.param
        p = PredParams(math.log1p(rel), edge, cap)
    elif stream.mode is Mode.ABS:
        p = PredParams(stream.param, edge, cap)
    else:
        raise FormatError(f"bad mode {stream.mode.name} for prediction codec")
    if flags & FLAG_PARTITIONED:
        t0, t1, t2, n_parts, length = r.unpack("<3IIQ")
        pad = PadSpec(length, (t0, t1, t2))
        if length != n or pad.n_parts != n_parts:
            raise FormatError("partition record does not match stream dims")
        part_dims = [pad.target_dims] * n_parts
    else:
        pad = None
        part_dims = [padded_dims(dims)]
    spans = []
    for pd in part_dims:
        (blen,) = r.unpack("<Q")
        spans.append((r.pos, r.pos + blen, pd))
        r.take(blen)
    yield "setup"

    arrays = _map(lambda s: _decode_part(buf, s[0], s[1], s[2], p), spans, threads)
    if pad is not None:
        parts = [Field(f"{name}[{i}]", a.shape, a.reshape(-1)) for i, a in enumerate(arrays)]
        y = merge_3d_to_1d(parts, pad, name).values
    else:
        y = arrays[0].reshape(-1)
    if stream.mode is Mode.PW_REL:
        (theta,) = r.unpack("<d")
        nbyte = (n + 7) // 8
        signs = np.unpackbits(np.frombuffer(r.take(nbyte), np.uint8))[:n].astype(bool)
        zeros = np.unpackbits(np.frombuffer(r.take(nbyte), np.uint8))[:n].astype(bool)
        (nfix,) = r.unpack("<Q")
        fixrec = np.frombuffer(r.take(12 * nfix), dtype=[("i", "<u8"), ("v", "<f4")])
        yf = Field(name, (n,), y)
        x = log_inverse(yf, signs, zeros).values.copy()
        if nfix and fixrec["i"].max() >= n:
            raise FormatError("fix-up index out of range")
        x[fixrec["i"].astype(np.int64)] = fixrec["v"]
        y = x
    if r.pos != r.end:
        raise FormatError("trailing bytes in payload")
    yield "kernel"

    out = Field(name, dims, y.astype(np.float32))
    yield "serialize"
    return out


def _drain(gen):
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            return stop.value


def compress_pred(f: Field, p: PredParams, **kw) -> CompressedStream:
    return _drain(compress_stages(f, p, **kw))


def compress_pred_rel(f: Field, rel_bound: float, block_edge: int = 6,
                      quant_cap: int = 65536, **kw) -> CompressedStream:
    p = PredParams(math.log1p(rel_bound), block_edge, quant_cap)
    return _drain(compress_stages(f, p, mode=Mode.PW_REL, rel_bound=rel_bound, **kw))


def decompress_pred(s: CompressedStream, name: str = "decompressed", **kw) -> Field:
    return _drain(decompress_stages(s, name, **kw))
