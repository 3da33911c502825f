"""Core value types, raw field I/O and the compressed-stream container.

Field files are a raw little-endian float32 payload next to a JSON sidecar
named ``<payload>.json``::

    {"name": "baryon_density", "dims": [64, 64, 64], "dtype": "f32",
     "order": "C", "declared_range": [0.0, 1e5]}

Compressed streams are framed as::

    magic "FSC1" | version u16 | codec u8 | mode u8 | ndim u8 |
    dims 3 x u64 | param f64 | payload_len u64 | payload | crc32(payload) u32

all little-endian. Unused trailing extents are stored as 1.
"""

from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class FormatError(ValueError):
    """Malformed field file or compressed stream."""


class TruncationError(FormatError):
    """Payload shorter or longer than the header promises."""


class ChecksumError(FormatError):
    """CRC32 of a stream payload does not match its trailer."""


class DomainError(ValueError):
    """Input values outside what an operation accepts (NaN, zero size, ...)."""


class ConfigError(ValueError):
    """Invalid codec or analysis parameters."""


class Codec(enum.IntEnum):
    PRED = 1
    BLOCK = 2


class Mode(enum.IntEnum):
    ABS = 1
    PW_REL = 2
    FIXED_RATE = 3


_SUPPORTED_MODES = {
    Codec.PRED: (Mode.ABS, Mode.PW_REL),
    Codec.BLOCK: (Mode.FIXED_RATE,),
}


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float32, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Field:
    """Named 1-3 dimensional float32 array stored flat in row-major order."""

    name: str
    dims: tuple[int, ...]
    values: np.ndarray = field(repr=False)
    declared_range: Optional[tuple[float, float]] = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not 1 <= len(dims) <= 3 or any(d < 1 for d in dims):
            raise DomainError(f"field {self.name!r}: dims must be 1-3 positive extents, got {dims}")
        values = self.values
        if not (isinstance(values, np.ndarray) and values.dtype == np.float32
                and values.ndim == 1 and not values.flags.writeable):
            values = _frozen_array(values)
        if values.size != int(np.prod(dims)):
            raise DomainError(
                f"field {self.name!r}: {values.size} values do not match dims {dims}")
        rng = self.declared_range
        if rng is not None:
            lo, hi = float(rng[0]), float(rng[1])
            if lo > hi:
                raise DomainError(f"field {self.name!r}: declared range lo > hi")
            rng = (lo, hi)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "declared_range", rng)

    @classmethod
    def from_array(cls, name: str, array, declared_range=None) -> "Field":
        array = np.asarray(array, dtype=np.float32)
        return cls(name, array.shape, array.reshape(-1), declared_range)

    @property
    def array(self) -> np.ndarray:
        """Read-only view with shape ``dims``."""
        return self.values.reshape(self.dims)

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def nbytes(self) -> int:
        return 4 * self.values.size

    def with_values(self, values, name: Optional[str] = None) -> "Field":
        return Field(name or self.name, self.dims, np.asarray(values, np.float32).reshape(-1),
                     self.declared_range)

    def __eq__(self, other):
        if not isinstance(other, Field):
            return NotImplemented
        return (self.name == other.name and self.dims == other.dims
                and self.declared_range == other.declared_range
                and self.values.tobytes() == other.values.tobytes())

    __hash__ = None


@dataclass(frozen=True)
class ParticleSet:
    """Particle positions and velocities as six equal-length 1-D fields."""

    position_x: Field
    position_y: Field
    position_z: Field
    velocity_x: Field
    velocity_y: Field
    velocity_z: Field
    box_length: float
    particle_mass: float = 1.0

    COMPONENTS = ("position_x", "position_y", "position_z",
                  "velocity_x", "velocity_y", "velocity_z")

    def __post_init__(self):
        sizes = {getattr(self, c).size for c in self.COMPONENTS}
        if len(sizes) != 1:
            raise DomainError(f"particle components differ in length: {sorted(sizes)}")
        if not self.box_length > 0:
            raise DomainError("box_length must be positive")
        if not self.particle_mass > 0:
            raise DomainError("particle_mass must be positive")

    @classmethod
    def from_arrays(cls, positions, velocities, box_length: float,
                    particle_mass: float = 1.0, wrap: bool = True) -> "ParticleSet":
        positions = np.asarray(positions, dtype=np.float64)
        velocities = np.asarray(velocities, dtype=np.float64)
        if wrap:
            positions = wrap_positions(positions, box_length)
        comps = [Field.from_array(n, positions[:, i]) for i, n in enumerate(cls.COMPONENTS[:3])]
        comps += [Field.from_array(n, velocities[:, i]) for i, n in enumerate(cls.COMPONENTS[3:])]
        return cls(*comps, box_length=float(box_length), particle_mass=float(particle_mass))

    def __len__(self):
        return self.position_x.size

    @property
    def positions(self) -> np.ndarray:
        """(n, 3) float64 positions wrapped into ``[0, box_length)``."""
        pos = np.stack([self.position_x.values, self.position_y.values,
                        self.position_z.values], axis=1).astype(np.float64)
        return wrap_positions(pos, self.box_length)

    @property
    def velocities(self) -> np.ndarray:
        return np.stack([self.velocity_x.values, self.velocity_y.values,
                         self.velocity_z.values], axis=1).astype(np.float64)

    def replace(self, **components: Field) -> "ParticleSet":
        kwargs = {c: getattr(self, c) for c in self.COMPONENTS}
        kwargs.update(components)
        return ParticleSet(**kwargs, box_length=self.box_length, particle_mass=self.particle_mass)


def wrap_positions(pos: np.ndarray, box_length: float) -> np.ndarray:
    pos = np.mod(pos, box_length)
    # fmod of tiny negatives can land exactly on box_length
    pos[pos >= box_length] = 0.0
    return pos


@dataclass(frozen=True, order=True)
class CompressionConfig:
    codec: Codec
    mode: Mode
    param: float

    def __post_init__(self):
        codec = Codec[self.codec.upper()] if isinstance(self.codec, str) else Codec(self.codec)
        mode = Mode[self.mode.upper()] if isinstance(self.mode, str) else Mode(self.mode)
        param = float(self.param)
        if mode not in _SUPPORTED_MODES[codec]:
            raise ConfigError(f"codec {codec.name} does not support mode {mode.name}")
        if not param > 0 or not np.isfinite(param):
            raise ConfigError(f"param must be positive, got {self.param}")
        if mode is Mode.FIXED_RATE and param > 32:
            raise ConfigError(f"fixed-rate bitrate must be <= 32, got {param}")
        if mode is Mode.PW_REL and not param < 1:
            raise ConfigError(f"PW_REL bound must lie in (0, 1), got {param}")
        object.__setattr__(self, "codec", codec)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "param", param)

    @property
    def label(self) -> str:
        return f"{self.codec.name.lower()}-{self.mode.name.lower()}-{self.param:g}"

    def to_dict(self) -> dict:
        return {"codec": self.codec.name.lower(), "mode": self.mode.name.lower(),
                "param": self.param}

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionConfig":
        return cls(d["codec"], d["mode"], d["param"])


MAGIC = b"FSC1"
VERSION = 1
_HEADER = struct.Struct("<4sHBBB3QdQ")
HEADER_SIZE = _HEADER.size
TRAILER_SIZE = 4
# bytes every stream carries on top of its payload
FRAMING_BYTES = HEADER_SIZE + TRAILER_SIZE


@dataclass(frozen=True)
class CompressedStream:
    codec: Codec
    mode: Mode
    dims: tuple[int, ...]
    param: float
    payload: bytes = field(repr=False)
    version: int = VERSION

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    @property
    def total_bytes(self) -> int:
        return FRAMING_BYTES + len(self.payload)

    @property
    def checksum(self) -> int:
        return zlib.crc32(self.payload) & 0xFFFFFFFF

    def to_bytes(self) -> bytes:
        dims = tuple(self.dims) + (1,) * (3 - len(self.dims))
        head = _HEADER.pack(MAGIC, self.version, int(self.codec), int(self.mode),
                            len(self.dims), *dims, float(self.param), len(self.payload))
        return b"".join([head, self.payload, struct.pack("<I", self.checksum)])

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedStream":
        data = bytes(data)
        if len(data) < FRAMING_BYTES:
            raise TruncationError(f"stream of {len(data)} bytes is shorter than its framing")
        magic, version, codec, mode, ndim, d0, d1, d2, param, plen = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported stream version {version}")
        try:
            codec, mode = Codec(codec), Mode(mode)
        except ValueError as exc:
            raise FormatError(str(exc)) from None
        if not 1 <= ndim <= 3:
            raise FormatError(f"bad ndim {ndim}")
        if len(data) != FRAMING_BYTES + plen:
            raise TruncationError(
                f"stream is {len(data)} bytes, header promises {FRAMING_BYTES + plen}")
        payload = data[HEADER_SIZE:HEADER_SIZE + plen]
        (crc,) = struct.unpack_from("<I", data, HEADER_SIZE + plen)
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            raise ChecksumError("payload checksum mismatch")
        return cls(codec, mode, (d0, d1, d2)[:ndim], param, payload, version)


def compression_ratio(original_bytes: int, stream: CompressedStream) -> float:
    if original_bytes <= 0:
        raise DomainError("original_bytes must be positive")
    return original_bytes / stream.total_bytes


def bitrate(n_values: int, stream: CompressedStream) -> float:
    """Stored bits per original value, framing included."""
    if n_values <= 0:
        raise DomainError("n_values must be positive")
    return 8.0 * stream.total_bytes / n_values


def payload_bitrate(n_values: int, stream: CompressedStream) -> float:
    if n_values <= 0:
        raise DomainError("n_values must be positive")
    return 8.0 * stream.payload_len / n_values


# ---------------------------------------------------------------- field files

def header_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_field(path) -> Field:
    path = Path(path)
    hpath = header_path(path)
    try:
        header = json.loads(hpath.read_text())
    except FileNotFoundError:
        raise FormatError(f"{path}: missing header {hpath.name}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{hpath}: garbled header ({exc})") from None
    try:
        name = str(header["name"])
        dims = tuple(int(d) for d in header["dims"])
        dtype = header.get("dtype", "f32")
        order = header.get("order", "C")
        rng = header.get("declared_range")
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{hpath}: garbled header ({exc!r})") from None
    if dtype != "f32" or order != "C":
        raise FormatError(f"{hpath}: unsupported dtype/order {dtype}/{order}")
    if not 1 <= len(dims) <= 3 or any(d < 1 for d in dims):
        raise FormatError(f"{hpath}: bad dims {dims}")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read payload ({exc})") from None
    expected = 4 * int(np.prod(dims))
    if len(raw) != expected:
        raise TruncationError(f"{path}: payload is {len(raw)} bytes, dims {dims} need {expected}")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    return Field(name, dims, values, tuple(rng) if rng is not None else None)


def write_field(f: Field, path) -> None:
    path = Path(path)
    header = {"name": f.name, "dims": list(f.dims), "dtype": "f32", "order": "C"}
    if f.declared_range is not None:
        header["declared_range"] = list(f.declared_range)
    try:
        path.write_bytes(f.values.astype("<f4").tobytes())
        header_path(path).write_text(json.dumps(header, indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write field {f.name!r} to {path}: {exc}") from exc


def read_stream(path) -> CompressedStream:
    return CompressedStream.from_bytes(Path(path).read_bytes())


def write_stream(stream: CompressedStream, path) -> None:
    Path(path).write_bytes(stream.to_bytes())


def write_particles(p: ParticleSet, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for comp in ParticleSet.COMPONENTS:
        write_field(getattr(p, comp), directory / f"{comp}.f32")
    meta = {"box_length": p.box_length, "particle_mass": p.particle_mass,
            "components": list(ParticleSet.COMPONENTS)}
    (directory / "particles.json").write_text(json.dumps(meta, indent=1) + "\n")


def read_particles(directory) -> ParticleSet:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "particles.json").read_text())
    except FileNotFoundError:
        raise FormatError(f"{directory}: missing particles.json") from None
    comps = {c: read_field(directory / f"{c}.f32") for c in ParticleSet.COMPONENTS}
    return ParticleSet(**comps, box_length=float(meta["box_length"]),
                       particle_mass=float(meta.get("particle_mass", 1.0)))


def padded_dims(dims: Sequence[int]) -> tuple[int, int, int]:
    """Dims as a 3-tuple with trailing extents of 1."""
    dims = tuple(int(d) for d in dims)
    return dims + (1,) * (3 - len(dims))
