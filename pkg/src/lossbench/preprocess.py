"""Reshaping and value transforms applied around the codecs.

1-D particle arrays are cut into equally shaped 3-D partitions (the last one
zero padded) so the 3-D codecs can run on them, and glued back afterwards.
Pointwise-relative bounds are turned into absolute ones by coding
``ln|x|`` with bound ``ln(1 + r)``; signs and near-zero points ride along in
bit masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .datamodel import DomainError, Field

# zero threshold relative to the pointwise bound
ZERO_THRESHOLD_FACTOR = 1e-30
MAX_PRED_EDGE = 512


@dataclass(frozen=True)
class PadSpec:
    original_length: int
    target_dims: tuple[int, int, int]

    @property
    def part_size(self) -> int:
        return int(np.prod(self.target_dims))

    @property
    def n_parts(self) -> int:
        return -(-self.original_length // self.part_size)

    @property
    def pad(self) -> int:
        return self.n_parts * self.part_size - self.original_length


def default_target_dims(n: int, max_edge: int = MAX_PRED_EDGE) -> tuple[int, int, int]:
    """Smallest cube holding ``n`` values, capped at ``max_edge``^3."""
    edge = max(1, round(n ** (1 / 3)))
    while edge ** 3 < n:
        edge += 1
    while edge > 1 and (edge - 1) ** 3 >= n:
        edge -= 1
    edge = min(edge, max_edge)
    return (edge, edge, edge)


def partition_1d_to_3d(f: Field, target_dims: Sequence[int]) -> tuple[list[Field], PadSpec]:
    if f.size == 0:
        raise DomainError("cannot partition an empty field")
    target = tuple(int(d) for d in target_dims)
    if len(target) != 3 or any(d < 1 for d in target):
        raise DomainError(f"target dims must be three positive extents, got {target_dims}")
    pad = PadSpec(f.size, target)
    flat = np.zeros(pad.n_parts * pad.part_size, dtype=np.float32)
    flat[:f.size] = f.values
    parts = [Field(f"{f.name}[{i}]", target, flat[i * pad.part_size:(i + 1) * pad.part_size])
             for i in range(pad.n_parts)]
    return parts, pad


def merge_3d_to_1d(parts: Sequence[Field], pad: PadSpec, name: Optional[str] = None) -> Field:
    if len(parts) != pad.n_parts:
        raise DomainError(f"expected {pad.n_parts} partitions, got {len(parts)}")
    for p in parts:
        if tuple(p.dims) != pad.target_dims:
            raise DomainError(f"partition dims {p.dims} do not match {pad.target_dims}")
    flat = np.concatenate([p.values for p in parts])[:pad.original_length]
    if name is None:
        name = parts[0].name.split("[")[0]
    return Field(name, (pad.original_length,), flat)


@dataclass(frozen=True)
class LogTransform:
    """Output of :func:`log_forward`."""

    field: Field
    signs: np.ndarray   # True where the original value is negative
    zeros: np.ndarray   # True where |x| < theta
    abs_bound: float
    theta: float


def log_forward(f: Field, rel_bound: float, theta: Optional[float] = None) -> LogTransform:
    if not 0 < rel_bound < 1:
        raise DomainError(f"relative bound must lie in (0, 1), got {rel_bound}")
    if theta is None:
        theta = rel_bound * ZERO_THRESHOLD_FACTOR
    x = f.values.astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise DomainError(f"non-finite values at indices {bad[:20].tolist()}"
                          + (" ..." if bad.size > 20 else ""))
    mag = np.abs(x)
    zeros = mag < theta
    signs = np.signbit(x) & ~zeros
    y = np.log(np.where(zeros, theta, mag))
    return LogTransform(f.with_values(y.astype(np.float32)), signs, zeros,
                        math.log1p(rel_bound), float(theta))


def log_inverse(y: Field, signs: np.ndarray, zeros: np.ndarray) -> Field:
    signs = np.asarray(signs, dtype=bool).reshape(-1)
    zeros = np.asarray(zeros, dtype=bool).reshape(-1)
    if signs.size != y.size or zeros.size != y.size:
        raise DomainError(f"mask lengths {signs.size}/{zeros.size} do not match {y.size} values")
    x = np.exp(y.values.astype(np.float64))
    x = np.where(signs, -x, x)
    x[zeros] = 0.0
    return y.with_values(x.astype(np.float32))


def velocity_magnitude(vx: Field, vy: Field, vz: Field, name: str = "velocity_magnitude") -> Field:
    v = np.sqrt(vx.values.astype(np.float64) ** 2 + vy.values.astype(np.float64) ** 2
                + vz.values.astype(np.float64) ** 2)
    return Field(name, vx.dims, v.astype(np.float32))
