"""Deterministic synthetic grids and particle sets with cosmology-like statistics.

Random numbers come from the Philox-4x64-10 counter-based generator keyed by
``(seed, stream)`` with its counter starting at zero; each consumer uses its
own stream id so adding a consumer never shifts another's numbers. Uniforms are
``(raw >> 11) * 2**-53`` from successive 64-bit outputs; normals use the
Box-Muller cosine branch on consecutive uniform pairs ``(u1, u2)``:
``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .datamodel import DomainError, Field, ParticleSet

STREAM_NOISE = 1
STREAM_NOISE_B = 2
STREAM_CELLS = 3
STREAM_JITTER = 4
STREAM_VELOCITY = 5

NYX_FIELDS = ("baryon_density", "dark_matter_density", "temperature",
              "velocity_x", "velocity_y", "velocity_z")
NYX_DENSITY_FIELDS = ("baryon_density", "dark_matter_density")


def uniforms(seed: int, stream: int, n: int) -> np.ndarray:
    bg = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    raw = bg.random_raw(n)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def normals(seed: int, stream: int, n: int) -> np.ndarray:
    u = uniforms(seed, stream, 2 * n).reshape(n, 2)
    return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


def _wavenumbers(n: int, box_length: float):
    k = 2 * np.pi * np.fft.fftfreq(n, box_length / n)
    kz = 2 * np.pi * np.fft.rfftfreq(n, box_length / n)
    return k[:, None, None], k[None, :, None], kz[None, None, :]


def _shaped_noise(n: int, box_length: float, index: float, k_cut: Optional[float],
                  amplitude: float, seed: int, stream: int) -> np.ndarray:
    """Fourier modes of a real field with spectrum ``amplitude * k**index * exp(-k^2/k_cut^2)``."""
    w = normals(seed, stream, n ** 3).reshape(n, n, n)
    wk = np.fft.rfftn(w)
    kx, ky, kz = _wavenumbers(n, box_length)
    k = np.sqrt(kx ** 2 + ky ** 2 + kz ** 2)
    with np.errstate(divide="ignore"):
        pk = amplitude * np.where(k > 0, k, 1.0) ** index
    if k_cut is not None and np.isfinite(k_cut):
        pk = pk * np.exp(-(k / k_cut) ** 2)
    pk[0, 0, 0] = 0.0
    return wk * np.sqrt(pk * n ** 3 / box_length ** 3)


def gaussian_random_field(n: int, box_length: float = 1.0, index: float = -2.0,
                          k_cut: Optional[float] = None, amplitude: float = 1.0,
                          seed: int = 0, name: str = "grf", stream: int = STREAM_NOISE) -> Field:
    """Zero-mean real field on an ``n**3`` periodic grid with an isotropic power law."""
    if n < 2:
        raise DomainError("grid edge must be at least 2")
    gk = _shaped_noise(n, box_length, index, k_cut, amplitude, seed, stream)
    g = np.fft.irfftn(gk, s=(n, n, n), axes=(0, 1, 2))
    return Field.from_array(name, g.astype(np.float32))


def lognormal_density(g: Field, mean: float = 1.0, name: Optional[str] = None) -> Field:
    """``mean * exp(g - var(g) / 2)``: positive, with expectation ``mean``."""
    x = g.values.astype(np.float64)
    rho = mean * np.exp(x - x.var() / 2.0)
    # float32 underflow must not produce zeros
    rho = np.maximum(rho, np.finfo(np.float32).tiny)
    return g.with_values(rho, name=name or g.name)


def sample_particles(density: Field, n: int, box_length: float, velocity_sigma: float = 1.0,
                     seed: int = 0) -> ParticleSet:
    """Positions drawn cell by cell proportional to ``density`` plus uniform in-cell jitter."""
    if n <= 0:
        raise DomainError("particle count must be positive")
    rho = density.values.astype(np.float64)
    if np.any(rho < 0) or rho.sum() <= 0:
        raise DomainError("density must be non-negative with positive total")
    dims = tuple(density.dims) + (1,) * (3 - len(density.dims))
    cdf = np.cumsum(rho)
    u = uniforms(seed, STREAM_CELLS, n) * cdf[-1]
    cells = np.minimum(np.searchsorted(cdf, u, side="right"), rho.size - 1)
    # skip empty cells that searchsorted could land on through rounding
    cells = np.where(rho[cells] > 0, cells, np.searchsorted(cdf, cdf[cells], side="left"))
    idx = np.stack(np.unravel_index(cells, dims), axis=1).astype(np.float64)
    jitter = uniforms(seed, STREAM_JITTER, 3 * n).reshape(n, 3)
    cell_edge = box_length / np.array(dims, dtype=np.float64)
    pos = (idx + jitter) * cell_edge
    vel = normals(seed, STREAM_VELOCITY, 3 * n).reshape(n, 3) * velocity_sigma
    return ParticleSet.from_arrays(pos, vel, box_length)


def nyx_like(n: int = 64, box_length: float = 64.0, seed: int = 0) -> dict[str, Field]:
    """Six grid fields resembling a hydrodynamics snapshot.

    Densities are lognormal transforms of correlated Gaussian fields,
    temperature follows a power-law equation of state, and velocities are the
    linear-theory displacement-like response ``i k / k^2`` of the matter field.
    """
    kc = 0.5 * np.pi * n / box_length
    gk = _shaped_noise(n, box_length, -2.0, kc, 1.0, seed, STREAM_NOISE)
    g = np.fft.irfftn(gk, s=(n, n, n), axes=(0, 1, 2))
    g *= 1.2 / g.std()
    hk = _shaped_noise(n, box_length, -2.0, kc, 1.0, seed, STREAM_NOISE_B)
    h = np.fft.irfftn(hk, s=(n, n, n), axes=(0, 1, 2))
    h *= 1.2 / h.std()
    dm = 0.9 * g + np.sqrt(1 - 0.81) * h
    out = {}
    out["baryon_density"] = lognormal_density(Field.from_array("baryon_density", g), 1.0)
    out["dark_matter_density"] = lognormal_density(
        Field.from_array("dark_matter_density", 1.2 * dm), 1.0)
    rho_b = out["baryon_density"].values.astype(np.float64)
    out["temperature"] = Field.from_array("temperature", (1e4 * rho_b ** 0.6).reshape(n, n, n))
    kx, ky, kz = _wavenumbers(n, box_length)
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    k2[0, 0, 0] = 1.0
    for name, ki in zip(("velocity_x", "velocity_y", "velocity_z"), (kx, ky, kz)):
        v = np.fft.irfftn(1j * ki / k2 * gk, s=(n, n, n), axes=(0, 1, 2))
        v *= 1e7 / v.std()
        out[name] = Field.from_array(name, v)
    return out


def hacc_like(n_particles: int = 32768, box_length: float = 256.0, grid: int = 32,
              seed: int = 0, velocity_sigma: float = 300.0) -> ParticleSet:
    """Clustered particles sampled from a high-contrast lognormal density."""
    g = gaussian_random_field(grid, box_length, index=-1.0, k_cut=np.pi * grid / box_length,
                              seed=seed)
    gv = g.values.astype(np.float64)
    g = g.with_values(gv * (2.5 / gv.std()))
    rho = lognormal_density(g)
    return sample_particles(rho, n_particles, box_length, velocity_sigma, seed)
