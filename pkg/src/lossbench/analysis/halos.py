"""Friends-of-friends halo finding on periodic particle sets.

Two particles are friends when their minimum-image distance is at most the
linking length. Neighbour search uses a linked-cell grid of ``floor(L / l)``
cells per axis so every friend sits in one of the 27 surrounding cells; a
union-find over those pairs gives the groups. Groups with at least ``n_min``
members become halos, numbered from 1 in order of their smallest member index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..datamodel import ConfigError, DomainError, ParticleSet
from .gates import GateResult, ratio_gate

DEFAULT_LINK_FACTOR = 0.2
DEFAULT_N_MIN = 10
DEFAULT_SOFTENING_FACTOR = 0.01
DEFAULT_HALO_TOL = 0.02
# rows per block in the O(m^2) halo-centre searches
_PAIR_CHUNK = 1 << 22


@dataclass(frozen=True)
class Halo:
    id: int
    count: int
    center: tuple[float, float, float]
    most_connected: int
    most_bound: int


@dataclass(frozen=True)
class HaloCatalog:
    assignments: np.ndarray  # halo id per particle, 0 = unassigned
    halos: tuple[Halo, ...]
    linking_length: float
    n_min: int
    particle_mass: float = 1.0

    @property
    def masses(self) -> np.ndarray:
        return np.array([h.count for h in self.halos], dtype=np.float64) * self.particle_mass

    def members(self, halo_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == halo_id)


def default_linking_length(p: ParticleSet, factor: float = DEFAULT_LINK_FACTOR) -> float:
    """``factor`` times the mean interparticle spacing."""
    return factor * p.box_length / len(p) ** (1.0 / 3.0)


@numba.njit(cache=True, nogil=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@numba.njit(cache=True, nogil=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return
    # smaller index becomes the root, so roots are the smallest members
    if ra < rb:
        parent[rb] = ra
    else:
        parent[ra] = rb


@numba.njit(cache=True, nogil=True)
def _fof_cells(pos, box, link2, nc, order, cell_start, cell_of, offsets):
    n = pos.shape[0]
    parent = np.arange(n)
    for a in range(n):
        ci = cell_of[a]
        cx = ci // (nc * nc)
        cy = (ci // nc) % nc
        cz = ci % nc
        for o in range(offsets.shape[0]):
            nx = (cx + offsets[o, 0]) % nc
            ny = (cy + offsets[o, 1]) % nc
            nz = (cz + offsets[o, 2]) % nc
            cell = (nx * nc + ny) * nc + nz
            for t in range(cell_start[cell], cell_start[cell + 1]):
                b = order[t]
                if b <= a:
                    continue
                d2 = 0.0
                for ax in range(3):
                    d = abs(pos[a, ax] - pos[b, ax])
                    if d > box - d:
                        d = box - d
                    d2 += d * d
                if d2 <= link2:
                    _union(parent, a, b)
    for i in range(n):
        parent[i] = _find(parent, i)
    return parent


def fof_groups(positions: np.ndarray, box_length: float, linking_length: float) -> np.ndarray:
    """Root (smallest member index) of every particle's FoF group."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    if not linking_length > 0:
        raise ConfigError("linking length must be positive")
    if linking_length >= box_length / 2:
        raise ConfigError(f"linking length {linking_length} must be below half the box ({box_length})")
    n = len(pos)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    # cells a hair wider than the linking length so rounding never hides a friend two cells away
    nc = max(1, int(np.floor(box_length / (linking_length * (1 + 1e-9)))))
    cell_edge = box_length / nc
    c = np.minimum((pos / cell_edge).astype(np.int64), nc - 1)
    cell_of = (c[:, 0] * nc + c[:, 1]) * nc + c[:, 2]
    order = np.argsort(cell_of, kind="stable")
    cell_start = np.searchsorted(cell_of[order], np.arange(nc ** 3 + 1))
    r = (-1, 0, 1) if nc >= 3 else tuple(range(nc))
    offsets = np.array(sorted({(i, j, k) for i in r for j in r for k in r}), dtype=np.int64)
    return _fof_cells(pos, float(box_length), float(linking_length) ** 2, nc, order,
                      cell_start.astype(np.int64), cell_of, offsets)


def _min_image(d: np.ndarray, box: float) -> np.ndarray:
    d = np.abs(d)
    return np.minimum(d, box - d)


def _pair_dist2(pos: np.ndarray, rows: np.ndarray, box: float) -> np.ndarray:
    d = _min_image(pos[rows][:, None, :] - pos[None, :, :], box)
    return (d * d).sum(axis=2)


def most_connected(members, p: ParticleSet, linking_length: float) -> int:
    """Member with the most in-halo friends; ties go to the lowest index."""
    members = np.sort(np.asarray(members, dtype=np.int64))
    pos = p.positions[members]
    m = len(members)
    step = max(1, _PAIR_CHUNK // max(m, 1))
    counts = np.empty(m, dtype=np.int64)
    l2 = float(linking_length) ** 2
    for s in range(0, m, step):
        rows = np.arange(s, min(s + step, m))
        counts[rows] = (_pair_dist2(pos, rows, p.box_length) <= l2).sum(axis=1) - 1
    return int(members[np.argmax(counts)])


def potentials(members, p: ParticleSet, softening: float) -> np.ndarray:
    """``phi_i = -sum_{j != i} m / max(r_ij, softening)`` over the members."""
    members = np.sort(np.asarray(members, dtype=np.int64))
    pos = p.positions[members]
    m = len(members)
    step = max(1, _PAIR_CHUNK // max(m, 1))
    phi = np.empty(m)
    for s in range(0, m, step):
        rows = np.arange(s, min(s + step, m))
        r = np.sqrt(_pair_dist2(pos, rows, p.box_length))
        inv = p.particle_mass / np.maximum(r, softening)
        inv[np.arange(len(rows)), rows] = 0.0
        phi[rows] = -inv.sum(axis=1)
    return phi


def most_bound(members, p: ParticleSet, softening: float) -> int:
    """Member with the lowest potential; ties go to the lowest index."""
    members = np.sort(np.asarray(members, dtype=np.int64))
    if len(members) < 2:
        raise DomainError("most_bound needs at least two members")
    return int(members[np.argmin(potentials(members, p, softening))])


def center_of_mass(members, p: ParticleSet) -> tuple[float, float, float]:
    """Periodic centre of mass, unwrapped around the smallest member."""
    members = np.sort(np.asarray(members, dtype=np.int64))
    pos = p.positions[members]
    box = p.box_length
    d = pos - pos[0]
    d -= box * np.rint(d / box)
    c = np.mod(pos[0] + d.mean(axis=0), box)
    return tuple(float(v) for v in c)


def fof_halos(p: ParticleSet, linking_length: float | None = None, n_min: int = DEFAULT_N_MIN,
              softening: float | None = None) -> HaloCatalog:
    if linking_length is None:
        linking_length = default_linking_length(p)
    if n_min < 1:
        raise ConfigError("n_min must be at least 1")
    if softening is None:
        softening = DEFAULT_SOFTENING_FACTOR * linking_length
    roots = fof_groups(p.positions, p.box_length, linking_length)
    sizes = np.bincount(roots, minlength=len(roots))
    halo_roots = np.flatnonzero(sizes >= max(n_min, 1))
    assignments = np.zeros(len(roots), dtype=np.int64)
    label = np.zeros(len(roots), dtype=np.int64)
    label[halo_roots] = np.arange(1, halo_roots.size + 1)
    if len(roots):
        assignments = label[roots]
    order = np.argsort(assignments, kind="stable")
    bounds = np.searchsorted(assignments[order], np.arange(1, halo_roots.size + 2))
    halos = []
    for hid in range(1, halo_roots.size + 1):
        members = order[bounds[hid - 1]:bounds[hid]]
        mbp = most_bound(members, p, softening) if len(members) >= 2 else int(members[0])
        halos.append(Halo(hid, len(members), center_of_mass(members, p),
                          most_connected(members, p, linking_length), mbp))
    return HaloCatalog(assignments, tuple(halos), float(linking_length), int(n_min),
                       p.particle_mass)


def mass_bin_edges(catalog: HaloCatalog, n_bins: int = 8) -> np.ndarray:
    """Log-spaced edges from the catalog's ``n_min`` mass to just past its heaviest halo."""
    lo = catalog.n_min * catalog.particle_mass
    hi = max(catalog.masses.max() if catalog.halos else lo, lo) * 1.0001 + catalog.particle_mass
    return np.geomspace(lo * 0.9999, hi, n_bins + 1)


def halo_mass_function(catalog: HaloCatalog, bin_edges) -> np.ndarray:
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    counts, _ = np.histogram(catalog.masses, bins=edges)
    return counts.astype(np.int64)


def halo_count_ratio(orig_counts, recon_counts, tol: float = DEFAULT_HALO_TOL,
                     bin_edges=None) -> GateResult:
    """Per-bin ``recon / orig``; empty original bins are excluded and flagged."""
    orig = np.asarray(orig_counts)
    bins = (np.sqrt(bin_edges[:-1] * bin_edges[1:]) if bin_edges is not None
            else np.arange(orig.size, dtype=np.float64))
    return ratio_gate("halo_count_ratio", bins, orig, recon_counts, tol)
