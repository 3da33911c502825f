"""Shell-averaged power spectrum of a periodic cubic field.

For ``N = n**3`` points in a box of side ``L`` the per-mode power is
``P = |delta_hat|**2 * L**3 / N**2`` with ``delta_hat`` the unnormalized DFT.
Modes with integer wavevector ``m`` (components in ``[-n/2, n/2)``) land in
shell ``rint(|m|)``; shells 1 .. n // 2 are reported at ``k = shell * 2 pi / L``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datamodel import DomainError, Field
from .gates import GateResult, ratio_gate

DEFAULT_PK_TOL = 0.01
DEFAULT_MIN_MODES = 8


@dataclass(frozen=True)
class SpectrumCurve:
    k_bins: np.ndarray
    pk: np.ndarray
    mode_counts: np.ndarray
    box_length: float


def contrast_field(f: Field, contrast: bool) -> np.ndarray:
    x = f.array.astype(np.float64)
    mean = x.mean()
    if contrast:
        if mean == 0:
            raise DomainError(f"field {f.name!r} has zero mean; density contrast undefined")
        return x / mean - 1.0
    return x - mean


def _mode_shells(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Shell index and conjugate multiplicity for every rfftn mode."""
    m = np.fft.fftfreq(n, 1.0 / n)
    mz = np.arange(n // 2 + 1, dtype=np.float64)
    r = np.sqrt(m[:, None, None] ** 2 + m[None, :, None] ** 2 + mz[None, None, :] ** 2)
    shell = np.rint(r).astype(np.int64)
    weight = np.full(mz.size, 2, dtype=np.int64)
    weight[0] = 1
    if n % 2 == 0:
        weight[-1] = 1
    return shell, np.broadcast_to(weight, shell.shape)


def power_spectrum(f: Field, box_length: float, contrast: bool = True) -> SpectrumCurve:
    dims = tuple(f.dims)
    if len(dims) != 3 or len(set(dims)) != 1:
        raise DomainError(f"power spectrum needs a cubic 3-D field, got {dims}")
    if not box_length > 0:
        raise DomainError("box_length must be positive")
    n = dims[0]
    delta = contrast_field(f, contrast)
    dk = np.fft.rfftn(delta)
    power = (dk.real ** 2 + dk.imag ** 2) * box_length ** 3 / float(n ** 3) ** 2
    shell, weight = _mode_shells(n)
    nmax = n // 2
    sel = (shell >= 1) & (shell <= nmax)
    idx = shell[sel]
    w = weight[sel]
    counts = np.bincount(idx, weights=w, minlength=nmax + 1)[1:].astype(np.int64)
    sums = np.bincount(idx, weights=w * power[sel], minlength=nmax + 1)[1:]
    keep = counts > 0
    shells = np.arange(1, nmax + 1)[keep]
    pk = sums[keep] / counts[keep]
    return SpectrumCurve(shells * (2 * np.pi / box_length), pk, counts[keep], float(box_length))


def pk_ratio(orig: SpectrumCurve, recon: SpectrumCurve, tol: float = DEFAULT_PK_TOL,
             min_modes: int = DEFAULT_MIN_MODES) -> GateResult:
    """Per-shell ``pk_recon / pk_orig``; shells with fewer than ``min_modes`` modes are shown, not gated."""
    if orig.k_bins.shape != recon.k_bins.shape or not np.allclose(orig.k_bins, recon.k_bins):
        raise ValueError("spectra use different binning")
    return ratio_gate("pk_ratio", orig.k_bins, orig.pk, recon.pk, tol,
                      eligible=orig.mode_counts >= min_modes)
