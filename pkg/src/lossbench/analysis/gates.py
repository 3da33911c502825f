"""Ratio gates: a per-bin ratio must stay inside ``[1 - tol, 1 + tol]``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PASS, FAIL = "PASS", "FAIL"


@dataclass(frozen=True)
class GateResult:
    name: str
    bins: np.ndarray        # bin coordinate (k or mass)
    ratios: np.ndarray      # recon / orig, NaN where not computable
    checked: np.ndarray     # bins that take part in the verdict
    tol: float
    notes: tuple[str, ...] = field(default=())

    @property
    def in_band(self) -> np.ndarray:
        return np.abs(self.ratios - 1.0) <= self.tol

    @property
    def passed(self) -> bool:
        return bool(np.all(self.in_band[self.checked]))

    @property
    def verdict(self) -> str:
        return PASS if self.passed else FAIL

    @property
    def failing_bins(self) -> np.ndarray:
        return np.flatnonzero(self.checked & ~self.in_band)

    def to_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "tol": self.tol,
                "n_checked": int(self.checked.sum()), "n_failing": int(self.failing_bins.size),
                "notes": list(self.notes)}


def ratio_gate(name: str, bins, orig, recon, tol: float, eligible=None) -> GateResult:
    """Gate over bins where ``orig`` is nonzero (and ``eligible``, if given)."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    orig = np.asarray(orig, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if orig.shape != recon.shape:
        raise ValueError(f"binning mismatch: {orig.shape} vs {recon.shape}")
    zero = orig == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(zero, np.nan, recon / np.where(zero, 1.0, orig))
    checked = ~zero
    if eligible is not None:
        checked &= np.asarray(eligible, dtype=bool)
    notes = []
    if zero.any():
        notes.append(f"{int(zero.sum())} bin(s) with zero original value excluded")
    if not checked.any():
        notes.append("no bins left to check; verdict is vacuous")
    return GateResult(name, np.asarray(bins, dtype=np.float64), ratios, checked, float(tol),
                      tuple(notes))
