"""Pointwise distortion metrics between an original and a reconstructed field."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..datamodel import CompressedStream, DomainError, Field, bitrate, compression_ratio


@dataclass(frozen=True)
class QualityReport:
    mse: float
    mre: float
    psnr: float
    max_abs_err: float
    bitrate: float = math.nan
    ratio: float = math.nan
    # "ok", "identical" (psnr = inf) or "constant_original" (psnr undefined)
    psnr_flag: str = "ok"
    mre_zeros_excluded: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def distortion(original: Field, recon: Field,
               stream: Optional[CompressedStream] = None) -> QualityReport:
    """MSE, PSNR (peak-to-peak range of ``original``), MRE over nonzeros, max error."""
    if tuple(original.dims) != tuple(recon.dims):
        raise DomainError(f"dims differ: {original.dims} vs {recon.dims}")
    x = original.values.astype(np.float64)
    y = recon.values.astype(np.float64)
    d = x - y
    mse = float(np.mean(d * d))
    max_err = float(np.max(np.abs(d))) if d.size else 0.0
    nz = x != 0
    mre = float(np.mean(np.abs(d[nz]) / np.abs(x[nz]))) if nz.any() else math.nan
    span = float(x.max() - x.min())
    if span == 0:
        psnr, flag = math.nan, "constant_original"
    elif mse == 0:
        psnr, flag = math.inf, "identical"
    else:
        psnr, flag = 20.0 * math.log10(span / math.sqrt(mse)), "ok"
    br = ratio = math.nan
    if stream is not None:
        br = bitrate(original.size, stream)
        ratio = compression_ratio(original.nbytes, stream)
    return QualityReport(mse, mre, psnr, max_err, br, ratio, flag, int((~nz).sum()))
