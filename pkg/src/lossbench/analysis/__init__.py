"""Distortion metrics, power spectra, FoF halos and their acceptance gates."""

from .distortion import QualityReport, distortion
from .gates import FAIL, PASS, GateResult, ratio_gate
from .halos import (DEFAULT_HALO_TOL, DEFAULT_N_MIN, Halo, HaloCatalog, center_of_mass,
                    default_linking_length, fof_groups, fof_halos, halo_count_ratio,
                    halo_mass_function, mass_bin_edges, most_bound, most_connected, potentials)
from .spectrum import (DEFAULT_MIN_MODES, DEFAULT_PK_TOL, SpectrumCurve, contrast_field,
                       pk_ratio, power_spectrum)

__all__ = [
    "QualityReport", "distortion", "PASS", "FAIL", "GateResult", "ratio_gate",
    "DEFAULT_HALO_TOL", "DEFAULT_N_MIN", "Halo", "HaloCatalog", "center_of_mass",
    "default_linking_length", "fof_groups", "fof_halos", "halo_count_ratio",
    "halo_mass_function", "mass_bin_edges", "most_bound", "most_connected", "potentials",
    "DEFAULT_MIN_MODES", "DEFAULT_PK_TOL", "SpectrumCurve", "contrast_field", "pk_ratio",
    "power_spectrum",
]
