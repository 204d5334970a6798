"""III-V binary material parameters (GaAs, AlAs, InAs).

Values follow the Vurgaftman, Meyer and Ram-Mohan compilation
("Band parameters for III-V compound semiconductors and their alloys",
J. Appl. Phys. 89, 5815 (2001)).  Band gaps use the Varshni form

    Eg(T) = Eg(0) - alpha * T**2 / (T + beta)

Conduction-band offsets are referenced to bulk GaAs and treated as
temperature independent.  AlAs uses the Gamma-valley edge.  The InAs entry
is the *effective* well depth of the strained dot layer, not the bulk
offset; it can be overridden per call.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import constants

__all__ = [
    "MaterialParams",
    "SUPPORTED_MATERIALS",
    "INAS_WELL_DEPTH_EV",
    "get_material",
    "lattice_constant_nm",
    "effective_dos_cm3",
    "dump_materials_csv",
    "LITERATURE_SOURCE",
]

LITERATURE_SOURCE = (
    "I. Vurgaftman, J. R. Meyer, L. R. Ram-Mohan, J. Appl. Phys. 89, 5815 (2001)"
)

#: default effective conduction-band depth of the strained InAs dot layer (eV vs GaAs)
INAS_WELL_DEPTH_EV = -0.4

T_MIN_K = 0.0
T_MAX_K = 400.0


@dataclass(frozen=True)
class MaterialParams:
    """Per-material record at a given temperature."""

    name: str
    cb_offset_eV: float
    m_eff: float
    eps_rel: float
    band_gap_eV: float


# name: (cb_offset_eV, m_eff, eps_rel, Eg0_eV, alpha_eV_per_K, beta_K, a_nm)
_TABLE = {
    "GaAs": (0.0, 0.067, 12.9, 1.519, 0.5405e-3, 204.0, 0.565325),
    "AlAs": (1.05, 0.15, 10.06, 3.099, 0.885e-3, 530.0, 0.56611),
    "InAs": (INAS_WELL_DEPTH_EV, 0.026, 15.15, 0.417, 0.276e-3, 93.0, 0.60583),
}

SUPPORTED_MATERIALS = tuple(_TABLE)


def _check_name(name):
    if name not in _TABLE:
        raise KeyError(
            f"unsupported material {name!r}; expected one of {', '.join(SUPPORTED_MATERIALS)}"
        )


def get_material(name, temperature, *, inas_well_depth_eV=None):
    """Return the :class:`MaterialParams` of ``name`` at ``temperature`` (K).

    Parameters
    ----------
    name : str
        One of ``GaAs``, ``AlAs``, ``InAs``.
    temperature : float
        Lattice temperature in Kelvin, ``0 < T <= 400``.
    inas_well_depth_eV : float, optional
        Override for the effective InAs dot-layer offset (must be negative).
    """
    _check_name(name)
    temperature = float(temperature)
    if not (T_MIN_K < temperature <= T_MAX_K):
        raise ValueError(
            f"temperature {temperature} K outside supported range (0, {T_MAX_K:g}] K"
        )
    offset, m_eff, eps, eg0, alpha, beta, _ = _TABLE[name]
    if name == "InAs" and inas_well_depth_eV is not None:
        if inas_well_depth_eV >= 0:
            raise ValueError("InAs well depth must be negative (a well relative to GaAs)")
        offset = float(inas_well_depth_eV)
    gap = eg0 - alpha * temperature**2 / (temperature + beta)
    return MaterialParams(name, offset, m_eff, eps, gap)


def lattice_constant_nm(name):
    """Cubic lattice constant at 300 K, in nm."""
    _check_name(name)
    return _TABLE[name][6]


def effective_dos_cm3(m_eff, temperature):
    """Conduction-band effective density of states N_c (cm^-3)."""
    kt = constants.k * temperature
    nc = 2.0 * (m_eff * constants.m_e * kt / (2.0 * np.pi * constants.hbar**2)) ** 1.5
    return nc * 1e-6


def dump_materials_csv(temperatures=(77.0, 300.0)):
    """CSV text with one row per (material, temperature)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    buf.write(f"# source: {LITERATURE_SOURCE}\n")
    buf.write(f"# InAs cb_offset_eV is the effective strained-dot well depth ({INAS_WELL_DEPTH_EV} eV)\n")
    writer.writerow(["name", "T", "cb_offset_eV", "m_eff", "eps_rel", "band_gap_eV"])
    for t in temperatures:
        for name in SUPPORTED_MATERIALS:
            p = get_material(name, t)
            writer.writerow([p.name, repr(float(t)), repr(p.cb_offset_eV), repr(p.m_eff),
                             repr(p.eps_rel), repr(p.band_gap_eV)])
    return buf.getvalue()
