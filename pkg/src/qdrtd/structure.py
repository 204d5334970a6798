"""Layer stack, quantum-dot sheet, and simulation grid.

Positions are measured in nm from the top surface of the stack, increasing
into the substrate.  Under reverse bias the top contact is the emitter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .materials import SUPPORTED_MATERIALS, MaterialParams, get_material, lattice_constant_nm

__all__ = [
    "Layer",
    "QDSheet",
    "DeviceStack",
    "Grid",
    "StackParseError",
    "monolayers_to_nm",
    "build_paper_stack",
    "build_symmetric_stack",
    "discretize",
    "default_window",
    "parse_stack_text",
    "format_stack_text",
    "DOT_FOOTPRINT_DIAMETER_NM",
]

#: mean lateral dot size range 20-28 nm
DOT_FOOTPRINT_DIAMETER_NM = 24.0

_WINDOW_EXCLUDED_ROLES = ("etch_stop", "buffer", "substrate")


class StackParseError(ValueError):
    """Malformed stack configuration; carries the offending line number."""

    def __init__(self, lineno, reason):
        self.lineno = lineno
        self.reason = reason
        super().__init__(f"line {lineno}: {reason}")


@dataclass(frozen=True)
class Layer:
    material: str
    thickness_nm: float
    doping_start_cm3: float = 0.0
    doping_end_cm3: float | None = None
    role_tag: str = ""

    def __post_init__(self):
        if self.material not in SUPPORTED_MATERIALS:
            raise KeyError(f"unsupported material {self.material!r}")
        if not self.thickness_nm > 0:
            raise ValueError(f"layer thickness must be positive, got {self.thickness_nm}")
        if self.doping_end_cm3 is None:
            object.__setattr__(self, "doping_end_cm3", self.doping_start_cm3)
        if self.doping_start_cm3 < 0 or self.doping_end_cm3 < 0:
            raise ValueError("doping must be non-negative")

    def doping_at(self, frac):
        """Donor density at fractional depth ``frac`` in [0, 1] (linear grading)."""
        return self.doping_start_cm3 + (self.doping_end_cm3 - self.doping_start_cm3) * frac


@dataclass(frozen=True)
class QDSheet:
    areal_density_cm2: float
    position_layer_index: int
    electrons_per_dot_max: float = 6.0
    # about two InAs monolayers: the wetting layer plus the dot-averaged height in 1-D
    well_thickness_nm: float = 0.6
    area_fraction: float | None = None

    def __post_init__(self):
        if not self.areal_density_cm2 > 0:
            raise ValueError("QD areal density must be positive")
        if self.area_fraction is None:
            radius_cm = 0.5 * DOT_FOOTPRINT_DIAMETER_NM * 1e-7
            object.__setattr__(
                self, "area_fraction", min(1.0, self.areal_density_cm2 * math.pi * radius_cm**2)
            )
        if not 0.0 <= self.area_fraction <= 1.0:
            raise ValueError("area_fraction must lie in [0, 1]")
        if not self.electrons_per_dot_max > 0:
            raise ValueError("electrons_per_dot_max must be positive")
        if not self.well_thickness_nm > 0:
            raise ValueError("well_thickness_nm must be positive")

    def sheet_density_cm2(self, occupancy):
        """Stored electron sheet density (cm^-2) for mean ``occupancy`` per dot."""
        if not 0.0 <= occupancy <= self.electrons_per_dot_max:
            raise ValueError(f"occupancy {occupancy} outside [0, {self.electrons_per_dot_max}]")
        return self.areal_density_cm2 * occupancy


@dataclass(frozen=True)
class DeviceStack:
    layers: tuple
    qd_sheet: QDSheet | None = None
    area_um2: float = 5.0
    temperature_K: float = 77.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.area_um2 > 0:
            raise ValueError("area_um2 must be positive")
        barriers = self.barrier_indices
        if len(barriers) != 2:
            raise ValueError(f"stack needs exactly two barrier layers, found {len(barriers)}")
        i, j = barriers
        if j - i != 2 or self.layers[i + 1].role_tag != "well":
            raise ValueError("the two barrier layers must enclose exactly one well layer")
        if any(self.layers[k].material != "AlAs" for k in barriers):
            raise ValueError("barrier layers must be AlAs")
        if self.layers[i + 1].material != "GaAs":
            raise ValueError("well layer must be GaAs")
        if self.qd_sheet is not None and not 0 <= self.qd_sheet.position_layer_index < len(self.layers):
            raise ValueError("QD sheet position_layer_index outside the stack")

    @property
    def barrier_indices(self):
        return tuple(k for k, layer in enumerate(self.layers) if layer.role_tag == "barrier")

    @property
    def interfaces_nm(self):
        """Layer boundary positions, length ``len(layers) + 1``."""
        return np.concatenate([[0.0], np.cumsum([layer.thickness_nm for layer in self.layers])])

    @property
    def total_thickness_nm(self):
        return float(self.interfaces_nm[-1])

    @property
    def qd_position_nm(self):
        if self.qd_sheet is None:
            return None
        return float(self.interfaces_nm[self.qd_sheet.position_layer_index + 1])

    @property
    def double_barrier_span_nm(self):
        """(start, end) of the barrier/well/barrier block."""
        i, j = self.barrier_indices
        z = self.interfaces_nm
        return float(z[i]), float(z[j + 1])

    def without_dots(self):
        return replace(self, qd_sheet=None)


def monolayers_to_nm(n_ml, material):
    """Thickness of ``n_ml`` zinc-blende monolayers (half a lattice constant each)."""
    if n_ml < 0:
        raise ValueError("monolayer count must be non-negative")
    return n_ml * lattice_constant_nm(material) / 2.0


def build_paper_stack():
    """The charged-dot AlAs/GaAs/AlAs QD-RTD layer sequence, top to bottom."""
    barrier = monolayers_to_nm(11, "AlAs")
    layers = (
        Layer("GaAs", 50.0, 2e18, 2e18, "contact"),
        Layer("GaAs", 150.0, 0.0, 0.0, "absorber"),
        Layer("GaAs", 10.0, 0.0, 0.0, "qd_cap"),
        Layer("GaAs", 2.0, 0.0, 0.0, "spacer"),
        Layer("AlAs", barrier, 0.0, 0.0, "barrier"),
        Layer("GaAs", 8.0, 0.0, 0.0, "well"),
        Layer("AlAs", barrier, 0.0, 0.0, "barrier"),
        Layer("GaAs", 20.0, 0.0, 0.0, "spacer"),
        Layer("GaAs", 430.0, 1e16, 1e18, "contact"),
        Layer("AlAs", 15.0, 0.0, 0.0, "etch_stop"),
        Layer("GaAs", 400.0, 0.0, 0.0, "buffer"),
        Layer("GaAs", 1000.0, 0.0, 0.0, "substrate"),
    )
    # dots are grown on the 2 nm spacer and then capped: the sheet sits at the cap/spacer boundary
    sheet = QDSheet(areal_density_cm2=5.7e10, position_layer_index=2)
    return DeviceStack(layers=layers, qd_sheet=sheet, area_um2=5.0, temperature_K=77.0)


def build_symmetric_stack(barrier_ml=11, well_nm=8.0, spacer_nm=20.0, contact_nm=50.0,
                          contact_doping_cm3=2e18, temperature_K=77.0, area_um2=5.0):
    """Mirror-symmetric, dot-free double-barrier diode (reference structure)."""
    barrier = monolayers_to_nm(barrier_ml, "AlAs")
    layers = (
        Layer("GaAs", contact_nm, contact_doping_cm3, contact_doping_cm3, "contact"),
        Layer("GaAs", spacer_nm, 0.0, 0.0, "spacer"),
        Layer("AlAs", barrier, 0.0, 0.0, "barrier"),
        Layer("GaAs", well_nm, 0.0, 0.0, "well"),
        Layer("AlAs", barrier, 0.0, 0.0, "barrier"),
        Layer("GaAs", spacer_nm, 0.0, 0.0, "spacer"),
        Layer("GaAs", contact_nm, contact_doping_cm3, contact_doping_cm3, "contact"),
    )
    return DeviceStack(layers=layers, qd_sheet=None, area_um2=area_um2, temperature_K=temperature_K)


@dataclass(frozen=True, eq=False)
class Grid:
    """Node grid over a window of the stack.

    Interval ``k`` spans nodes ``k`` and ``k + 1`` and lies inside exactly
    one layer, so material properties are piecewise constant per interval.
    Interface nodes take the material of the deeper layer.
    """

    node_positions_nm: np.ndarray
    node_material: tuple
    node_doping_cm3: np.ndarray
    qd_node_index: int | None
    interval_material: tuple
    interval_doping_cm3: np.ndarray
    interval_layer: np.ndarray
    temperature_K: float
    qd_well_start_index: int | None = None
    layer_node_index: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.node_positions_nm.size

    @property
    def spacing_nm(self):
        return np.diff(self.node_positions_nm)

    @property
    def interval_cb_offset_eV(self):
        return np.array([m.cb_offset_eV for m in self.interval_material])

    @property
    def interval_m_eff(self):
        return np.array([m.m_eff for m in self.interval_material])

    @property
    def interval_eps_rel(self):
        return np.array([m.eps_rel for m in self.interval_material])

    def node_index(self, position_nm):
        """Index of the node closest to ``position_nm``."""
        return int(np.argmin(np.abs(self.node_positions_nm - position_nm)))


def default_window(stack):
    """Top contact through bottom contact (etch stop, buffer, substrate excluded)."""
    z = stack.interfaces_nm
    last = max(k for k, layer in enumerate(stack.layers) if layer.role_tag not in _WINDOW_EXCLUDED_ROLES)
    return 0.0, float(z[last + 1])


def discretize(stack, max_spacing_nm, window=None, *, inas_well_depth_eV=None):
    """Build a :class:`Grid` with every layer interface on a node."""
    if not max_spacing_nm > 0:
        raise ValueError("max_spacing_nm must be positive")
    z_if = stack.interfaces_nm
    if window is None:
        window = default_window(stack)
    w0, w1 = map(float, window)
    if not (0.0 <= w0 < w1 <= z_if[-1] + 1e-12):
        raise ValueError(f"window {window} outside stack span [0, {z_if[-1]}] nm")

    snaps = [w0, w1] + [z for z in z_if if w0 < z < w1]
    qd_z = stack.qd_position_nm
    well_start = None
    if qd_z is not None and w0 <= qd_z <= w1:
        # the dots sit on the layer below the sheet; the equivalent well extends upward
        well_start = qd_z - stack.qd_sheet.well_thickness_nm
        if well_start > w0:
            snaps.append(well_start)
        else:
            well_start = None
    snaps = np.unique(np.array(snaps))

    pieces = []
    for a, b in zip(snaps[:-1], snaps[1:]):
        n = max(1, math.ceil((b - a) / max_spacing_nm - 1e-9))
        pieces.append(a + (b - a) * np.arange(n) / n)
    pieces.append([snaps[-1]])
    nodes = np.concatenate(pieces)

    mats = {
        name: get_material(name, stack.temperature_K, inas_well_depth_eV=inas_well_depth_eV)
        for name in SUPPORTED_MATERIALS
    }
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    layer_of_mid = np.searchsorted(z_if, mid, side="right") - 1
    interval_material = tuple(mats[stack.layers[k].material] for k in layer_of_mid)
    frac = (mid - z_if[layer_of_mid]) / np.array([stack.layers[k].thickness_nm for k in layer_of_mid])
    interval_doping = np.array([stack.layers[k].doping_at(f) for k, f in zip(layer_of_mid, frac)])

    # control-volume average (exact for linear grading within a layer)
    h = np.diff(nodes)
    weight = np.zeros(nodes.size)
    acc = np.zeros(nodes.size)
    weight[:-1] += h / 2
    weight[1:] += h / 2
    acc[:-1] += interval_doping * h / 2
    acc[1:] += interval_doping * h / 2
    node_doping = acc / weight

    node_layer = np.append(layer_of_mid, layer_of_mid[-1])
    node_material = tuple(mats[stack.layers[k].material] for k in node_layer)

    layer_node_index = {}
    for k, z in enumerate(z_if):
        if w0 <= z <= w1:
            layer_node_index[k] = int(np.argmin(np.abs(nodes - z)))

    qd_index = None if qd_z is None or not (w0 <= qd_z <= w1) else int(np.argmin(np.abs(nodes - qd_z)))
    well_start_index = None if well_start is None else int(np.argmin(np.abs(nodes - well_start)))
    return Grid(
        node_positions_nm=nodes,
        node_material=node_material,
        node_doping_cm3=node_doping,
        qd_node_index=qd_index,
        interval_material=interval_material,
        interval_doping_cm3=interval_doping,
        interval_layer=layer_of_mid,
        temperature_K=stack.temperature_K,
        qd_well_start_index=well_start_index,
        layer_node_index=layer_node_index,
    )


# ---------------------------------------------------------------------------
# line-oriented stack config


def _parse_float(token, lineno, what):
    try:
        return float(token)
    except ValueError:
        raise StackParseError(lineno, f"cannot parse {what} {token!r}") from None


def parse_stack_text(text):
    """Parse the line-oriented stack format into a :class:`DeviceStack`.

    Format::

        # comment
        @area_um2 5.0
        @temperature_K 77.0
        @qd density_cm2 after_layer_index electrons_max well_nm area_fraction
        material thickness_nm doping_start[:doping_end] [role]
    """
    layers = []
    area = 5.0
    temperature = 77.0
    qd_fields = None
    qd_line = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0].startswith("@"):
            key = tokens[0]
            if key == "@area_um2" and len(tokens) == 2:
                area = _parse_float(tokens[1], lineno, "area")
                if area <= 0:
                    raise StackParseError(lineno, "area must be positive")
            elif key == "@temperature_K" and len(tokens) == 2:
                temperature = _parse_float(tokens[1], lineno, "temperature")
            elif key == "@qd" and len(tokens) == 6:
                density = _parse_float(tokens[1], lineno, "QD density")
                try:
                    after = int(tokens[2])
                except ValueError:
                    raise StackParseError(lineno, f"layer index must be an integer, got {tokens[2]!r}") from None
                nmax = _parse_float(tokens[3], lineno, "electrons_max")
                well = _parse_float(tokens[4], lineno, "well thickness")
                frac = _parse_float(tokens[5], lineno, "area fraction")
                qd_fields = (density, after, nmax, well, frac)
                qd_line = lineno
            else:
                raise StackParseError(lineno, f"unknown or malformed directive {key!r}")
            continue
        if len(tokens) not in (3, 4):
            raise StackParseError(lineno, "expected 'material thickness_nm doping[:doping_end] [role]'")
        material = tokens[0]
        if material not in SUPPORTED_MATERIALS:
            raise StackParseError(lineno, f"unsupported material {material!r}")
        thickness = _parse_float(tokens[1], lineno, "thickness")
        if not thickness > 0:
            raise StackParseError(lineno, f"thickness must be positive, got {tokens[1]}")
        dop = tokens[2].split(":")
        if len(dop) > 2:
            raise StackParseError(lineno, f"malformed doping {tokens[2]!r}")
        d0 = _parse_float(dop[0], lineno, "doping")
        d1 = _parse_float(dop[1], lineno, "doping") if len(dop) == 2 else d0
        if d0 < 0 or d1 < 0:
            raise StackParseError(lineno, f"doping must be non-negative, got {tokens[2]}")
        role = tokens[3] if len(tokens) == 4 else ""
        layers.append((lineno, Layer(material, thickness, d0, d1, role)))

    if not layers:
        raise StackParseError(0, "no layers defined")
    sheet = None
    if qd_fields is not None:
        density, after, nmax, well, frac = qd_fields
        if not 0 <= after < len(layers):
            raise StackParseError(qd_line, f"QD layer index {after} outside 0..{len(layers) - 1}")
        try:
            sheet = QDSheet(density, after, nmax, well, frac)
        except ValueError as exc:
            raise StackParseError(qd_line, str(exc)) from None
    else:
        for lineno, layer in layers:
            if layer.role_tag == "qd_cap":
                raise StackParseError(lineno, "layer references a QD sheet but no @qd directive is given")
    try:
        return DeviceStack(tuple(layer for _, layer in layers), sheet, area, temperature)
    except ValueError as exc:
        raise StackParseError(0, str(exc)) from None


def format_stack_text(stack):
    """Canonical text form; ``parse_stack_text`` inverts it exactly."""
    lines = [
        f"@area_um2 {stack.area_um2!r}",
        f"@temperature_K {stack.temperature_K!r}",
    ]
    s = stack.qd_sheet
    if s is not None:
        lines.append(
            f"@qd {float(s.areal_density_cm2)!r} {s.position_layer_index} {float(s.electrons_per_dot_max)!r} "
            f"{float(s.well_thickness_nm)!r} {float(s.area_fraction)!r}"
        )
    for layer in stack.layers:
        dop = repr(float(layer.doping_start_cm3))
        if layer.doping_end_cm3 != layer.doping_start_cm3:
            dop += ":" + repr(float(layer.doping_end_cm3))
        line = f"{layer.material} {float(layer.thickness_nm)!r} {dop}"
        if layer.role_tag:
            line += f" {layer.role_tag}"
        lines.append(line)
    return "\n".join(lines) + "\n"
