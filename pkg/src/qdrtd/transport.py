"""Tsu-Esaki tunnelling current, the two conduction paths, bias sweeps and peaks.

Lead conventions
----------------
Path_RTD electrons are injected from a short flat lead placed just outside
the double-barrier window on the emitter side, with its band edge at the
bulk contact edge (``mu - eta kT``).  Path_QD-RTD electrons reach the
double barrier through the dot layer: when the dots sit on the emitter side
the lead is the local band just outside the InAs equivalent well, fed by the
emitter Fermi level.  On the collector side both paths use the local band at
the window edge.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants, optimize, signal

from .dynamics import (
    RateParams,
    QDChargeState,
    SweepProtocol,
    equilibrium_charge,
    evolve_charge,
    hole_capture_rate_per_dot,
)
from .electrostatics import (
    BandDiagram,
    ChargeDensity,
    SCOptions,
    _build_profile,
    _cached_grid,
    _contact_etas,
    _kt_eV,
    self_consistent_band_diagram,
    solve_poisson,
)
from .quantum import PotentialProfile, RefinePolicy, transmission

__all__ = [
    "TSU_ESAKI_PREFACTOR",
    "CURRENT_FLOOR_A",
    "SpectrumCoverageError",
    "PathError",
    "SweepError",
    "TransportOptions",
    "PathCurrents",
    "IVCurve",
    "Peak",
    "PeakSet",
    "supply_function",
    "supply_support",
    "tsu_esaki_current",
    "integrate_current",
    "linear_drop_diagram",
    "path_profiles",
    "path_currents",
    "two_path_current",
    "iv_sweep",
    "detect_peaks",
]

#: q m0 / (2 pi^2 hbar^3) expressed so that prefactor * m* * area_m2 * int(T S dE[eV] kT[eV]) is in A
TSU_ESAKI_PREFACTOR = constants.e**3 * constants.m_e / (2 * np.pi**2 * constants.hbar**3)

CURRENT_FLOOR_A = 1e-18

_SUPPORT_RATIO = 1e-12


class SpectrumCoverageError(ValueError):
    """The energy grid does not span the supply-function support."""


class PathError(RuntimeError):
    """A conduction path failed; ``path`` names it."""

    def __init__(self, path, exc):
        super().__init__(f"{path}: {exc}")
        self.path = path
        self.__cause__ = exc


class SweepError(RuntimeError):
    """A bias point failed; ``partial`` holds the curve up to that point."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class TransportOptions:
    """Numerical and model switches for current evaluation.

    ``qd_blocking`` selects the occupancy blocking factor on the QD path;
    when False only the electrostatic push-up acts.  ``profile_mode`` is
    ``"self_consistent"`` or ``"linear"`` (fast fallback).
    """

    m_eff_lead: float = 0.067
    lead_width_nm: float = 0.5
    window_margin_nm: float = 0.5
    energy_points: int = 400
    refine: RefinePolicy = field(default_factory=RefinePolicy)
    qd_blocking: bool = True
    profile_mode: str = "self_consistent"
    current_floor_A: float = CURRENT_FLOOR_A
    sc: SCOptions = field(default_factory=SCOptions)

    def __post_init__(self):
        if self.profile_mode not in ("self_consistent", "linear"):
            raise ValueError(f"unknown profile_mode {self.profile_mode!r}")
        if self.energy_points < 3:
            raise ValueError("energy_points must be >= 3")


def supply_function(energy_eV, mu_top_eV, mu_bot_eV, temperature_K):
    """``kT [ln(1+e^{(mu_bot-E)/kT}) - ln(1+e^{(mu_top-E)/kT})]`` in eV.

    Positive when the bottom contact injects (``mu_bot > mu_top``).
    """
    kt = _kt_eV(temperature_K)
    e = np.asarray(energy_eV, dtype=float)
    return kt * (np.logaddexp(0.0, (mu_bot_eV - e) / kt) - np.logaddexp(0.0, (mu_top_eV - e) / kt))


def supply_support(edge_eV, mu_top_eV, mu_bot_eV, temperature_K, ratio=_SUPPORT_RATIO):
    """Energy above which ``|supply|`` stays below ``ratio`` times its value at ``edge_eV``.

    The supply magnitude is monotone decreasing in energy, so its maximum
    over the support is at the band edge.
    """
    s0 = abs(float(supply_function(edge_eV, mu_top_eV, mu_bot_eV, temperature_K)))
    if s0 == 0.0:
        return float(edge_eV)
    kt = _kt_eV(temperature_K)
    target = math.log(ratio * s0)

    def f(e):
        s = abs(float(supply_function(e, mu_top_eV, mu_bot_eV, temperature_K)))
        return (math.log(s) if s > 0 else -math.inf) - target

    hi = max(edge_eV, mu_top_eV, mu_bot_eV) + 5 * kt
    while f(hi) > 0:
        hi += 5 * kt
    if f(edge_eV) <= 0:
        return float(edge_eV)
    return float(optimize.brentq(f, edge_eV, hi, xtol=1e-12))


def _edges(profile):
    return float(profile.interval_potential_eV[0]), float(profile.interval_potential_eV[-1])


def integrate_current(energies_eV, transmission_values, mu_top_eV, mu_bot_eV, temperature_K,
                      area_um2, m_eff=0.067, band_edge_eV=None):
    """Trapezoid Tsu-Esaki integral on a given energy grid.

    Points below ``band_edge_eV`` are dropped.  Does not check coverage.
    """
    e = np.asarray(energies_eV, dtype=float)
    t = np.asarray(transmission_values, dtype=float)
    if band_edge_eV is not None:
        keep = e >= band_edge_eV
        e, t = e[keep], t[keep]
    if e.size < 2:
        return 0.0
    s = supply_function(e, mu_top_eV, mu_bot_eV, temperature_K)
    integral = float(np.trapezoid(t * s, e))
    return TSU_ESAKI_PREFACTOR * m_eff * area_um2 * 1e-12 * integral


def tsu_esaki_current(diagram, spectrum, bias_V, area_um2, temperature_K, *,
                      band_edge_eV=None, m_eff=0.067):
    """Tunnelling current (A) for one profile and its transmission spectrum.

    Parameters
    ----------
    diagram : BandDiagram
        Supplies the contact Fermi levels; its profile supplies the lead
        band edges unless ``band_edge_eV`` is given.
    spectrum : TransmissionSpectrum
    bias_V : float
        Must match the Fermi-level split of ``diagram``.
    area_um2, temperature_K : float
    band_edge_eV : float, optional
        Lowest propagating energy (the higher of the two lead edges).

    Raises
    ------
    SpectrumCoverageError
        When ``spectrum`` misses part of ``[band_edge, E_support]``.
    """
    mu_top, mu_bot = map(float, diagram.fermi_level_eV)
    if abs((mu_bot - mu_top) - bias_V) > 1e-9:
        raise ValueError(f"bias {bias_V} V inconsistent with diagram Fermi split {mu_bot - mu_top} V")
    if band_edge_eV is None:
        band_edge_eV = max(_edges(diagram.profile))
    if bias_V == 0:
        return 0.0
    hi = supply_support(band_edge_eV, mu_top, mu_bot, temperature_K)
    e = np.asarray(spectrum.energies_eV)
    tol = 1e-6
    missing = []
    if e.size == 0 or e[0] > band_edge_eV + tol:
        missing.append((band_edge_eV, float(e[0]) if e.size else hi))
    if e.size == 0 or e[-1] < hi - tol:
        missing.append((float(e[-1]) if e.size else band_edge_eV, hi))
    if missing:
        desc = ", ".join(f"[{a:.6f}, {b:.6f}] eV" for a, b in missing)
        raise SpectrumCoverageError(f"transmission spectrum does not cover {desc}")
    return integrate_current(e, spectrum.transmission, mu_top, mu_bot, temperature_K,
                             area_um2, m_eff, band_edge_eV)


def _profile_current(profile, mu_top, mu_bot, temperature_K, area_um2, options):
    """Adaptive-grid current through one profile; returns (current, spectrum)."""
    if mu_top == mu_bot or area_um2 == 0:
        return 0.0, None
    edge = max(_edges(profile)) + 1e-9
    hi = supply_support(edge, mu_top, mu_bot, temperature_K)
    if hi <= edge:
        return 0.0, None
    energies = np.linspace(edge, hi, options.energy_points)
    weight = lambda x: np.abs(supply_function(x, mu_top, mu_bot, temperature_K)) + 1e-300  # noqa: E731
    policy = replace(options.refine, weight=weight) if options.refine.enabled else options.refine
    spectrum = transmission(profile, energies, policy)
    cur = integrate_current(spectrum.energies_eV, spectrum.transmission, mu_top, mu_bot,
                            temperature_K, area_um2, options.m_eff_lead, edge)
    return cur, spectrum


def _attach_lead(profile, side, edge_eV, width_nm, m_eff):
    z = profile.positions_nm
    iv = profile.interval_potential_eV
    im = profile.interval_m_eff
    v = profile.potential_eV
    m = profile.m_eff_per_node
    if side == "top":
        z = np.r_[z[0] - width_nm, z]
        iv, im = np.r_[edge_eV, iv], np.r_[m_eff, im]
        v, m = np.r_[edge_eV, v], np.r_[m_eff, m]
    else:
        z = np.r_[z, z[-1] + width_nm]
        iv, im = np.r_[iv, edge_eV], np.r_[im, m_eff]
        v, m = np.r_[v, edge_eV], np.r_[m, m_eff]
    return PotentialProfile(z, v, m, iv, im)


def linear_drop_diagram(stack, bias_V=0.0, qd_state=None, options=None):
    """Fast band diagram: flat contacts, linear drop across the undoped region.

    The dot sheet charge is added through a Poisson solve with grounded
    ends, so the push-up ordering survives.  No free-carrier screening.
    """
    opts = options or SCOptions()
    window = None if opts.window is None else tuple(map(float, opts.window))
    grid = _cached_grid(stack, float(opts.max_spacing_nm), window, opts.inas_well_depth_eV)
    chi = grid.interval_cb_offset_eV
    m_int = grid.interval_m_eff
    temperature = stack.temperature_K
    kt = _kt_eV(temperature)
    eta_top, eta_bot = _contact_etas(
        float(grid.interval_doping_cm3[0]), float(m_int[0]),
        float(grid.interval_doping_cm3[-1]), float(m_int[-1]), temperature,
    )
    if not (math.isfinite(eta_top) and math.isfinite(eta_bot)):
        raise ValueError("linear-drop profile needs doped contacts at both ends")
    mu_top, mu_bot = 0.0, float(bias_V)
    phi_a = chi[0] - mu_top + eta_top * kt
    phi_b = chi[-1] - mu_bot + eta_bot * kt
    z = grid.node_positions_nm
    doped = grid.node_doping_cm3 > 1e10
    a, b = stack.double_barrier_span_nm
    left = z[doped & (z < a)]
    right = z[doped & (z > b)]
    z0 = left.max() if left.size else z[0]
    z1 = right.min() if right.size else z[-1]
    phi = np.interp(z, [z0, z1], [phi_a, phi_b])
    occupancy = 0.0 if qd_state is None else float(getattr(qd_state, "occupancy", qd_state))
    if stack.qd_sheet is not None and grid.qd_node_index is not None and occupancy > 0:
        sheet = -stack.qd_sheet.sheet_density_cm2(occupancy)
        phi = phi + solve_poisson(grid, ChargeDensity(np.zeros_like(z), sheet), (0.0, 0.0))
    return BandDiagram(
        profile=_build_profile(z, chi, m_int, phi),
        fermi_level_eV=(mu_top, mu_bot),
        residual_eV=0.0,
        iterations=0,
        grid=grid,
        phi_V=phi,
        electron_density_cm3=np.zeros_like(z),
        bias_V=float(bias_V),
        occupancy=occupancy,
        inas_well_depth_eV=opts.inas_well_depth_eV,
    )


def path_profiles(stack, diagram, options=None):
    """Windowed transport profiles ``{"rtd": ..., "qd": ...}`` at one bias.

    ``"qd"`` is absent when the stack has no dot sheet in the window.  At
    zero bias the top contact is taken as emitter.
    """
    options = options or TransportOptions()
    grid = diagram.grid
    mu_top, mu_bot = map(float, diagram.fermi_level_eV)
    emitter = "bottom" if mu_bot > mu_top else "top"
    kt = _kt_eV(stack.temperature_K)
    eta_top, eta_bot = _contact_etas(
        float(grid.interval_doping_cm3[0]), float(grid.interval_m_eff[0]),
        float(grid.interval_doping_cm3[-1]), float(grid.interval_m_eff[-1]), stack.temperature_K,
    )
    if emitter == "top":
        if not math.isfinite(eta_top):
            raise ValueError("emitter contact is undoped")
        lead_edge = mu_top - eta_top * kt
    else:
        if not math.isfinite(eta_bot):
            raise ValueError("emitter contact is undoped")
        lead_edge = mu_bot - eta_bot * kt
    a, b = stack.double_barrier_span_nm
    margin = options.window_margin_nm
    rtd = diagram.path_profile(False).window(a - margin, b + margin)
    out = {"rtd": _attach_lead(rtd, emitter, lead_edge, options.lead_width_nm, options.m_eff_lead)}
    if stack.qd_sheet is not None and grid.qd_well_start_index is not None:
        zq = stack.qd_position_nm
        t = stack.qd_sheet.well_thickness_nm
        full = diagram.path_profile(True)
        if zq < a:
            qd = full.window(zq - t - margin, b + margin)
            dots_on_emitter = emitter == "top"
        else:
            qd = full.window(a - margin, zq + margin)
            dots_on_emitter = emitter == "bottom"
        if not dots_on_emitter:
            qd = _attach_lead(qd, emitter, lead_edge, options.lead_width_nm, options.m_eff_lead)
        out["qd"] = qd
    return out


@dataclass(frozen=True, eq=False)
class PathCurrents:
    total_A: float
    rtd_A: float
    qd_A: float
    diagram: BandDiagram = None

    def __float__(self):
        return self.total_A


def _floor(x, floor):
    return 0.0 if abs(x) < floor else float(x)


def _diagram(stack, bias_V, qd_state, options, initial_phi):
    if options.profile_mode == "linear":
        return linear_drop_diagram(stack, bias_V, qd_state, options.sc)
    return self_consistent_band_diagram(stack, bias_V, qd_state, options.sc, initial_phi=initial_phi)


def path_currents(stack, bias_V, qd_state=None, options=None, *, initial_phi=None, diagram=None):
    """Path-resolved current at one bias; see :func:`two_path_current`."""
    options = options or TransportOptions()
    if diagram is None:
        diagram = _diagram(stack, bias_V, qd_state, options, initial_phi)
    mu_top, mu_bot = map(float, diagram.fermi_level_eV)
    profiles = path_profiles(stack, diagram, options)
    sheet = stack.qd_sheet
    f = 0.0 if sheet is None else float(sheet.area_fraction)
    if "qd" not in profiles:
        f = 0.0
    occupancy = diagram.occupancy
    T = stack.temperature_K
    A = stack.area_um2
    try:
        i_rtd, _ = _profile_current(profiles["rtd"], mu_top, mu_bot, T, (1.0 - f) * A, options)
    except Exception as exc:  # noqa: BLE001
        raise PathError("Path_RTD", exc) from exc
    i_qd = 0.0
    if f > 0:
        block = 1.0 - occupancy / sheet.electrons_per_dot_max if options.qd_blocking else 1.0
        try:
            i_qd, _ = _profile_current(profiles["qd"], mu_top, mu_bot, T, f * A, options)
        except Exception as exc:  # noqa: BLE001
            raise PathError("Path_QD-RTD", exc) from exc
        i_qd *= block
    floor = options.current_floor_A
    i_rtd = _floor(i_rtd, floor)
    i_qd = _floor(i_qd, floor)
    return PathCurrents(_floor(i_rtd + i_qd, floor), i_rtd, i_qd, diagram)


def two_path_current(stack, bias_V, qd_state=None, options=None):
    """Total current (A): Path_RTD over ``(1-f) A`` plus Path_QD-RTD over ``f A``.

    The stored dot charge enters both paths through the Poisson solve and,
    with ``options.qd_blocking``, scales the QD-path current by
    ``1 - n / n_max``.
    """
    return path_currents(stack, bias_V, qd_state, options).total_A


@dataclass(frozen=True, eq=False)
class IVCurve:
    bias_V: np.ndarray
    current_A: np.ndarray
    qd_occupancy: np.ndarray = None
    path_rtd_A: np.ndarray = None
    path_qd_A: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.bias_V, dtype=float)
        i = np.asarray(self.current_A, dtype=float)
        if v.shape != i.shape or v.ndim != 1:
            raise ValueError("bias and current must be 1-D arrays of equal length")
        if v.size > 1:
            d = np.diff(v)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ValueError("bias values must be strictly monotone")
        if not np.all(np.isfinite(i)):
            raise ValueError("current must be finite at every point")
        object.__setattr__(self, "bias_V", v)
        object.__setattr__(self, "current_A", i)
        for name in ("qd_occupancy", "path_rtd_A", "path_qd_A"):
            arr = getattr(self, name)
            arr = np.zeros_like(v) if arr is None else np.asarray(arr, dtype=float)
            if arr.shape != v.shape:
                raise ValueError(f"{name} length mismatch")
            object.__setattr__(self, name, arr)

    @property
    def points(self):
        return list(zip(self.bias_V.tolist(), self.current_A.tolist()))

    def __len__(self):
        return self.bias_V.size

    def to_csv(self):
        buf = io.StringIO()
        for key in sorted(self.meta):
            buf.write(f"# {key}: {self.meta[key]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bias_V", "current_A", "qd_occupancy", "path_rtd_A", "path_qd_A"])
        for row in zip(self.bias_V, self.current_A, self.qd_occupancy, self.path_rtd_A, self.path_qd_A):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        meta, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
            elif line.strip():
                rows.append(line)
        reader = csv.DictReader(rows)
        cols = {k: [] for k in ("bias_V", "current_A", "qd_occupancy", "path_rtd_A", "path_qd_A")}
        for rec in reader:
            for k in cols:
                cols[k].append(float(rec[k]))
        return cls(**{k: np.asarray(v) for k, v in cols.items()}, meta=meta)


def iv_sweep(stack, protocol, options=None, params=None):
    """Bias sweep with the dot charge carried from point to point.

    The dots start at :func:`equilibrium_charge` of the former bias.  At each
    bias the occupancy is evolved over the dwell (hole capture under light,
    no recharging in the sweep) and the current is evaluated with the
    resulting charge.  The previous potential warm-starts the next solve.
    """
    options = options or TransportOptions()
    params = params or RateParams()
    sheet = stack.qd_sheet
    if sheet is not None:
        state = equilibrium_charge(
            protocol.former_bias_V, protocol.hold_duration_s, params,
            electrons_per_dot_max=sheet.electrons_per_dot_max,
            areal_density_cm2=sheet.areal_density_cm2,
        )
        capture = hole_capture_rate_per_dot(protocol.photon_rate_per_s_um2, stack, params)
    else:
        state = QDChargeState(0.0)
        capture = 0.0
    meta = {
        "direction": protocol.direction,
        "former_bias_V": repr(float(protocol.former_bias_V)),
        "hold_duration_s": repr(float(protocol.hold_duration_s)),
        "photon_rate_per_s_um2": repr(float(protocol.photon_rate_per_s_um2)),
        "temperature_K": repr(float(stack.temperature_K)),
        "dwell_s_per_step": repr(float(protocol.dwell_s_per_step)),
        "seed": str(protocol.seed),
        "initial_occupancy": repr(float(state.occupancy)),
    }
    rows = []
    phi = None

    def _curve():
        if not rows:
            return None
        arr = np.asarray(rows, dtype=float)
        return IVCurve(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], dict(meta))

    for v in protocol.biases():
        if sheet is not None and capture > 0:
            state = evolve_charge(state, protocol.dwell_s_per_step, capture, params)
        elif sheet is not None and not math.isinf(params.tau_storage_s):
            state = evolve_charge(state, protocol.dwell_s_per_step, 0.0, params)
        try:
            res = path_currents(stack, float(v), state, options, initial_phi=phi)
        except Exception as exc:  # noqa: BLE001
            raise SweepError(f"sweep aborted at {v:+.3f} V: {exc}", _curve()) from exc
        phi = res.diagram.phi_V
        rows.append((float(v), res.total_A, state.occupancy, res.rtd_A, res.qd_A))
    return _curve()


@dataclass(frozen=True)
class Peak:
    bias_V: float
    current_A: float
    label: str


@dataclass(frozen=True)
class PeakSet:
    peaks: tuple = ()

    def get(self, label):
        for p in self.peaks:
            if p.label == label:
                return p
        return None

    @property
    def labels(self):
        return [p.label for p in self.peaks]

    def __len__(self):
        return len(self.peaks)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "bias_V", "current_A"])
        for p in self.peaks:
            w.writerow([p.label, repr(float(p.bias_V)), repr(float(p.current_A))])
        return buf.getvalue()


def detect_peaks(curve, prominence_floor=None, *, relative_floor=1e-3):
    """Strict local maxima of ``|I|`` whose prominence exceeds the floor.

    The floor is ``prominence_floor`` (A) when given, otherwise
    ``relative_floor * max|I|`` so the result does not depend on the current
    scale.  Reverse-branch peaks are labelled A, B in order of ``|V|``; the
    first forward-branch peak is C; the rest are ``unlabeled``.
    """
    v = np.asarray(curve.bias_V, dtype=float)
    i = np.abs(np.asarray(curve.current_A, dtype=float))
    if v.size < 3:
        raise ValueError("peak detection needs at least 3 points")
    if prominence_floor is None:
        prominence_floor = relative_floor * float(i.max()) if i.max() > 0 else np.inf
    found = []
    for sign in (-1.0, 1.0):
        # each branch separately, ordered by increasing |V|
        sel = np.flatnonzero(np.sign(v) == sign)
        if sel.size < 3:
            continue
        order = sel[np.argsort(np.abs(v[sel]))]
        # |I(0)| = 0 closes the branch on the low-|V| side
        branch = np.concatenate([[0.0], i[order]])
        idx, _ = signal.find_peaks(branch, prominence=(prominence_floor, None))
        strict = [k for k in idx if branch[k] > branch[k - 1] and branch[k] > branch[k + 1]]
        labels = iter(["A", "B"] if sign < 0 else ["C"])
        for k in strict:
            j = order[k - 1]
            found.append(Peak(float(v[j]), float(curve.current_A[j]), next(labels, "unlabeled")))
    found.sort(key=lambda p: p.bias_V)
    return PeakSet(tuple(found))
