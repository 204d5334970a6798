"""Poisson solver and self-consistent band diagrams.

Sign conventions: ``phi`` is the electrostatic potential in V, the
conduction-band edge is ``Ec = offset - phi`` in eV.  The top contact
Fermi level is the energy zero.  A bias ``V`` places the bottom-contact
Fermi level at ``V`` eV, so reverse bias (``V < 0``) makes the top contact
the emitter.
"""
from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants, linalg, optimize
from scipy.special import gamma

from .materials import effective_dos_cm3, get_material
from .quantum import PotentialProfile
from .structure import discretize

__all__ = [
    "ChargeDensity",
    "BandDiagram",
    "SCOptions",
    "ConvergenceError",
    "PoissonStructureError",
    "fermi_dirac_integral",
    "electron_density",
    "neutral_eta",
    "solve_poisson",
    "gauss_law_mismatch",
    "self_consistent_band_diagram",
    "band_diagram_to_csv",
]

Q = constants.e
EPS0 = constants.epsilon_0
_ETA_EMPTY = -1e3
_DAMPING_KT = 10.0

_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


class PoissonStructureError(ValueError):
    """The discrete Poisson system is singular or ill-formed."""


class ConvergenceError(RuntimeError):
    """Self-consistency loop hit its iteration cap."""

    def __init__(self, message, residual_history):
        super().__init__(message)
        self.residual_history = list(residual_history)


def fermi_dirac_integral(order, eta):
    """Normalised complete Fermi-Dirac integral F_j(eta) for j = 1/2 or -1/2.

    ``F_j(eta) = 1/Gamma(j+1) * int_0^inf x^j / (1 + exp(x - eta)) dx``,
    evaluated by three-panel Gauss-Legendre quadrature in ``t = sqrt(x)``
    with a panel edge on the Fermi step.  Relative error is below 1e-10.
    """
    if order not in (0.5, -0.5):
        raise ValueError("only orders 1/2 and -1/2 are supported")
    eta = np.asarray(eta, dtype=float)
    flat = np.atleast_1d(eta).ravel()
    out = np.empty_like(flat)
    deep = flat < -35.0
    out[deep] = np.exp(flat[deep])
    e = flat[~deep]
    if e.size:
        t0 = np.sqrt(np.maximum(e, 0.0))
        t1 = t0 + 6.0 / (1.0 + 2.0 * t0)
        t2 = np.maximum(np.sqrt(np.maximum(e, 0.0) + 45.0) + 1.0, t1 + 1e-12)
        total = np.zeros_like(e)
        for lo, hi in ((np.zeros_like(t0), t0), (t0, t1), (t1, t2)):
            half = 0.5 * (hi - lo)
            t = half[:, None] * _GL_X + (0.5 * (hi + lo))[:, None]
            with np.errstate(over="ignore"):
                occ = 1.0 / (1.0 + np.exp(t * t - e[:, None]))
            g = 2.0 * t * t if order == 0.5 else 2.0
            total += half * ((g * occ) @ _GL_W)
        out[~deep] = total / gamma(order + 1.0)
    return out.reshape(eta.shape) if eta.ndim else float(out[0])


def _kt_eV(temperature):
    return constants.k * temperature / Q


def electron_density(profile, fermi_level_eV, temperature_K):
    """Semiclassical 3-D electron density per node (cm^-3)."""
    if not temperature_K > 0:
        raise ValueError("temperature must be positive")
    kt = _kt_eV(temperature_K)
    eta = (np.asarray(fermi_level_eV, dtype=float) - profile.potential_eV) / kt
    return effective_dos_cm3(profile.m_eff_per_node, temperature_K) * fermi_dirac_integral(0.5, eta)


def neutral_eta(doping_cm3, m_eff, temperature_K):
    """Reduced Fermi level (E_F - Ec)/kT at bulk charge neutrality n = N_D.

    Returns ``-inf`` for undoped material.
    """
    if doping_cm3 <= 0:
        return -math.inf
    nc = effective_dos_cm3(m_eff, temperature_K)
    target = math.log(doping_cm3 / nc)
    return optimize.brentq(lambda x: math.log(fermi_dirac_integral(0.5, x)) - target, -200.0, 500.0, xtol=1e-14)


@functools.lru_cache(maxsize=4096)
def _neutral_eta_cached(doping_cm3, m_eff, temperature_K):
    return neutral_eta(doping_cm3, m_eff, temperature_K)


@dataclass(frozen=True, eq=False)
class ChargeDensity:
    """Net fixed+free charge on the grid.

    ``node_charge_cm3`` is in elementary charges per cm^3 (donors positive);
    ``sheet_charge_cm2`` is in elementary charges per cm^2 at ``qd_node_index``
    (negative for stored electrons).
    """

    node_charge_cm3: np.ndarray
    sheet_charge_cm2: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.node_charge_cm3)) or not math.isfinite(self.sheet_charge_cm2):
            raise ValueError("charge density must be finite")


def _control_volumes(z_m):
    h = np.diff(z_m)
    w = np.zeros(z_m.size)
    w[:-1] += h / 2
    w[1:] += h / 2
    return h, w


def _laplacian_bands(h, eps):
    """Banded (3, n) form of the flux-form operator with Dirichlet rows."""
    g = EPS0 * eps / h
    n = h.size + 1
    ab = np.zeros((3, n))
    ab[1, 1:-1] = -(g[:-1] + g[1:])
    ab[0, 2:] = g[1:]
    ab[2, :-2] = g[:-1]
    ab[1, 0] = ab[1, -1] = 1.0
    return ab, g


def _check_grid(grid):
    h = np.diff(grid.node_positions_nm)
    if grid.n_nodes < 3 or np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise PoissonStructureError("degenerate grid: need >= 3 nodes with positive spacing")


def solve_poisson(grid, charge, boundary):
    """Solve ``d/dz(eps dphi/dz) = -rho`` with Dirichlet ends.

    Parameters
    ----------
    grid : Grid
    charge : ChargeDensity
    boundary : (float, float)
        Potential in V at the first and last node.

    Returns
    -------
    ndarray
        Electrostatic potential per node (V).
    """
    _check_grid(grid)
    phi0, phi1 = map(float, boundary)
    if not (math.isfinite(phi0) and math.isfinite(phi1)):
        raise ValueError("boundary potentials must be finite")
    z = grid.node_positions_nm * 1e-9
    h, w = _control_volumes(z)
    ab, _ = _laplacian_bands(h, grid.interval_eps_rel)
    rhs = -Q * np.asarray(charge.node_charge_cm3, dtype=float) * 1e6 * w
    if charge.sheet_charge_cm2 and grid.qd_node_index is not None:
        rhs[grid.qd_node_index] -= Q * charge.sheet_charge_cm2 * 1e4
    rhs[0], rhs[-1] = phi0, phi1
    try:
        return linalg.solve_banded((1, 1), ab, rhs)
    except (linalg.LinAlgError, ValueError) as exc:
        raise PoissonStructureError(f"singular Poisson system: {exc}") from exc


def gauss_law_mismatch(grid, charge, phi):
    """Relative mismatch of the discrete Gauss law.

    Compares the displacement-flux difference between the first and last
    interval with the charge enclosed by the interior control volumes
    (sheet term included).
    """
    z = grid.node_positions_nm * 1e-9
    h, w = _control_volumes(z)
    flux = EPS0 * grid.interval_eps_rel * np.diff(phi) / h
    enclosed = Q * np.sum(np.asarray(charge.node_charge_cm3, dtype=float)[1:-1] * 1e6 * w[1:-1])
    if grid.qd_node_index is not None and 0 < grid.qd_node_index < grid.n_nodes - 1:
        enclosed += Q * charge.sheet_charge_cm2 * 1e4
    scale = max(abs(enclosed), abs(flux[0]), abs(flux[-1]), 1e-300)
    return abs(flux[-1] - flux[0] + enclosed) / scale


# ---------------------------------------------------------------------------
# self-consistency


@dataclass(frozen=True)
class SCOptions:
    tolerance_eV: float = 1e-6
    mixing: float = 0.1
    adaptive_mixing: bool = True
    max_iterations: int = 500
    max_spacing_nm: float = 0.25
    window: tuple | None = None
    boundary_V: tuple | None = None
    fermi_split_nm: float | None = None
    inas_well_depth_eV: float | None = None


@dataclass(frozen=True, eq=False)
class BandDiagram:
    profile: PotentialProfile
    fermi_level_eV: tuple
    residual_eV: float
    iterations: int
    grid: object = None
    phi_V: np.ndarray = None
    electron_density_cm3: np.ndarray = None
    residual_history: list = field(default_factory=list)
    bias_V: float = 0.0
    occupancy: float = 0.0
    inas_well_depth_eV: float | None = None

    @property
    def qd_potential_eV(self):
        """Conduction-band edge at the QD sheet node."""
        if self.grid.qd_node_index is None:
            raise ValueError("stack has no QD sheet inside the window")
        return float(self.profile.potential_eV[self.grid.qd_node_index])

    def path_profile(self, with_qd_well=False):
        """Profile for Path_RTD (default) or Path_QD-RTD (InAs well inserted)."""
        if not with_qd_well:
            return self.profile
        g = self.grid
        if g.qd_node_index is None or g.qd_well_start_index is None:
            raise ValueError("stack has no QD sheet inside the window")
        inas = get_material("InAs", g.temperature_K, inas_well_depth_eV=self.inas_well_depth_eV)
        chi = g.interval_cb_offset_eV.copy()
        mass = g.interval_m_eff.copy()
        sl = slice(g.qd_well_start_index, g.qd_node_index)
        chi[sl] = inas.cb_offset_eV
        mass[sl] = inas.m_eff
        return _build_profile(g.node_positions_nm, chi, mass, self.phi_V)


def _build_profile(z_nm, chi, mass, phi):
    iv = chi - 0.5 * (phi[:-1] + phi[1:])
    h = np.diff(z_nm)
    w = np.zeros(z_nm.size)
    w[:-1] += h
    w[1:] += h
    node_chi = np.zeros(z_nm.size)
    node_chi[:-1] += h * chi
    node_chi[1:] += h * chi
    node_m = np.zeros(z_nm.size)
    node_m[:-1] += h * mass
    node_m[1:] += h * mass
    return PotentialProfile(z_nm, node_chi / w - phi, node_m / w, iv, mass)


@functools.lru_cache(maxsize=32)
def _cached_grid(stack, spacing, window, inas_depth):
    return discretize(stack, spacing, window, inas_well_depth_eV=inas_depth)


@functools.lru_cache(maxsize=64)
def _contact_etas(doping0, m0, doping1, m1, temperature):
    return neutral_eta(doping0, m0, temperature), neutral_eta(doping1, m1, temperature)


class _ChargeModel:
    """Electron density and its phi-derivative, control-volume averaged."""

    def __init__(self, grid, mu_node, temperature):
        self.kt = _kt_eV(temperature)
        z = grid.node_positions_nm
        h = np.diff(z)
        self.w_nm = np.zeros(z.size)
        self.w_nm[:-1] += h / 2
        self.w_nm[1:] += h / 2
        self.h_nm = h
        self.chi = grid.interval_cb_offset_eV
        self.nc = effective_dos_cm3(grid.interval_m_eff, temperature)
        self.mu = mu_node

    def density(self, phi, derivative=False):
        # left half (interval i-1) and right half (interval i) of each node cell
        n = np.zeros(self.mu.size)
        dn = np.zeros(self.mu.size)
        for side in (0, 1):
            if side == 0:
                nodes = np.arange(1, self.mu.size)
                ints = nodes - 1
            else:
                nodes = np.arange(0, self.mu.size - 1)
                ints = nodes
            eta = (self.mu[nodes] - self.chi[ints] + phi[nodes]) / self.kt
            eta = np.maximum(eta, _ETA_EMPTY)
            wgt = 0.5 * self.h_nm[ints] * self.nc[ints]
            n[nodes] += wgt * fermi_dirac_integral(0.5, eta)
            if derivative:
                dn[nodes] += wgt * fermi_dirac_integral(-0.5, eta) / self.kt
        n /= self.w_nm
        dn /= self.w_nm
        return (n, dn) if derivative else n


def self_consistent_band_diagram(stack, bias_V=0.0, qd_state=None, options=None, initial_phi=None):
    """Equilibrium-split band diagram at one bias point.

    Each iteration computes the local electron density from the current
    potential, solves the Poisson equation linearised in that density
    (a Newton/Gummel correction), and applies the correction with
    under-relaxation.  The mixing factor doubles while the scaled Poisson
    residual decreases and is halved otherwise; large corrections are
    compressed logarithmically so no node moves by more than a few tens
    of kT per iteration.

    Parameters
    ----------
    stack : DeviceStack
    bias_V : float
        Applied voltage, ``|bias_V| <= 5``.
    qd_state : QDChargeState or float, optional
        Stored electrons per dot (object with ``occupancy`` or a number).
    options : SCOptions, optional
    initial_phi : ndarray, optional
        Starting electrostatic potential (V) on the grid.
    """
    opts = options or SCOptions()
    if abs(bias_V) > 5.0:
        raise ValueError(f"|bias| must be <= 5 V, got {bias_V}")
    occupancy = 0.0 if qd_state is None else float(getattr(qd_state, "occupancy", qd_state))
    window = None if opts.window is None else tuple(map(float, opts.window))
    grid = _cached_grid(stack, float(opts.max_spacing_nm), window, opts.inas_well_depth_eV)
    _check_grid(grid)
    temperature = stack.temperature_K

    chi = grid.interval_cb_offset_eV
    m_int = grid.interval_m_eff
    eta_top, eta_bot = _contact_etas(
        float(grid.interval_doping_cm3[0]), float(m_int[0]),
        float(grid.interval_doping_cm3[-1]), float(m_int[-1]), temperature,
    )
    kt = _kt_eV(temperature)
    if opts.boundary_V is None:
        if not (math.isfinite(eta_top) and math.isfinite(eta_bot)):
            raise ValueError("undoped contact: supply explicit boundary_V")
        mu_top, mu_bot = 0.0, float(bias_V)
        phi_a = chi[0] - mu_top + eta_top * kt
        phi_b = chi[-1] - mu_bot + eta_bot * kt
    else:
        phi_a, phi_b = map(float, opts.boundary_V)
        phi_b -= bias_V
        mu_top = chi[0] - phi_a + eta_top * kt if math.isfinite(eta_top) else -math.inf
        mu_bot = chi[-1] - phi_b + eta_bot * kt if math.isfinite(eta_bot) else -math.inf

    z = grid.node_positions_nm
    if opts.fermi_split_nm is None:
        a, b = stack.double_barrier_span_nm
        split = 0.5 * (a + b)
    else:
        split = opts.fermi_split_nm
    mu_node = np.where(z < split, mu_top, mu_bot)
    # a node on the split plane takes the mean level so mirrored stacks stay mirrored
    on_split = np.isclose(z, split, rtol=0.0, atol=1e-9)
    if np.any(on_split) and math.isfinite(mu_top) and math.isfinite(mu_bot):
        mu_node = np.where(on_split, 0.5 * (mu_top + mu_bot), mu_node)
    mu_node = np.where(np.isfinite(mu_node), mu_node, _ETA_EMPTY * kt + np.min(chi) - 10.0)

    sheet = 0.0
    if stack.qd_sheet is not None and grid.qd_node_index is not None:
        sheet = -stack.qd_sheet.sheet_density_cm2(occupancy)

    z_m = z * 1e-9
    h_m, w_m = _control_volumes(z_m)
    ab0, _ = _laplacian_bands(h_m, grid.interval_eps_rel)
    fixed = Q * grid.node_doping_cm3 * 1e6 * w_m
    if grid.qd_node_index is not None:
        fixed = fixed.copy()
        fixed[grid.qd_node_index] += Q * sheet * 1e4
    model = _ChargeModel(grid, mu_node, temperature)

    if initial_phi is None:
        phi = _initial_guess(grid, model, phi_a, phi_b, kt)
    else:
        phi = np.array(initial_phi, dtype=float)
    phi[0], phi[-1] = phi_a, phi_b

    mixing = float(opts.mixing)
    history = []
    merits = []
    converged = False
    it = 0
    for it in range(1, opts.max_iterations + 1):
        n, dn = model.density(phi, derivative=True)
        # residual of L phi + rho w
        lphi = np.zeros_like(phi)
        g = EPS0 * grid.interval_eps_rel / h_m
        flux = g * np.diff(phi)
        lphi[1:-1] = flux[1:] - flux[:-1]
        res = lphi + fixed - Q * n * 1e6 * w_m
        res[0] = res[-1] = 0.0
        ab = ab0.copy()
        ab[1, 1:-1] -= Q * dn[1:-1] * 1e6 * w_m[1:-1]
        try:
            delta = linalg.solve_banded((1, 1), ab, -res)
        except (linalg.LinAlgError, ValueError) as exc:
            raise PoissonStructureError(f"singular linearised Poisson system: {exc}") from exc
        delta[0] = delta[-1] = 0.0
        step = float(np.max(np.abs(delta)))
        history.append(step)
        if step < opts.tolerance_eV:
            # the last correction is in the linear regime: take it in full
            phi = phi + delta
            converged = True
            break
        merit = float(np.linalg.norm(res / (Q * 1e6 * w_m * 1e18)))
        if opts.adaptive_mixing and merits:
            if merit < merits[-1]:
                mixing = min(1.0, mixing * 2.0)
            else:
                mixing = max(opts.mixing * 0.1, mixing * 0.5)
        merits.append(merit)
        # logarithmic damping keeps large corrections to a few kT per node
        scale = _DAMPING_KT * kt
        damped = np.sign(delta) * scale * np.log1p(np.abs(delta) / scale)
        phi = phi + mixing * damped
    if not converged:
        raise ConvergenceError(
            f"self-consistency not reached after {opts.max_iterations} iterations "
            f"(last correction {history[-1]:.3e} eV)",
            history,
        )
    n = model.density(phi)
    profile = _build_profile(z, chi, m_int, phi)
    return BandDiagram(
        profile=profile,
        fermi_level_eV=(mu_top, mu_bot),
        residual_eV=history[-1],
        iterations=it,
        grid=grid,
        phi_V=phi,
        electron_density_cm3=n,
        residual_history=history,
        bias_V=float(bias_V),
        occupancy=occupancy,
        inas_well_depth_eV=opts.inas_well_depth_eV,
    )


def _initial_guess(grid, model, phi_a, phi_b, kt):
    """Local neutrality where doped, linear interpolation elsewhere."""
    z = grid.node_positions_nm
    phi = phi_a + (phi_b - phi_a) * (z - z[0]) / (z[-1] - z[0])
    doped = grid.node_doping_cm3 > 1e10
    if np.any(doped):
        # neutrality level per doped node, with the node's own material
        phi_n = phi.copy()
        for k in np.flatnonzero(doped):
            m = grid.node_material[k]
            eta = _neutral_eta_cached(float(grid.node_doping_cm3[k]), m.m_eff, grid.temperature_K)
            phi_n[k] = m.cb_offset_eV - model.mu[k] + eta * kt
        phi = np.where(doped, phi_n, np.nan)
        phi[0], phi[-1] = phi_a, phi_b
        idx = np.flatnonzero(~np.isnan(phi))
        phi = np.interp(np.arange(z.size), idx, phi[idx])
    return phi


def band_diagram_to_csv(diagram):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["position_nm", "Ec_eV", "electron_density_cm3"])
    for z, ec, n in zip(diagram.profile.positions_nm, diagram.profile.potential_eV, diagram.electron_density_cm3):
        w.writerow([repr(float(z)), repr(float(ec)), repr(float(n))])
    return buf.getvalue()
