"""Independent reference implementations used to check the package.

Nothing here imports :mod:`qdrtd`.  Physical constants come straight from
``scipy.constants`` and every algorithm differs from the production one:
shooting instead of a finite-difference eigenproblem, complex plane-wave
amplitudes instead of real unimodular transfer matrices, adaptive
quadrature instead of fixed Gauss-Legendre panels.

Run ``python tests/oracles.py`` to regenerate ``tests/data/oracle_values.json``.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy import constants, integrate, optimize, special

C_EV_NM2 = constants.hbar**2 / (2 * constants.m_e) / constants.e * 1e18  # hbar^2/2m0 in eV nm^2
KB_EV = constants.k / constants.e

DATA_FILE = Path(__file__).with_name("data") / "oracle_values.json"

# zinc-blende AlAs lattice constant (nm) and the reference barrier
ALAS_A_NM = 0.56611
BARRIER_NM = 11 * ALAS_A_NM / 2
M_GAAS, M_ALAS = 0.067, 0.15
V_ALAS = 1.05


def infinite_well_levels(width_nm, m_eff, n_max):
    n = np.arange(1, n_max + 1)
    return C_EV_NM2 * (math.pi * n / width_nm) ** 2 / m_eff


# ---------------------------------------------------------------------------
# shooting


def _shoot(energy, segments):
    """psi at the far wall for psi(0)=0, (psi'/m)(0)=1, integrated segment by segment."""
    y = np.array([0.0, 1.0])
    for width, pot, mass in segments:
        def rhs(_z, s, pot=pot, mass=mass):
            return [mass * s[1], (pot - energy) / C_EV_NM2 * s[0]]

        sol = integrate.solve_ivp(rhs, (0.0, width), y, method="DOP853", rtol=1e-11, atol=1e-14)
        y = sol.y[:, -1]
        y = y / max(abs(y[0]), abs(y[1]), 1e-300)  # sign-preserving rescale
    return y[0]


def shooting_levels(segments, e_max, scan_step=1e-3):
    """Bound levels with hard walls at both ends, by sign-change scan plus brentq."""
    grid = np.arange(scan_step, e_max, scan_step)
    vals = np.array([_shoot(e, segments) for e in grid])
    roots = []
    for k in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        roots.append(optimize.brentq(_shoot, grid[k], grid[k + 1], args=(segments,), xtol=1e-13))
    return np.array(roots)


def reference_well_segments():
    return [(BARRIER_NM, V_ALAS, M_ALAS), (8.0, 0.0, M_GAAS), (BARRIER_NM, V_ALAS, M_ALAS)]


# ---------------------------------------------------------------------------
# transmission


def single_barrier_T(energy, height, width_nm, m_in, m_out):
    """Closed-form BenDaniel-Duke transmission of one rectangular barrier."""
    e = np.asarray(energy, dtype=float)
    k = np.sqrt(m_out * e / C_EV_NM2)
    q2 = m_in * (height - e) / C_EV_NM2
    out = np.empty_like(e)
    below = q2 > 0
    kap = np.sqrt(np.abs(q2))
    rho = (kap / m_in) / (k / m_out)
    out[below] = 1.0 / (1.0 + (1 + rho[below] ** 2) ** 2 / (4 * rho[below] ** 2)
                        * np.sinh(kap[below] * width_nm) ** 2)
    ab = ~below
    out[ab] = 1.0 / (1.0 + (1 - rho[ab] ** 2) ** 2 / (4 * rho[ab] ** 2)
                     * np.sin(kap[ab] * width_nm) ** 2)
    return out


def plane_wave_T(energies, widths, pots, masses):
    """Complex plane-wave transfer matrix through piecewise-constant regions.

    ``widths``/``pots``/``masses`` describe the interior regions; the first
    and last entries of ``pots``/``masses`` beyond the interior are the
    leads, i.e. ``pots`` and ``masses`` have ``len(widths) + 2`` entries.
    """
    e = np.atleast_1d(np.asarray(energies, dtype=float)).astype(complex)
    pots = np.asarray(pots, dtype=float)
    masses = np.asarray(masses, dtype=float)

    def kvec(j):
        k = np.sqrt(masses[j] * (e - pots[j]) / C_EV_NM2 + 0j)
        return np.where(np.abs(k) < 1e-12, 1e-12, k)

    def d(j):
        k = kvec(j) / masses[j]
        m = np.empty((e.size, 2, 2), dtype=complex)
        m[:, 0, 0] = m[:, 0, 1] = 1.0
        m[:, 1, 0] = 1j * k
        m[:, 1, 1] = -1j * k
        return m

    total = np.broadcast_to(np.eye(2, dtype=complex), (e.size, 2, 2)).copy()
    prev = d(0)
    for j, h in enumerate(widths, start=1):
        cur = d(j)
        step = np.linalg.solve(cur, prev)  # interface j-1 -> j
        total = step @ total
        k = kvec(j)
        p = np.zeros((e.size, 2, 2), dtype=complex)
        p[:, 0, 0] = np.exp(1j * k * h)
        p[:, 1, 1] = np.exp(-1j * k * h)
        total = p @ total
        prev = cur
    total = np.linalg.solve(d(len(widths) + 1), prev) @ total
    kl = kvec(0) / masses[0]
    kr = kvec(len(widths) + 1) / masses[-1]
    t = np.linalg.det(total) / total[:, 1, 1]
    ratio = np.where(np.real(kl) > 0, np.real(kr) / np.where(np.real(kl) > 0, np.real(kl), 1.0), 0.0)
    out = np.real(ratio * np.abs(t) ** 2)
    out[(np.real(e) <= pots[0]) | (np.real(e) <= pots[-1])] = 0.0
    return out


def double_barrier_regions(barrier_nm=BARRIER_NM, well_nm=8.0):
    widths = [barrier_nm, well_nm, barrier_nm]
    pots = [0.0, V_ALAS, 0.0, V_ALAS, 0.0]
    masses = [M_GAAS, M_ALAS, M_GAAS, M_ALAS, M_GAAS]
    return widths, pots, masses


def double_barrier_resonances(e_max=V_ALAS, step=2e-5, floor=1e-6):
    """Dense scan of the symmetric double barrier, maxima polished by bounded search.

    Maxima below ``floor`` are rounding ripples of the deep-tunnelling tail.
    """
    widths, pots, masses = double_barrier_regions()
    e = np.arange(step, e_max, step)
    t = plane_wave_T(e, widths, pots, masses)
    idx = np.flatnonzero((t[1:-1] > t[:-2]) & (t[1:-1] >= t[2:])) + 1
    found = []
    for i in idx:
        res = optimize.minimize_scalar(
            lambda x: -plane_wave_T([x], widths, pots, masses)[0],
            bounds=(e[i - 1], e[i + 1]), method="bounded", options={"xatol": 1e-14},
        )
        if -res.fun > floor:
            found.append((float(res.x), float(-res.fun)))
    return found


# ---------------------------------------------------------------------------
# statistics of the electron gas


def fd_half_quad(eta):
    """Normalised F_{1/2}(eta) by adaptive quadrature."""
    f = lambda x: math.sqrt(x) / (1.0 + math.exp(min(x - eta, 700.0)))  # noqa: E731
    split = max(eta, 0.0)
    a = integrate.quad(f, 0.0, split, epsabs=0, epsrel=1e-13, limit=200)[0] if split > 0 else 0.0
    b = integrate.quad(f, split, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
    return (a + b) / special.gamma(1.5)


def nc_cm3(m_eff, temperature):
    kt = constants.k * temperature
    return 2.0 * (m_eff * constants.m_e * kt / (2 * math.pi * constants.hbar**2)) ** 1.5 * 1e-6


def neutrality_eta(doping_cm3, m_eff, temperature):
    """(E_F - Ec)/kT with n = N_D, quadrature-based."""
    nc = nc_cm3(m_eff, temperature)
    return optimize.brentq(lambda x: nc * fd_half_quad(x) - doping_cm3, -60.0, 80.0, xtol=1e-13)


# ---------------------------------------------------------------------------
# current


def tsu_esaki_bruteforce(widths, pots, masses, mu_top, mu_bot, temperature, area_um2,
                         e_lo, e_hi, n_points, m_lead=M_GAAS):
    """Uniform-grid trapezoid Tsu-Esaki current (A) with plane-wave transmission."""
    e = np.linspace(e_lo, e_hi, n_points)
    t = plane_wave_T(e, widths, pots, masses)
    kt = KB_EV * temperature
    s = kt * (np.logaddexp(0.0, (mu_bot - e) / kt) - np.logaddexp(0.0, (mu_top - e) / kt))
    pref = constants.e**3 * constants.m_e / (2 * math.pi**2 * constants.hbar**3)
    return pref * m_lead * area_um2 * 1e-12 * float(np.trapezoid(t * s, e))


def resonance_resolved_current(widths, pots, masses, mu_top, mu_bot, temperature, area_um2,
                               e_lo, e_hi, resonances, n_uniform=20000, n_local=4001, span=200.0):
    """Uniform grid plus dense sub-grids of +-span FWHM around each resonance."""
    parts = [np.linspace(e_lo, e_hi, n_uniform)]
    for c, w in resonances:
        if not math.isfinite(w) or w <= 0:
            continue
        parts.append(np.linspace(max(e_lo, c - span * w), min(e_hi, c + span * w), n_local))
    e = np.unique(np.concatenate(parts))
    t = plane_wave_T(e, widths, pots, masses)
    kt = KB_EV * temperature
    s = kt * (np.logaddexp(0.0, (mu_bot - e) / kt) - np.logaddexp(0.0, (mu_top - e) / kt))
    pref = constants.e**3 * constants.m_e / (2 * math.pi**2 * constants.hbar**3)
    return pref * M_GAAS * area_um2 * 1e-12 * float(np.trapezoid(t * s, e))


# ---------------------------------------------------------------------------


def compute_all():
    rng_e = np.linspace(0.005, 1.0, 50)
    res = double_barrier_resonances()
    etas = [-20.0, -10.0, -3.0, 0.0, 2.0, 8.0, 25.0]
    return {
        "infinite_well_10nm_m0.067_eV": infinite_well_levels(10.0, M_GAAS, 3).tolist(),
        "reference_well_levels_eV": shooting_levels(reference_well_segments(), 0.5).tolist(),
        "single_barrier_energies_eV": rng_e.tolist(),
        "single_barrier_T": single_barrier_T(rng_e, V_ALAS, BARRIER_NM, M_ALAS, M_GAAS).tolist(),
        "double_barrier_resonances": [[c, t] for c, t in res],
        "fd_half_eta": etas,
        "fd_half_values": [fd_half_quad(x) for x in etas],
        "neutral_eta_77K": {
            "2e18": neutrality_eta(2e18, M_GAAS, 77.0),
            "1e18": neutrality_eta(1e18, M_GAAS, 77.0),
            "1e16": neutrality_eta(1e16, M_GAAS, 77.0),
        },
    }


def load_frozen():
    return json.loads(DATA_FILE.read_text())


if __name__ == "__main__":
    DATA_FILE.parent.mkdir(exist_ok=True)
    DATA_FILE.write_text(json.dumps(compute_all(), indent=2) + "\n")
    print(f"wrote {DATA_FILE}")
