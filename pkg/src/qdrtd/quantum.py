"""Single-band effective-mass quantum solvers.

Bound states use a box-integrated BenDaniel-Duke finite-difference
Hamiltonian.  Transmission uses real 2x2 transfer matrices acting on
``(psi, psi'/m)`` over piecewise-constant intervals, which keeps the
mass-discontinuity matching exact and every interval matrix unimodular.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import constants, linalg, optimize

__all__ = [
    "HBAR2_OVER_2M0",
    "PotentialProfile",
    "EigenSolution",
    "TransmissionSpectrum",
    "RefinePolicy",
    "EigenSolveError",
    "solve_bound_states",
    "interval_matrices",
    "transmission_coefficients",
    "transmission",
    "find_resonances",
    "spectrum_to_csv",
    "profile_to_csv",
]

#: hbar^2 / (2 m_0) in eV nm^2
HBAR2_OVER_2M0 = constants.hbar**2 / (2 * constants.m_e) / constants.e * 1e18


class EigenSolveError(ArithmeticError):
    """The tridiagonal eigensolver failed."""


@dataclass(frozen=True, eq=False)
class PotentialProfile:
    """Conduction-band edge and effective mass on a node grid.

    ``interval_potential_eV`` / ``interval_m_eff`` hold the exact
    piecewise-constant values between nodes.  When omitted they are the
    midpoint averages of the node values.
    """

    positions_nm: np.ndarray
    potential_eV: np.ndarray
    m_eff_per_node: np.ndarray
    interval_potential_eV: np.ndarray | None = None
    interval_m_eff: np.ndarray | None = None

    def __post_init__(self):
        z = np.asarray(self.positions_nm, dtype=float)
        v = np.asarray(self.potential_eV, dtype=float)
        m = np.asarray(self.m_eff_per_node, dtype=float)
        if not (z.ndim == v.ndim == m.ndim == 1 and z.size == v.size == m.size):
            raise ValueError("positions, potential and mass arrays must be 1-D and equal length")
        if z.size < 3:
            raise ValueError("a profile needs at least 3 nodes")
        if np.any(np.diff(z) <= 0):
            raise ValueError("positions must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential values must be finite")
        if np.any(m <= 0):
            raise ValueError("effective masses must be positive")
        object.__setattr__(self, "positions_nm", z)
        object.__setattr__(self, "potential_eV", v)
        object.__setattr__(self, "m_eff_per_node", m)
        iv = self.interval_potential_eV
        im = self.interval_m_eff
        iv = 0.5 * (v[:-1] + v[1:]) if iv is None else np.asarray(iv, dtype=float)
        im = 0.5 * (m[:-1] + m[1:]) if im is None else np.asarray(im, dtype=float)
        if iv.size != z.size - 1 or im.size != z.size - 1:
            raise ValueError("interval arrays must have one entry per grid interval")
        object.__setattr__(self, "interval_potential_eV", iv)
        object.__setattr__(self, "interval_m_eff", im)

    @classmethod
    def from_segments(cls, segments, spacing_nm, start_nm=0.0):
        """Build from ``[(width_nm, potential_eV, m_eff), ...]``.

        Every segment boundary is a node; interface nodes carry the
        length-weighted average of the two neighbouring segments.
        """
        edges = [start_nm]
        iv, im = [], []
        for width, pot, mass in segments:
            n = max(1, int(np.ceil(width / spacing_nm - 1e-9)))
            a = edges[-1]
            edges.extend(a + width * np.arange(1, n + 1) / n)
            iv.extend([pot] * n)
            im.extend([mass] * n)
        z = np.asarray(edges)
        iv = np.asarray(iv, dtype=float)
        im = np.asarray(im, dtype=float)
        return cls(z, *_node_average(z, iv, im), iv, im)

    @property
    def spacing_nm(self):
        return np.diff(self.positions_nm)

    def mirrored(self):
        """Spatial reflection about the window centre."""
        z = self.positions_nm
        return PotentialProfile(
            z[0] + z[-1] - z[::-1],
            self.potential_eV[::-1].copy(),
            self.m_eff_per_node[::-1].copy(),
            self.interval_potential_eV[::-1].copy(),
            self.interval_m_eff[::-1].copy(),
        )

    def window(self, z0, z1):
        """Sub-profile between the nodes nearest ``z0`` and ``z1``."""
        z = self.positions_nm
        i = int(np.argmin(np.abs(z - z0)))
        j = int(np.argmin(np.abs(z - z1)))
        if j - i < 2:
            raise ValueError("window must contain at least 3 nodes")
        return PotentialProfile(
            z[i : j + 1],
            self.potential_eV[i : j + 1],
            self.m_eff_per_node[i : j + 1],
            self.interval_potential_eV[i:j],
            self.interval_m_eff[i:j],
        )

    def shifted(self, delta_eV):
        return PotentialProfile(
            self.positions_nm,
            self.potential_eV + delta_eV,
            self.m_eff_per_node,
            self.interval_potential_eV + delta_eV,
            self.interval_m_eff,
        )


def _node_average(z, iv, im):
    h = np.diff(z)
    w = np.zeros(z.size)
    w[:-1] += h
    w[1:] += h
    v = np.zeros(z.size)
    v[:-1] += h * iv
    v[1:] += h * iv
    m = np.zeros(z.size)
    m[:-1] += h * im
    m[1:] += h * im
    return v / w, m / w


@dataclass(frozen=True, eq=False)
class EigenSolution:
    energies_eV: np.ndarray
    wavefunctions: np.ndarray  # shape (n_states, n_nodes)
    positions_nm: np.ndarray
    cutoff_eV: float

    def norm(self, k):
        return float(_trapezoid_weights(self.positions_nm) @ self.wavefunctions[k] ** 2)


def _trapezoid_weights(z):
    h = np.diff(z)
    w = np.zeros(z.size)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def solve_bound_states(profile, n_states):
    """Lowest ``n_states`` bound states with psi = 0 at both window edges.

    States at or above the cutoff ``max(V[0], V[-1])`` are dropped, so the
    result may hold fewer than ``n_states`` entries (or none).
    """
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    z = profile.positions_nm
    h = np.diff(z)
    w = _trapezoid_weights(z)[1:-1]
    g = HBAR2_OVER_2M0 / (profile.interval_m_eff * h)  # coupling per interval
    diag = (g[:-1] + g[1:]) / w + profile.potential_eV[1:-1]
    off = -g[1:-1] / np.sqrt(w[:-1] * w[1:])
    cutoff = float(max(profile.potential_eV[0], profile.potential_eV[-1]))
    n_inner = diag.size
    k = min(n_states, n_inner)
    try:
        vals, vecs = linalg.eigh_tridiagonal(
            diag, off, select="i", select_range=(0, k - 1), lapack_driver="stemr"
        )
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigenSolveError(
            f"tridiagonal eigensolve failed for {n_inner} interior nodes, {k} states requested: {exc}"
        ) from exc
    keep = vals < cutoff
    vals = vals[keep]
    vecs = vecs[:, keep]
    psi = np.zeros((vals.size, z.size))
    psi[:, 1:-1] = (vecs / np.sqrt(w)[:, None]).T
    for row in psi:
        big = np.flatnonzero(np.abs(row) > 1e-3 * np.abs(row).max())
        if big.size and row[big[0]] < 0:
            row *= -1.0
    return EigenSolution(vals, psi, z, cutoff)


# ---------------------------------------------------------------------------
# transfer matrices


def _interval_elements(energies, pot, mass, width):
    """Elements (a, b, c, d) of the unimodular interval matrix.

    Acts on (psi, psi'/m): [[cos, m sin/k], [-k sin/m, cos]] for E > V and
    the hyperbolic counterpart for E < V.
    """
    q2 = mass * (energies - pot) / HBAR2_OVER_2M0
    k = np.sqrt(np.abs(q2))
    x = k * width
    osc = q2 >= 0
    xs = np.minimum(x, 700.0)
    a = np.where(osc, np.cos(x), np.cosh(xs))
    sx = np.where(osc, np.sin(x), np.sinh(xs))
    small = x < 1e-8
    sinc = np.where(small, 1.0, sx / np.where(small, 1.0, x))
    b = mass * width * sinc
    c = np.where(osc, -1.0, 1.0) * k * k * width * sinc / mass
    return a, b, c, a


def interval_matrices(profile, energy_eV):
    """Per-interval 2x2 matrices, shape ``(n_intervals, 2, 2)`` (diagnostics)."""
    e = np.atleast_1d(float(energy_eV))
    out = np.empty((profile.interval_potential_eV.size, 2, 2))
    for j, (pot, mass, width) in enumerate(
        zip(profile.interval_potential_eV, profile.interval_m_eff, profile.spacing_nm)
    ):
        a, b, c, d = _interval_elements(e, pot, mass, width)
        out[j] = [[a[0], b[0]], [c[0], d[0]]]
    return out


def transmission_coefficients(profile, energies):
    """Transmission probability at each energy (no refinement).

    Leads are the semi-infinite continuations of the first and last
    interval.  Products are renormalised every step and the scale is kept
    as a logarithm, so deep tunnelling underflows to 0 instead of NaN.
    """
    e = np.asarray(energies, dtype=float)
    flat = np.atleast_1d(e).ravel()
    m11 = np.ones_like(flat)
    m12 = np.zeros_like(flat)
    m21 = np.zeros_like(flat)
    m22 = np.ones_like(flat)
    logscale = np.zeros_like(flat)
    for pot, mass, width in zip(profile.interval_potential_eV, profile.interval_m_eff, profile.spacing_nm):
        a, b, c, d = _interval_elements(flat, pot, mass, width)
        n11 = a * m11 + b * m21
        n12 = a * m12 + b * m22
        n21 = c * m11 + d * m21
        n22 = c * m12 + d * m22
        s = np.maximum(np.maximum(np.abs(n11), np.abs(n12)), np.maximum(np.abs(n21), np.abs(n22)))
        rescale = s > 1e8
        if np.any(rescale):
            inv = np.where(rescale, 1.0 / s, 1.0)
            n11, n12, n21, n22 = n11 * inv, n12 * inv, n21 * inv, n22 * inv
            logscale += np.where(rescale, np.log(s), 0.0)
        m11, m12, m21, m22 = n11, n12, n21, n22

    vl, ml = profile.interval_potential_eV[0], profile.interval_m_eff[0]
    vr, mr = profile.interval_potential_eV[-1], profile.interval_m_eff[-1]
    ok = (flat > vl) & (flat > vr)
    kl = np.sqrt(np.where(ok, ml * (flat - vl), 1.0) / HBAR2_OVER_2M0) / ml
    kr = np.sqrt(np.where(ok, mr * (flat - vr), 1.0) / HBAR2_OVER_2M0) / mr
    den = (kl * kr * m12 - m21) ** 2 + (kr * m11 + kl * m22) ** 2
    with np.errstate(over="ignore", under="ignore"):
        t = 4.0 * kl * kr / den * np.exp(-2.0 * logscale)
    t = np.where(ok, t, 0.0)
    return t.reshape(e.shape) if e.ndim else float(t[0])


# ---------------------------------------------------------------------------
# adaptive spectra


@dataclass(frozen=True)
class RefinePolicy:
    """Energy-grid refinement settings for :func:`transmission`.

    An interval is bisected while ``|dT| > dT_threshold``, while an
    unresolved local maximum (fewer than ``points_per_fwhm`` samples inside
    its half-maximum width) touches it, or while its estimated share of the
    quadrature error of ``int w(E) T(E) dE`` is above budget (``rtol``).
    """

    enabled: bool = True
    dT_threshold: float = 0.05
    max_depth: int = 20
    points_per_fwhm: int = 8
    rtol: float = 1e-4
    floor: float = 1e-6
    discover_floor: float = 1e-13
    polish: bool = True
    weight: object = None
    max_points: int = 20000


@dataclass(frozen=True, eq=False)
class TransmissionSpectrum:
    energies_eV: np.ndarray
    transmission: np.ndarray
    resonances: list = field(default_factory=list)


def transmission(profile, energy_eV, refine=None, seeds=None):
    """Transmission spectrum on an (optionally refined) energy grid.

    Parameters
    ----------
    profile : PotentialProfile
    energy_eV : array_like
        Initial energy grid (eV, same reference as the profile).
    refine : RefinePolicy or bool, optional
        ``None``/``True`` use the default policy, ``False`` disables.
    seeds : array_like, optional
        Extra energies (e.g. quasi-bound state estimates) inserted into the
        initial grid so that very narrow peaks are not stepped over.
    """
    if refine is None or refine is True:
        refine = RefinePolicy()
    elif refine is False:
        refine = RefinePolicy(enabled=False)
    e = np.unique(np.asarray(energy_eV, dtype=float).ravel())
    if e.size == 0:
        raise ValueError("energy grid must be nonempty")
    if seeds is not None and refine.enabled:
        s = np.asarray(seeds, dtype=float).ravel()
        s = s[(s > e[0]) & (s < e[-1])]
        e = np.unique(np.concatenate([e, s]))
    t = transmission_coefficients(profile, e)
    if refine.enabled and e.size >= 2:
        e, t = _refine(profile, e, t, refine)
    res = find_resonances(TransmissionSpectrum(e, t), floor=refine.floor)
    if refine.enabled and refine.polish and res:
        e, t = _polish(profile, e, t, res)
        res = find_resonances(TransmissionSpectrum(e, t), floor=refine.floor)
    return TransmissionSpectrum(e, t, res)


def _weight(policy, e):
    if policy.weight is None:
        return np.ones_like(e)
    return np.asarray(policy.weight(e), dtype=float)


def _unresolved_peaks(e, t, policy):
    """Indices of intervals bracketing under-resolved local maxima."""
    flagged = set()
    n = e.size
    if n < 3:
        return flagged
    interior = np.arange(1, n - 1)
    is_max = (t[interior] > t[interior - 1]) & (t[interior] >= t[interior + 1]) & (t[interior] > policy.discover_floor)
    for i in interior[is_max]:
        half = 0.5 * t[i]
        lo = i
        while lo > 0 and t[lo] > half:
            lo -= 1
        hi = i
        while hi < n - 1 and t[hi] > half:
            hi += 1
        inside = hi - lo - 1
        if inside < policy.points_per_fwhm:
            flagged.update(range(lo, hi))
    return flagged


def _refine(profile, e, t, policy):
    depth = np.zeros(e.size - 1, dtype=int)
    for _ in range(policy.max_depth * 4 + 8):
        if e.size >= policy.max_points:
            break
        h = np.diff(e)
        f = _weight(policy, e) * t
        split = np.abs(np.diff(t)) > policy.dT_threshold
        for k in _unresolved_peaks(e, t, policy):
            split[k] = True
        # curvature estimate of the trapezoid error per interval
        if e.size >= 4:
            err = np.zeros(h.size)
            mid = 0.5 * (e[:-1] + e[1:])
            for off in (0, 1):
                idx = np.arange(h.size)
                j0 = idx - 1 + off
                valid = (j0 >= 0) & (j0 + 2 < e.size)
                j0 = np.clip(j0, 0, e.size - 3)
                est = _parabola(e[j0], e[j0 + 1], e[j0 + 2], f[j0], f[j0 + 1], f[j0 + 2], mid)
                dev = np.where(valid, np.abs(est - 0.5 * (f[:-1] + f[1:])), 0.0)
                err = np.maximum(err, dev)
            err = (2.0 / 3.0) * h * err
            total = float(np.sum(0.5 * h * (f[:-1] + f[1:])))
            if total > 0 and err.sum() > policy.rtol * total:
                split |= err > policy.rtol * total / h.size
        split &= depth < policy.max_depth
        split &= h > 1e-15 * max(1.0, abs(e[-1]))
        if not np.any(split):
            break
        new_e = 0.5 * (e[:-1] + e[1:])[split]
        new_t = transmission_coefficients(profile, new_e)
        pos = np.flatnonzero(split) + 1
        e = np.insert(e, pos, new_e)
        t = np.insert(t, pos, new_t)
        nd = depth.copy()
        nd[split] += 1
        depth = np.repeat(nd, np.where(split, 2, 1))
    return e, t


def _parabola(x0, x1, x2, y0, y1, y2, x):
    with np.errstate(invalid="ignore", divide="ignore"):
        l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
        l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
        l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
    return y0 * l0 + y1 * l1 + y2 * l2


def _polish(profile, e, t, resonances):
    extra = []
    for center, _width in resonances:
        i = int(np.searchsorted(e, center))
        lo = e[max(i - 1, 0)]
        hi = e[min(i + 1, e.size - 1)]
        if hi <= lo:
            continue
        sol = optimize.minimize_scalar(
            lambda x: -transmission_coefficients(profile, np.array([x]))[0],
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": max((hi - lo) * 1e-7, 1e-15)},
        )
        extra.append(sol.x)
    if not extra:
        return e, t
    extra = np.setdiff1d(np.asarray(extra), e)
    te = transmission_coefficients(profile, extra)
    e2 = np.concatenate([e, extra])
    t2 = np.concatenate([t, te])
    order = np.argsort(e2)
    return e2[order], t2[order]


def find_resonances(spectrum, floor=1e-6):
    """Local maxima of T above ``floor`` with FWHM from linear interpolation.

    Returns ``[(center_eV, fwhm_eV), ...]``; the width is ``nan`` when the
    half-maximum level is not crossed on either side within the spectrum.
    """
    e = np.asarray(spectrum.energies_eV)
    t = np.asarray(spectrum.transmission)
    out = []
    n = e.size
    if n < 3:
        return out
    i = 1
    while i < n - 1:
        if t[i] > t[i - 1] and t[i] > floor:
            j = i
            while j < n - 1 and t[j + 1] == t[i]:
                j += 1
            if j < n - 1 and t[j + 1] < t[i]:
                out.append((float(e[i]), _fwhm(e, t, i)))
            i = j + 1
        else:
            i += 1
    return out


def _fwhm(e, t, i):
    half = 0.5 * t[i]
    left = right = None
    k = i
    while k > 0 and t[k] > half:
        k -= 1
    if t[k] <= half:
        left = e[k] + (half - t[k]) * (e[k + 1] - e[k]) / (t[k + 1] - t[k])
    k = i
    while k < e.size - 1 and t[k] > half:
        k += 1
    if t[k] <= half:
        right = e[k - 1] + (t[k - 1] - half) * (e[k] - e[k - 1]) / (t[k - 1] - t[k])
    if left is not None and right is not None:
        return float(right - left)
    if left is not None:
        return float(2 * (e[i] - left))
    if right is not None:
        return float(2 * (right - e[i]))
    return float("nan")


def spectrum_to_csv(spectrum):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["energy_eV", "T"])
    for x, y in zip(spectrum.energies_eV, spectrum.transmission):
        w.writerow([repr(float(x)), repr(float(y))])
    return buf.getvalue()


def profile_to_csv(profile):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["position_nm", "potential_eV", "m_eff"])
    for row in zip(profile.positions_nm, profile.potential_eV, profile.m_eff_per_node):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()
