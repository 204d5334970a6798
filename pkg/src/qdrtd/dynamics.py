"""Charge state of the dot layer and photo-excited carrier multiplication.

Electrons are stored in the dots by a former forward bias and removed one
by one by captured photo-holes.  The stored charge is the memory that the
transport module reads through the Poisson solve and the blocking factor.
"""
from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants

__all__ = [
    "QDChargeState",
    "PhotonStream",
    "SweepProtocol",
    "RateParams",
    "RateParamsWarning",
    "MultiplicationReport",
    "STATED_MULTIPLICATION",
    "GAAS_ALPHA_532NM_CM",
    "beer_lambert_fraction",
    "equilibrium_charge",
    "evolve_charge",
    "photon_arrivals",
    "hole_capture_rate_per_dot",
    "multiplication_factor",
    "photoresponse_sweep",
    "photoresponse_gain",
    "write_photoresponse_family",
]

Q = constants.e

#: multiplication factor quoted alongside the measured 10 nA / 115 s^-1 photoresponse
STATED_MULTIPLICATION = 1e7

#: GaAs absorption coefficient at 532 nm, room-temperature ellipsometry (cm^-1)
GAAS_ALPHA_532NM_CM = 7.6e4


class RateParamsWarning(UserWarning):
    """Rate parameters violate the tunnelling-vs-recombination ordering."""


def beer_lambert_fraction(alpha_cm, thickness_nm, reflectance=0.0):
    """Fraction of normally incident photons absorbed in a slab."""
    if alpha_cm < 0 or thickness_nm < 0 or not 0 <= reflectance < 1:
        raise ValueError("need alpha >= 0, thickness >= 0 and 0 <= reflectance < 1")
    return (1.0 - reflectance) * (1.0 - math.exp(-alpha_cm * thickness_nm * 1e-7))


@dataclass(frozen=True)
class RateParams:
    """Time constants and efficiencies of the charging model.

    ``tau_storage_s`` is the background lifetime of a stored electron in the
    dark (infinite by default, so the charge from a former bias persists
    through the sweep).
    """

    tau_tunnel_s: float = 1e-9
    tau_recomb_s: float = 1e-6
    capture_efficiency: float = 1.0
    absorption_efficiency: float = 0.02
    charge_rate_per_V_s: float = 0.025
    tau_storage_s: float = math.inf

    def __post_init__(self):
        if not (self.tau_tunnel_s > 0 and self.tau_recomb_s > 0 and self.tau_storage_s > 0):
            raise ValueError("time constants must be positive")
        for name in ("capture_efficiency", "absorption_efficiency"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.charge_rate_per_V_s < 0:
            raise ValueError("charge_rate_per_V_s must be non-negative")
        if self.tau_tunnel_s > 1e-3 * self.tau_recomb_s:
            warnings.warn(
                f"tau_tunnel {self.tau_tunnel_s:g} s exceeds 1e-3 x tau_recomb "
                f"{self.tau_recomb_s:g} s; per-hole gain drops below 1e3",
                RateParamsWarning,
                stacklevel=3,
            )

    @property
    def efficiency(self):
        """Combined absorption x capture probability per incident photon."""
        return self.absorption_efficiency * self.capture_efficiency

    @property
    def intrinsic_gain(self):
        """Electrons transported per trapped hole lifetime, tau_recomb / tau_tunnel."""
        return self.tau_recomb_s / self.tau_tunnel_s


@dataclass(frozen=True)
class QDChargeState:
    occupancy: float
    electrons_per_dot_max: float = 6.0
    areal_density_cm2: float = 5.7e10

    def __post_init__(self):
        if not math.isfinite(self.occupancy):
            raise ValueError("occupancy must be finite")
        if not 0.0 <= self.occupancy <= self.electrons_per_dot_max:
            raise ValueError(
                f"occupancy {self.occupancy} outside [0, {self.electrons_per_dot_max}]"
            )

    @property
    def sheet_charge_cm2(self):
        """Stored sheet charge in C/cm^2 (negative)."""
        return -Q * self.areal_density_cm2 * self.occupancy

    @classmethod
    def for_stack(cls, stack, occupancy=0.0):
        sheet = stack.qd_sheet
        if sheet is None:
            return cls(0.0)
        return cls(float(occupancy), sheet.electrons_per_dot_max, sheet.areal_density_cm2)


@dataclass(frozen=True, eq=False)
class PhotonStream:
    rate_per_s_um2: float
    area_um2: float
    duration_s: float
    seed: int | None
    arrivals_s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    wavelength_nm: float = 532.0

    @property
    def device_rate_per_s(self):
        return self.rate_per_s_um2 * self.area_um2

    @property
    def count(self):
        return int(self.arrivals_s.size)


@dataclass(frozen=True)
class SweepProtocol:
    former_bias_V: float = 0.0
    hold_duration_s: float = 2.0
    sweep_start_V: float = 0.0
    sweep_end_V: float = -4.0
    step_V: float = -0.05
    dwell_s_per_step: float = 0.1
    photon_rate_per_s_um2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.step_V == 0 or not math.isfinite(self.step_V):
            raise ValueError("step_V must be finite and nonzero")
        span = self.sweep_end_V - self.sweep_start_V
        if span != 0 and math.copysign(1.0, span) != math.copysign(1.0, self.step_V):
            raise ValueError("step_V sign must match the start -> end direction")
        if not self.dwell_s_per_step > 0:
            raise ValueError("dwell_s_per_step must be positive")
        if self.hold_duration_s < 0:
            raise ValueError("hold_duration_s must be non-negative")
        if self.photon_rate_per_s_um2 < 0:
            raise ValueError("photon rate must be non-negative")

    @property
    def direction(self):
        return "reverse" if self.step_V < 0 else "forward"

    def biases(self):
        """Bias points from start to end (end included when it lies on the step grid)."""
        n = int(math.floor((self.sweep_end_V - self.sweep_start_V) / self.step_V + 1e-9))
        return np.round(self.sweep_start_V + self.step_V * np.arange(n + 1), 12)


def equilibrium_charge(former_bias_V, hold_duration_s, params=None, *,
                       electrons_per_dot_max=6.0, areal_density_cm2=5.7e10):
    """Occupancy left in the dots after holding ``former_bias_V`` for ``hold_duration_s``.

    The response saturates as ``x / (1 + x)`` with
    ``x = max(0, V) * charge_rate * hold``.  Reverse or zero bias leaves the
    dots empty.
    """
    if hold_duration_s < 0:
        raise ValueError("hold_duration_s must be non-negative")
    params = params or RateParams()
    x = max(0.0, float(former_bias_V)) * params.charge_rate_per_V_s * float(hold_duration_s)
    if math.isinf(x):
        frac = 1.0
    else:
        frac = x / (1.0 + x)
    occ = min(max(electrons_per_dot_max * frac, 0.0), electrons_per_dot_max)
    return QDChargeState(occ, electrons_per_dot_max, areal_density_cm2)


def evolve_charge(state, dt_s, hole_capture_rate_per_s, params=None, recharge_rate_per_s=0.0):
    """Advance the mean occupancy by ``dt_s`` with the exact linear solution.

    Integrates ``dn/dt = g (1 - n/n_max) - r theta(n > 0) - n / tau_storage``
    where ``r`` is the hole capture rate per dot and ``g`` an optional
    recharge rate per dot.  Each captured hole removes one electron.  Once
    the dots are empty and ``g <= r`` they stay empty.
    """
    if not dt_s > 0:
        raise ValueError("dt_s must be positive")
    r = float(hole_capture_rate_per_s)
    g = float(recharge_rate_per_s)
    if r < 0 or g < 0:
        raise ValueError("rates must be non-negative")
    params = params or RateParams()
    nmax = state.electrons_per_dot_max
    n0 = state.occupancy
    inv_tau = 0.0 if math.isinf(params.tau_storage_s) else 1.0 / params.tau_storage_s

    def _linear(n_start, a, b, t):
        # solution of dn/dt = a - b n
        if b == 0.0:
            return n_start + a * t
        n_star = a / b
        return n_star + (n_start - n_star) * math.exp(-b * t)

    a = g - r
    b = g / nmax + inv_tau
    # a negative value means the dots emptied inside the step (only possible when g < r)
    n1 = min(max(_linear(n0, a, b, dt_s), 0.0), nmax)
    return replace(state, occupancy=n1)


def photon_arrivals(rate_per_s_um2, area_um2, duration_s, seed=None):
    """Poisson arrival times of photons on the device."""
    if rate_per_s_um2 < 0 or area_um2 < 0 or duration_s < 0:
        raise ValueError("rate, area and duration must be non-negative")
    rng = np.random.default_rng(seed)
    lam = rate_per_s_um2 * area_um2 * duration_s
    count = int(rng.poisson(lam)) if lam > 0 else 0
    times = np.sort(rng.uniform(0.0, duration_s, count)) if count else np.zeros(0)
    return PhotonStream(rate_per_s_um2, area_um2, duration_s, seed, times)


def hole_capture_rate_per_dot(photon_rate_per_s_um2, stack, params=None):
    """Mean captured holes per dot per second for a given photon flux."""
    params = params or RateParams()
    if stack.qd_sheet is None:
        return 0.0
    n_dots = stack.qd_sheet.areal_density_cm2 * stack.area_um2 * 1e-8
    return photon_rate_per_s_um2 * stack.area_um2 * params.efficiency / n_dots


@dataclass(frozen=True)
class MultiplicationReport:
    photocurrent_A: float
    photon_rate_per_s: float
    efficiency: float
    M_external: float
    M_internal: float
    stated_M: float = STATED_MULTIPLICATION

    def to_text(self):
        ratio = self.M_external / self.stated_M if self.stated_M else math.nan
        lines = [
            f"photocurrent_A: {self.photocurrent_A!r}",
            f"photon_rate_per_s: {self.photon_rate_per_s!r}",
            f"efficiency: {self.efficiency!r}",
            f"M_external: {self.M_external:.6e}",
            f"M_internal: {self.M_internal:.6e}",
            f"stated_M: {self.stated_M:.0e}",
            f"M_external_over_stated: {ratio:.2f}",
        ]
        return "\n".join(lines) + "\n"


def multiplication_factor(photocurrent_A, photon_rate_per_s, efficiency=1.0):
    """Electrons collected per incident photon (external) and per absorbed-and-captured photon.

    Returns a :class:`MultiplicationReport` carrying both factors, the inputs
    and the quoted reference value for comparison.
    """
    if photon_rate_per_s == 0:
        raise ZeroDivisionError("photon rate is zero: multiplication factor undefined")
    if photon_rate_per_s < 0:
        raise ValueError("photon rate must be positive")
    if not 0 < efficiency <= 1:
        raise ValueError("efficiency must lie in (0, 1]")
    m_ext = abs(photocurrent_A) / (Q * photon_rate_per_s)
    return MultiplicationReport(
        float(photocurrent_A), float(photon_rate_per_s), float(efficiency), m_ext, m_ext / efficiency
    )


def _child_seeds(seed, n):
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


def photoresponse_sweep(stack, base_protocol, photon_rates, options=None, params=None):
    """One reverse sweep per photon rate, same former bias, derived seeds.

    A rate of zero reuses the base seed so it reproduces the dark sweep.
    """
    from .transport import iv_sweep

    rates = [float(r) for r in photon_rates]
    if any(r < 0 for r in rates):
        raise ValueError("photon rates must be non-negative")
    seeds = _child_seeds(base_protocol.seed, len(rates))
    curves = []
    for rate, child in sorted(zip(rates, seeds), key=lambda p: p[0]):
        seed = base_protocol.seed if rate == 0 else child
        proto = replace(base_protocol, photon_rate_per_s_um2=rate, seed=seed)
        curves.append(iv_sweep(stack, proto, options=options, params=params))
    return curves


def photoresponse_gain(dark, lit, stack, params=None, peak_label="A"):
    """Peak-A photocurrent and gain figures from a dark and an illuminated sweep.

    Returns a dict with ``delta_I_A``, ``M_external`` (per incident photon),
    ``gain_per_hole`` (per captured hole) and the bias of each peak.
    """
    from .transport import detect_peaks

    params = params or RateParams()
    pd = detect_peaks(dark).get(peak_label)
    pl = detect_peaks(lit).get(peak_label)
    if pd is None or pl is None:
        raise ValueError(f"peak {peak_label} missing in one of the curves")
    rate = float(lit.meta["photon_rate_per_s_um2"])
    photons = rate * stack.area_um2
    delta = abs(pl.current_A) - abs(pd.current_A)
    captures = photons * params.efficiency
    return {
        "delta_I_A": delta,
        "photon_rate_per_s": photons,
        "M_external": delta / (Q * photons) if photons > 0 else math.nan,
        "gain_per_hole": delta / (Q * captures) if captures > 0 else math.nan,
        "dark_peak_V": pd.bias_V,
        "lit_peak_V": pl.bias_V,
    }


def write_photoresponse_family(curves, output_dir, prefix="photoresponse"):
    """Write one IV CSV per curve plus ``<prefix>_manifest.csv``; returns the manifest path."""
    os.makedirs(output_dir, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["photon_rate_per_s_um2", "filename"])
    for curve in curves:
        rate = float(curve.meta["photon_rate_per_s_um2"])
        name = f"{prefix}_rate_{rate:g}.csv"
        with open(os.path.join(output_dir, name), "w", newline="") as fh:
            fh.write(curve.to_csv())
        w.writerow([repr(rate), name])
    path = os.path.join(output_dir, f"{prefix}_manifest.csv")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
    return path
