import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdrtd.dynamics import SweepProtocol
from qdrtd.electrostatics import SCOptions, self_consistent_band_diagram
from qdrtd.quantum import TransmissionSpectrum, transmission
from qdrtd.structure import build_paper_stack, build_symmetric_stack
from qdrtd.transport import (
    IVCurve,
    PathError,
    SpectrumCoverageError,
    SweepError,
    TransportOptions,
    detect_peaks,
    iv_sweep,
    path_currents,
    path_profiles,
    supply_function,
    supply_support,
    tsu_esaki_current,
    two_path_current,
)


@pytest.fixture(scope="module")
def sym():
    return build_symmetric_stack()


@pytest.fixture(scope="module")
def sym_diagram(sym):
    return self_consistent_band_diagram(sym, 0.3)


def rtd_spectrum(sym, diagram):
    prof = path_profiles(sym, diagram)["rtd"]
    edge = max(prof.interval_potential_eV[0], prof.interval_potential_eV[-1])
    mu_t, mu_b = diagram.fermi_level_eV
    hi = supply_support(edge, mu_t, mu_b, sym.temperature_K)
    return prof, edge, transmission(prof, np.linspace(edge + 1e-9, hi, 400))


def test_supply_function_signs():
    assert supply_function(0.1, 0.0, 0.0, 77.0) == 0.0
    assert supply_function(0.0, 0.0, 0.2, 77.0) > 0
    assert supply_function(0.0, 0.2, 0.0, 77.0) < 0


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.3, 0.1), st.floats(-0.5, 0.5))
def test_supply_support_ratio(edge, bias):
    if abs(bias) < 1e-6:
        return
    hi = supply_support(edge, 0.0, bias, 77.0)
    s0 = abs(supply_function(edge, 0.0, bias, 77.0))
    assert abs(supply_function(hi, 0.0, bias, 77.0)) == pytest.approx(1e-12 * s0, rel=1e-6)
    assert abs(supply_function(hi + 0.01, 0.0, bias, 77.0)) < 1e-12 * s0


def test_zero_bias_is_zero(sym):
    d = self_consistent_band_diagram(sym, 0.0)
    spectrum = TransmissionSpectrum(np.linspace(0, 1, 5), np.ones(5))
    assert tsu_esaki_current(d, spectrum, 0.0, 5.0, 77.0) == 0.0


def test_area_linear(sym, sym_diagram):
    _, edge, spectrum = rtd_spectrum(sym, sym_diagram)
    i1 = tsu_esaki_current(sym_diagram, spectrum, 0.3, 5.0, 77.0, band_edge_eV=edge)
    i2 = tsu_esaki_current(sym_diagram, spectrum, 0.3, 10.0, 77.0, band_edge_eV=edge)
    assert i1 != 0 and i2 == 2 * i1


def test_coverage_error_names_range(sym, sym_diagram):
    _, edge, spectrum = rtd_spectrum(sym, sym_diagram)
    short = TransmissionSpectrum(spectrum.energies_eV[:50], spectrum.transmission[:50])
    with pytest.raises(SpectrumCoverageError, match=r"\[.*\] eV"):
        tsu_esaki_current(sym_diagram, short, 0.3, 5.0, 77.0, band_edge_eV=edge)


def test_bias_must_match_diagram(sym, sym_diagram):
    _, edge, spectrum = rtd_spectrum(sym, sym_diagram)
    with pytest.raises(ValueError):
        tsu_esaki_current(sym_diagram, spectrum, 0.2, 5.0, 77.0, band_edge_eV=edge)


def test_zero_area_fraction_is_pure_rtd():
    stack = build_paper_stack()
    stack = dataclasses.replace(stack, qd_sheet=dataclasses.replace(stack.qd_sheet, area_fraction=0.0))
    res = path_currents(stack, -0.7, 0.0)
    assert res.qd_A == 0.0 and res.total_A == res.rtd_A


def test_charged_dots_suppress_qd_path(paper_stack):
    empty = path_currents(paper_stack, -0.7, 0.0)
    full = path_currents(paper_stack, -0.7, 6.0)
    assert abs(full.qd_A) < abs(empty.qd_A)
    # electrostatic push-up alone also suppresses the dot path
    opts = TransportOptions(qd_blocking=False)
    assert abs(path_currents(paper_stack, -0.7, 3.0, opts).qd_A) < abs(path_currents(paper_stack, -0.7, 0.0, opts).qd_A)


def test_reverse_current_sign(paper_stack):
    assert two_path_current(paper_stack, -0.5, 0.0) < 0


def test_rtd_peak_moves_with_charge(paper_stack):
    biases = np.round(np.arange(-1.1, -1.66, -0.05), 3)

    def rtd_peak(occ):
        phi, cur = None, []
        for v in biases:
            r = path_currents(paper_stack, float(v), occ, initial_phi=phi)
            phi = r.diagram.phi_V
            cur.append(abs(r.rtd_A))
        return biases[int(np.argmax(cur))]

    assert abs(rtd_peak(6.0)) > abs(rtd_peak(0.0))


def test_mirror_antisymmetry(sym):
    for v in (0.2, 0.7):
        assert two_path_current(sym, v) == pytest.approx(-two_path_current(sym, -v), rel=1e-4)


def test_linear_mode_runs(paper_stack):
    opts = TransportOptions(profile_mode="linear")
    res = path_currents(paper_stack, -0.8, 1.0, opts)
    assert res.diagram.iterations == 0 and res.total_A < 0


def test_bad_options():
    with pytest.raises(ValueError):
        TransportOptions(profile_mode="magic")
    with pytest.raises(ValueError):
        TransportOptions(energy_points=2)


def test_path_error_identifies_path(paper_stack, monkeypatch):
    from qdrtd import transport

    real = transport._profile_current
    calls = []

    def flaky(profile, *args):
        calls.append(profile)
        if len(calls) == 2:
            raise FloatingPointError("boom")
        return real(profile, *args)

    monkeypatch.setattr(transport, "_profile_current", flaky)
    with pytest.raises(PathError) as exc:
        path_currents(paper_stack, -0.5, 0.0)
    assert exc.value.path == "Path_QD-RTD"
    assert "boom" in str(exc.value)


def test_sweep_meta_and_dark_identity(paper_stack):
    proto = SweepProtocol(former_bias_V=2.0, sweep_start_V=0.0, sweep_end_V=-0.2, step_V=-0.1)
    opts = TransportOptions(profile_mode="linear")
    dark = iv_sweep(paper_stack, proto, opts)
    lit0 = iv_sweep(paper_stack, dataclasses.replace(proto, photon_rate_per_s_um2=0.0), opts)
    assert dark.to_csv() == lit0.to_csv()
    assert dark.meta["direction"] == "reverse"
    assert float(dark.meta["former_bias_V"]) == 2.0
    assert np.all(dark.qd_occupancy == dark.qd_occupancy[0]) and dark.qd_occupancy[0] > 0
    assert list(dark.bias_V) == [0.0, -0.1, -0.2]


def test_illumination_discharges(paper_stack):
    proto = SweepProtocol(former_bias_V=4.0, sweep_start_V=0.0, sweep_end_V=-0.3, step_V=-0.1,
                          photon_rate_per_s_um2=23.0)
    curve = iv_sweep(paper_stack, proto, TransportOptions(profile_mode="linear"))
    assert np.all(np.diff(curve.qd_occupancy) < 0)


def test_sweep_error_keeps_partial(sym):
    proto = SweepProtocol(sweep_start_V=4.9, sweep_end_V=5.1, step_V=0.1)
    with pytest.raises(SweepError) as exc:
        iv_sweep(sym, proto)
    assert len(exc.value.partial) == 2


def test_ivcurve_validation():
    with pytest.raises(ValueError):
        IVCurve([0, -1, -0.5], [0, 1, 2])
    with pytest.raises(ValueError):
        IVCurve([0, -1], [0, np.nan])


def test_ivcurve_csv_round_trip():
    c = IVCurve(np.array([0.0, -0.5, -1.0]), np.array([0.0, -1e-7, -3e-8]),
                meta={"direction": "reverse", "seed": "3"})
    text = c.to_csv()
    assert text.splitlines()[2] == "bias_V,current_A,qd_occupancy,path_rtd_A,path_qd_A"
    back = IVCurve.from_csv(text)
    assert back.to_csv() == text


def _synthetic(v, centres, heights, width=0.08):
    i = np.zeros_like(v)
    for c, h in zip(centres, heights):
        i += h * np.exp(-((v - c) / width) ** 2)
    return i


V = np.round(np.arange(3.0, -3.0001, -0.05), 10)


def test_monotone_has_no_peaks():
    assert len(detect_peaks(IVCurve(V, V * 1e-7))) == 0


def test_peak_labels():
    i = -_synthetic(V, [-1.7, -2.3], [0.6e-7, 1e-7]) + _synthetic(V, [2.5], [0.8e-7])
    peaks = detect_peaks(IVCurve(V, i))
    assert peaks.labels == ["B", "A", "C"]
    assert peaks.get("A").bias_V == pytest.approx(-1.7)
    assert peaks.get("B").bias_V == pytest.approx(-2.3)
    assert peaks.get("C").bias_V == pytest.approx(2.5)
    assert peaks.to_csv().splitlines()[0] == "label,bias_V,current_A"


def test_needs_three_points():
    with pytest.raises(ValueError):
        detect_peaks(IVCurve([0.0, -1.0], [0.0, 1.0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_noise_below_floor(seed):
    i = -_synthetic(V, [-1.7, -2.3], [0.6e-7, 1e-7])
    floor = 1e-9
    noise = np.random.default_rng(seed).uniform(-0.2, 0.2, V.size) * floor
    clean = detect_peaks(IVCurve(V, i), prominence_floor=floor)
    noisy = detect_peaks(IVCurve(V, i + noise), prominence_floor=floor)
    assert clean.labels == noisy.labels
    assert [p.bias_V for p in clean.peaks] == [p.bias_V for p in noisy.peaks]


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 1e6))
def test_scale_invariance(scale):
    i = -_synthetic(V, [-1.7, -2.3], [0.6e-7, 1e-7]) + _synthetic(V, [2.5], [0.8e-7])
    a = detect_peaks(IVCurve(V, i))
    b = detect_peaks(IVCurve(V, i * scale))
    assert [(p.label, p.bias_V) for p in a.peaks] == [(p.label, p.bias_V) for p in b.peaks]
