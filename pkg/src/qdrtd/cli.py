"""Command-line interface: ``qdrtd <subcommand> [options]``.

Every subcommand writes CSV files into the output directory (``--output-dir``,
else ``$QDRTD_OUTPUT_DIR``, else the current directory) and prints one line
per artifact.  Exit codes: 0 ok, 2 configuration error, 3 convergence
error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import ast
import dataclasses
import os
import re
import sys

from . import dynamics, materials, quantum, structure, transport
from .dynamics import RateParams, SweepProtocol
from .electrostatics import (
    ConvergenceError,
    SCOptions,
    band_diagram_to_csv,
    self_consistent_band_diagram,
)
from .quantum import RefinePolicy
from .structure import StackParseError

__all__ = ["main", "run", "parse_stack_config", "apply_overrides", "RunConfig", "ConfigError"]

OUTPUT_ENV = "QDRTD_OUTPUT_DIR"

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

SUBCOMMANDS = (
    "materials", "band-diagram", "transmission", "iv",
    "memory-sweep", "photoresponse", "peaks", "multiplication",
)

IV_SCHEMA = "bias_V,current_A,qd_occupancy,path_rtd_A,path_qd_A (metadata as '# key: value' lines)"
PEAK_SCHEMA = "label,bias_V,current_A"


class ConfigError(ValueError):
    """Invalid command-line configuration."""


@dataclasses.dataclass
class RunConfig:
    stack_source: str = "paper"
    subcommand: str = "iv"
    output_dir: str = "."
    overrides: list = dataclasses.field(default_factory=list)
    seed: int = 0
    plot: bool = False


def parse_stack_config(text):
    """Parse the stack text format; see :func:`qdrtd.structure.parse_stack_text`."""
    return structure.parse_stack_text(text)


def _load_stack(source):
    if source == "paper":
        return structure.build_paper_stack()
    if source == "symmetric":
        return structure.build_symmetric_stack()
    try:
        with open(source) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"stack file {source!r} not found") from None
    return parse_stack_config(text)


# ---------------------------------------------------------------------------
# dotted overrides

_SECTIONS = {
    "quantum": RefinePolicy,
    "electrostatics": SCOptions,
    "transport": transport.TransportOptions,
    "dynamics": RateParams,
    "protocol": SweepProtocol,
}
_EXCLUDED = {"weight", "refine", "sc", "window", "boundary_V"}
_ALIASES = {"quantum.grid_nm": "electrostatics.max_spacing_nm"}


def _parse_value(text):
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("inf", "+inf", "-inf"):
        return float(low)
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def apply_overrides(pairs):
    """Turn ``["section.key=value", ...]`` into per-section keyword dicts.

    Unknown sections or keys raise :class:`ConfigError`.
    """
    out = {name: {} for name in _SECTIONS}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key = _ALIASES.get(key, key)
        section, dot, name = key.partition(".")
        if not dot or section not in _SECTIONS:
            raise ConfigError(f"unknown override section in {key!r}; expected one of {sorted(_SECTIONS)}")
        fields = {f.name for f in dataclasses.fields(_SECTIONS[section])} - _EXCLUDED
        if name not in fields:
            raise ConfigError(f"unknown override key {key!r}; valid keys: {sorted(fields)}")
        out[section][name] = _parse_value(raw)
    return out


class _Settings:
    def __init__(self, overrides):
        ov = apply_overrides(overrides)
        try:
            self.refine = RefinePolicy(**ov["quantum"])
            self.sc = SCOptions(**ov["electrostatics"])
            self.transport = transport.TransportOptions(refine=self.refine, sc=self.sc, **ov["transport"])
            self.rate = RateParams(**ov["dynamics"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid override value: {exc}") from None
        self.protocol = ov["protocol"]

    def protocol_for(self, **kwargs):
        merged = {**kwargs, **self.protocol}
        try:
            return SweepProtocol(**merged)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid sweep protocol: {exc}") from None


# ---------------------------------------------------------------------------
# helpers


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _range(text):
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"range must be start:end, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must be numeric, got {text!r}") from None


def _sweep_kwargs(args, former_bias):
    start, end = args.range
    step = abs(args.step) if end >= start else -abs(args.step)
    return dict(former_bias_V=former_bias, sweep_start_V=start, sweep_end_V=end, step_V=step,
                photon_rate_per_s_um2=getattr(args, "photon_rate", 0.0), seed=args.seed)


def _tag(x):
    return f"{x:+g}".replace("+", "p").replace("-", "m")


class _Writer:
    def __init__(self, output_dir):
        self.output_dir = output_dir

    def path(self, name):
        return os.path.join(self.output_dir, name)

    def write(self, name, text, summary=""):
        os.makedirs(self.output_dir, exist_ok=True)
        path = self.path(name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        print(f"wrote {path}" + (f"  {summary}" if summary else ""))
        return path


def _plot_iv(curves, labels, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for c, lab in zip(curves, labels):
        ax.plot(c.bias_V, c.current_A * 1e9, label=lab)
    ax.set_xlabel("bias (V)")
    ax.set_ylabel("current (nA)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    print(f"wrote {path}")


def _plot_xy(x, ys, labels, xlabel, ylabel, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for y, lab in zip(ys, labels):
        ax.plot(x, y, label=lab)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(ys) > 1:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    print(f"wrote {path}")


def _sweep(stack, proto, settings, writer, name):
    try:
        return transport.iv_sweep(stack, proto, options=settings.transport, params=settings.rate)
    except transport.SweepError as exc:
        if exc.partial is not None:
            writer.write(name + ".partial", exc.partial.to_csv(), f"({len(exc.partial)} points before failure)")
        raise


# ---------------------------------------------------------------------------
# subcommands


def _cmd_materials(args, settings, writer):
    text = materials.dump_materials_csv(tuple(args.temperature))
    if args.dump:
        sys.stdout.write(text)
    writer.write("materials.csv", text, f"({len(args.temperature)} temperatures)")


def _cmd_band_diagram(args, settings, writer):
    stack = _load_stack(args.stack)
    if stack.qd_sheet is None and (args.with_dots or args.occupancy):
        raise ConfigError("stack has no QD sheet")
    variants = []
    if args.with_dots:
        occ = args.occupancy if args.occupancy is not None else stack.qd_sheet.electrons_per_dot_max
        variants.append(("with_dots", occ))
    if args.without_dots or not variants:
        variants.append(("without_dots", 0.0))
    results = []
    for label, occ in variants:
        bd = self_consistent_band_diagram(stack, args.bias, occ, settings.sc)
        extra = ""
        if stack.qd_sheet is not None and bd.grid.qd_node_index is not None:
            extra = f"Ec(QD node)={bd.qd_potential_eV:.6f} eV"
        name = f"band_diagram_{_tag(args.bias)}V_{label}.csv"
        writer.write(name, band_diagram_to_csv(bd), f"occupancy={occ:g} iterations={bd.iterations} {extra}")
        results.append((label, bd))
    if args.plot:
        z = results[0][1].profile.positions_nm
        _plot_xy(z, [bd.profile.potential_eV for _, bd in results], [lab for lab, _ in results],
                 "position (nm)", "Ec (eV)", writer.path(f"band_diagram_{_tag(args.bias)}V.svg"))


def _cmd_transmission(args, settings, writer):
    stack = _load_stack(args.stack)
    bd = self_consistent_band_diagram(stack, args.bias, args.occupancy, settings.sc)
    profiles = transport.path_profiles(stack, bd, settings.transport)
    if args.path not in profiles:
        raise ConfigError(f"path {args.path!r} unavailable for this stack")
    prof = profiles[args.path]
    lo = max(prof.interval_potential_eV[0], prof.interval_potential_eV[-1]) + 1e-9
    emin = lo if args.emin is None else args.emin
    emax = lo + 0.5 if args.emax is None else args.emax
    if not emax > emin:
        raise ConfigError("emax must exceed emin")
    import numpy as np

    spectrum = quantum.transmission(prof, np.linspace(emin, emax, args.points), settings.refine)
    res = ", ".join(f"{c:.6f}" for c, _ in spectrum.resonances[:4])
    name = f"transmission_{args.path}_{_tag(args.bias)}V.csv"
    writer.write(name, quantum.spectrum_to_csv(spectrum), f"({spectrum.energies_eV.size} energies; resonances at {res} eV)")
    if args.plot:
        _plot_xy(spectrum.energies_eV, [np.log10(np.maximum(spectrum.transmission, 1e-300))], ["T"],
                 "energy (eV)", "log10 T", writer.path(name[:-4] + ".svg"))


def _cmd_iv(args, settings, writer):
    stack = _load_stack(args.stack)
    proto = settings.protocol_for(**_sweep_kwargs(args, args.former_bias))
    base = f"iv_former_{_tag(args.former_bias)}V"
    curve = _sweep(stack, proto, settings, writer, base + ".csv")
    peaks = transport.detect_peaks(curve)
    writer.write(base + ".csv", curve.to_csv(), f"({len(curve)} points)")
    writer.write(base + "_peaks.csv", peaks.to_csv(), " ".join(f"{p.label}@{p.bias_V:+.2f}V" for p in peaks.peaks))
    if args.plot:
        _plot_iv([curve], [f"former {args.former_bias:+g} V"], writer.path(base + ".svg"))


def _cmd_memory_sweep(args, settings, writer):
    stack = _load_stack(args.stack)
    curves, rows = [], ["former_bias_V,label,bias_V,current_A"]
    for fb in args.former_bias:
        proto = settings.protocol_for(**_sweep_kwargs(args, fb))
        name = f"memory_former_{_tag(fb)}V.csv"
        curve = _sweep(stack, proto, settings, writer, name)
        peaks = transport.detect_peaks(curve)
        writer.write(name, curve.to_csv(), f"occupancy={curve.qd_occupancy[0]:.4f} " +
                     " ".join(f"{p.label}@{p.bias_V:+.2f}V" for p in peaks.peaks))
        for p in peaks.peaks:
            rows.append(f"{fb!r},{p.label},{p.bias_V!r},{p.current_A!r}")
        curves.append(curve)
    writer.write("memory_peaks.csv", "\n".join(rows) + "\n")
    if args.plot:
        _plot_iv(curves, [f"former {fb:+g} V" for fb in args.former_bias], writer.path("memory_sweep.svg"))


def _cmd_photoresponse(args, settings, writer):
    stack = _load_stack(args.stack)
    proto = settings.protocol_for(**_sweep_kwargs(args, args.former_bias))
    try:
        curves = dynamics.photoresponse_sweep(stack, proto, args.rates, settings.transport, settings.rate)
    except transport.SweepError as exc:
        if exc.partial is not None:
            writer.write("photoresponse.partial", exc.partial.to_csv())
        raise
    manifest = dynamics.write_photoresponse_family(curves, writer.output_dir)
    print(f"wrote {manifest}  ({len(curves)} curves)")
    rows = ["photon_rate_per_s_um2,peakA_bias_V,peakA_current_A,delta_I_A,M_external,gain_per_hole"]
    dark = curves[0]
    for c in curves:
        pa = transport.detect_peaks(c).get("A")
        if pa is None:
            rows.append(f"{c.meta['photon_rate_per_s_um2']},nan,nan,nan,nan,nan")
            continue
        if float(c.meta["photon_rate_per_s_um2"]) > 0 and float(dark.meta["photon_rate_per_s_um2"]) == 0:
            g = dynamics.photoresponse_gain(dark, c, stack, settings.rate)
            tail = f"{g['delta_I_A']!r},{g['M_external']!r},{g['gain_per_hole']!r}"
        else:
            tail = "0.0,nan,nan"
        rows.append(f"{c.meta['photon_rate_per_s_um2']},{pa.bias_V!r},{pa.current_A!r},{tail}")
    writer.write("photoresponse_summary.csv", "\n".join(rows) + "\n")
    if args.plot:
        _plot_iv(curves, [f"{float(c.meta['photon_rate_per_s_um2']):g} /s/um2" for c in curves],
                 writer.path("photoresponse.svg"))


def _cmd_peaks(args, settings, writer):
    try:
        with open(args.input) as fh:
            curve = transport.IVCurve.from_csv(fh.read())
    except FileNotFoundError:
        raise OSError(f"cannot read {args.input!r}") from None
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed IV CSV {args.input!r}: {exc}") from None
    peaks = transport.detect_peaks(curve, args.prominence, relative_floor=args.relative_floor)
    stem = os.path.splitext(os.path.basename(args.input))[0]
    writer.write(f"{stem}_peaks.csv", peaks.to_csv(), " ".join(f"{p.label}@{p.bias_V:+.2f}V" for p in peaks.peaks))


def _cmd_multiplication(args, settings, writer):
    try:
        rep = dynamics.multiplication_factor(args.photocurrent, args.rate, args.efficiency)
    except ZeroDivisionError as exc:
        raise ConfigError(str(exc)) from None
    text = rep.to_text()
    sys.stdout.write(text)
    writer.write("multiplication.txt", text)


_DISPATCH = {
    "materials": _cmd_materials,
    "band-diagram": _cmd_band_diagram,
    "transmission": _cmd_transmission,
    "iv": _cmd_iv,
    "memory-sweep": _cmd_memory_sweep,
    "photoresponse": _cmd_photoresponse,
    "peaks": _cmd_peaks,
    "multiplication": _cmd_multiplication,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default=None,
                        help=f"output directory (default ${OUTPUT_ENV} or the current directory)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override, e.g. electrostatics.tolerance_eV=1e-7 or dynamics.tau_recomb_s=1e-6 "
                             f"(sections: {', '.join(sorted(_SECTIONS))}; quantum.grid_nm aliases the grid spacing)")
    common.add_argument("--seed", type=int, default=0, help="RNG seed (all randomness derives from it)")
    common.add_argument("--plot", action="store_true", help="also write SVG plots of the CSV data")

    stack_p = argparse.ArgumentParser(add_help=False)
    stack_p.add_argument("--stack", default="paper",
                         help="stack file, or builtin 'paper' / 'symmetric' (default paper)")

    sweep_p = argparse.ArgumentParser(add_help=False)
    sweep_p.add_argument("--range", type=_range, default=(0.0, -4.0), help="start:end bias in V (default 0:-4)")
    sweep_p.add_argument("--step", type=float, default=0.05, help="bias step magnitude in V (default 0.05)")

    parser = argparse.ArgumentParser(prog="qdrtd", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("materials", parents=[common], help="material parameter table",
                       epilog="CSV: name,T,cb_offset_eV,m_eff,eps_rel,band_gap_eV")
    p.add_argument("--temperature", type=_float_list, default=[77.0, 300.0])
    p.add_argument("--dump", action="store_true", help="also print the CSV to stdout")

    p = sub.add_parser("band-diagram", parents=[common, stack_p], help="self-consistent band diagram",
                       epilog="CSV: position_nm,Ec_eV,electron_density_cm3")
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--with-dots", action="store_true", help="dots charged to --occupancy (default n_max)")
    p.add_argument("--without-dots", action="store_true", help="dots without stored electrons")
    p.add_argument("--occupancy", type=float, default=None)

    p = sub.add_parser("transmission", parents=[common, stack_p], help="transmission spectrum of one path",
                       epilog="CSV: energy_eV,T")
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--occupancy", type=float, default=0.0)
    p.add_argument("--path", choices=("rtd", "qd"), default="rtd")
    p.add_argument("--emin", type=float, default=None)
    p.add_argument("--emax", type=float, default=None)
    p.add_argument("--points", type=int, default=400)

    p = sub.add_parser("iv", parents=[common, stack_p, sweep_p], help="one I-V sweep",
                       epilog=f"CSV: {IV_SCHEMA}; peaks CSV: {PEAK_SCHEMA}")
    p.add_argument("--former-bias", type=float, default=0.0)
    p.add_argument("--photon-rate", type=float, default=0.0, help="photons per s per um^2")

    p = sub.add_parser("memory-sweep", parents=[common, stack_p, sweep_p],
                       help="dark reverse sweeps after several former biases",
                       epilog=f"CSV per former bias: {IV_SCHEMA}; memory_peaks.csv: former_bias_V,{PEAK_SCHEMA}")
    p.add_argument("--former-bias", type=_float_list, default=[-4.0, 0.0, 2.0, 4.0])

    p = sub.add_parser("photoresponse", parents=[common, stack_p, sweep_p],
                       help="reverse sweeps at several photon rates",
                       epilog=f"CSV per rate: {IV_SCHEMA}; manifest: photon_rate_per_s_um2,filename; "
                              "summary: photon_rate_per_s_um2,peakA_bias_V,peakA_current_A,delta_I_A,"
                              "M_external,gain_per_hole")
    p.add_argument("--rates", type=_float_list, default=[0.0, 6.0, 12.0, 23.0])
    p.add_argument("--former-bias", type=float, default=4.0)
    p.set_defaults(range=(0.0, -2.0))

    p = sub.add_parser("peaks", parents=[common], help="peak detection on an IV CSV",
                       epilog=f"CSV: {PEAK_SCHEMA}")
    p.add_argument("--input", required=True)
    p.add_argument("--prominence", type=float, default=None, help="absolute prominence floor (A)")
    p.add_argument("--relative-floor", type=float, default=1e-3)

    p = sub.add_parser("multiplication", parents=[common], help="carrier multiplication report",
                       epilog="text: photocurrent_A, photon_rate_per_s, efficiency, M_external, M_internal, "
                              "stated_M, M_external_over_stated")
    p.add_argument("--photocurrent", type=float, required=True, help="photocurrent in A")
    p.add_argument("--rate", type=float, required=True, help="photons per second on the device")
    p.add_argument("--efficiency", type=float, default=1.0, help="absorption x capture efficiency")
    return parser


def run(config, args):
    """Execute ``config.subcommand``; returns an exit code."""
    writer = _Writer(config.output_dir)
    try:
        settings = _Settings(config.overrides)
        _DISPATCH[config.subcommand](args, settings, writer)
    except (ConfigError, StackParseError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, transport.SweepError, transport.PathError) as exc:
        cause = exc
        while cause.__cause__ is not None and not isinstance(cause, ConvergenceError):
            cause = cause.__cause__
        if isinstance(cause, ConvergenceError):
            print(f"error[convergence]: {exc}", file=sys.stderr)
            return EXIT_CONVERGENCE
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


_NEGATIVE_LIST = re.compile(r"^-\.?\d[\d.,:eE+-]*$")


def _join_negative_values(argv):
    """``--former-bias -4,-2`` -> ``--former-bias=-4,-2`` (argparse would read a flag)."""
    out = []
    for tok in argv:
        if out and _NEGATIVE_LIST.match(tok) and out[-1].startswith("--") and "=" not in out[-1]:
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_join_negative_values(argv))
    output_dir = args.output_dir or os.environ.get(OUTPUT_ENV) or "."
    config = RunConfig(
        stack_source=getattr(args, "stack", "paper"),
        subcommand=args.subcommand,
        output_dir=output_dir,
        overrides=list(args.overrides),
        seed=args.seed,
        plot=args.plot,
    )
    return run(config, args)


if __name__ == "__main__":
    sys.exit(main())
