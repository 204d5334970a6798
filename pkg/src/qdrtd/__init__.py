"""One-dimensional simulator of a charged InAs-dot AlAs/GaAs/AlAs resonant tunnelling diode."""

from .dynamics import (
    PhotonStream,
    QDChargeState,
    RateParams,
    SweepProtocol,
    equilibrium_charge,
    evolve_charge,
    multiplication_factor,
    photon_arrivals,
    photoresponse_sweep,
)
from .electrostatics import BandDiagram, SCOptions, self_consistent_band_diagram, solve_poisson
from .materials import get_material
from .quantum import PotentialProfile, RefinePolicy, solve_bound_states, transmission
from .structure import (
    DeviceStack,
    Layer,
    QDSheet,
    build_paper_stack,
    build_symmetric_stack,
    discretize,
    format_stack_text,
    parse_stack_text,
)
from .transport import (
    IVCurve,
    PeakSet,
    TransportOptions,
    detect_peaks,
    iv_sweep,
    tsu_esaki_current,
    two_path_current,
)

__version__ = "0.1.0"


def __getattr__(name):
    # keep scikit-learn off the import path of the CLI
    if name == "QDRTDModel":
        from .estimator import QDRTDModel

        return QDRTDModel
    raise AttributeError(f"module 'qdrtd' has no attribute {name!r}")
