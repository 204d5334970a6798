"""scikit-learn style wrapper around the two-path I-V model."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dynamics import RateParams, equilibrium_charge
from .electrostatics import SCOptions
from .structure import DeviceStack, build_paper_stack, build_symmetric_stack
from .transport import TransportOptions, path_currents

__all__ = ["QDRTDModel"]

_BUILTIN = {"paper": build_paper_stack, "symmetric": build_symmetric_stack}


class QDRTDModel(RegressorMixin, BaseEstimator):
    """Current of a charged-dot RTD as a function of bias.

    ``fit`` resolves the stack and the stored dot charge; there is nothing
    to learn from data, so ``X`` and ``y`` are only validated.  ``predict``
    maps a column of biases (V) to currents (A).

    Parameters
    ----------
    stack : {"paper", "symmetric"} or DeviceStack
    former_bias_V, hold_duration_s : float
        Charging history used when ``occupancy`` is None.
    occupancy : float, optional
        Electrons per dot, overriding the charging history.
    qd_blocking : bool
    profile_mode : {"self_consistent", "linear"}
    max_spacing_nm : float
    """

    def __init__(self, stack="paper", former_bias_V=0.0, hold_duration_s=2.0, occupancy=None,
                 qd_blocking=True, profile_mode="self_consistent", max_spacing_nm=0.25):
        self.stack = stack
        self.former_bias_V = former_bias_V
        self.hold_duration_s = hold_duration_s
        self.occupancy = occupancy
        self.qd_blocking = qd_blocking
        self.profile_mode = profile_mode
        self.max_spacing_nm = max_spacing_nm

    def _resolve_stack(self):
        if isinstance(self.stack, DeviceStack):
            return self.stack
        if self.stack in _BUILTIN:
            return _BUILTIN[self.stack]()
        raise ValueError(f"unknown stack {self.stack!r}")

    def fit(self, X=None, y=None):
        if X is not None:
            X = check_array(X, ensure_min_features=1)
            if X.shape[1] != 1:
                raise ValueError("X must have a single bias column")
        self.stack_ = self._resolve_stack()
        sheet = self.stack_.qd_sheet
        if sheet is None:
            self.occupancy_ = 0.0
        elif self.occupancy is not None:
            if not 0.0 <= self.occupancy <= sheet.electrons_per_dot_max:
                raise ValueError("occupancy outside [0, electrons_per_dot_max]")
            self.occupancy_ = float(self.occupancy)
        else:
            self.occupancy_ = equilibrium_charge(
                self.former_bias_V, self.hold_duration_s, RateParams(),
                electrons_per_dot_max=sheet.electrons_per_dot_max,
            ).occupancy
        self.options_ = TransportOptions(
            qd_blocking=self.qd_blocking,
            profile_mode=self.profile_mode,
            sc=SCOptions(max_spacing_nm=self.max_spacing_nm),
        )
        self.n_features_in_ = 1
        return self

    def predict_paths(self, X):
        """``(n, 3)`` array of total, Path_RTD and Path_QD-RTD currents (A)."""
        check_is_fitted(self, "stack_")
        X = check_array(X)
        if X.shape[1] != 1:
            raise ValueError("X must have a single bias column")
        bias = X[:, 0]
        out = np.zeros((bias.size, 3))
        phi = None
        # sweep outward from zero so each solve warm-starts the next
        order = np.argsort(np.abs(bias), kind="stable")
        for k in order:
            res = path_currents(self.stack_, float(bias[k]), self.occupancy_, self.options_,
                                initial_phi=phi)
            phi = res.diagram.phi_V
            out[k] = res.total_A, res.rtd_A, res.qd_A
        return out

    def predict(self, X):
        return self.predict_paths(X)[:, 0]
