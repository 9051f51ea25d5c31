"""scikit-learn style wrappers around the reference fit and the capacity solve."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import capacity as cap
from .refsd import DEFAULT_NATIVE_DT, empirical_nd_sd, fit_arma21
from .spectra import BasisSet, SpectralDensity


class ARMA21Spectrum(BaseEstimator):
    """Fit an ARMA(2,1) density to a sampled series.

    Parameters
    ----------
    delta_t : float
        Sampling interval of the series in seconds.
    segment_length : int
        Points per averaged segment, which is also the grid size.
    n_starts : int
        Starts per coordinate of the multi-start search.
    """

    def __init__(self, delta_t=DEFAULT_NATIVE_DT, segment_length=512, n_starts=4):
        self.delta_t = delta_t
        self.segment_length = segment_length
        self.n_starts = n_starts

    def fit(self, X, y=None):
        x = check_array(np.asarray(X, dtype=float).reshape(-1, 1), ensure_min_samples=2).ravel()
        self.empirical_ = empirical_nd_sd(x, self.delta_t, self.segment_length)
        self.model_ = fit_arma21(self.empirical_, n_starts=self.n_starts)
        return self

    def predict(self, omega):
        """Model density at normalized frequencies ``omega`` (rad/sample)."""
        check_is_fitted(self, "model_")
        return self.model_.evaluate(omega)

    def score(self, X=None, y=None):
        """Negative RMS log residual of the fit."""
        check_is_fitted(self, "model_")
        return -float(self.model_.fit_residual)


class FlexibilityCapacity(BaseEstimator):
    """Capacity density for a reference density ``X``.

    Parameters
    ----------
    specs : list of QoSSpec
        Per-load QoS constraints.
    basis : BasisSet
    simulator : LoadSimulator
    mode : {"lti-model", "lti-data", "nonlinear-data"}
        Source of the constraint map.
    n_loads : int
        Ensemble size; bounds scale with its square.
    n_real, N, seed
        Monte-Carlo settings for data-driven modes.
    """

    def __init__(self, specs, basis, simulator, mode="lti-model", n_loads=1, n_real=50, N=2**14, seed=0, tol=1e-6):
        self.specs = specs
        self.basis = basis
        self.simulator = simulator
        self.mode = mode
        self.n_loads = n_loads
        self.n_real = n_real
        self.N = N
        self.seed = seed
        self.tol = tol

    def fit(self, X, y=None):
        if not isinstance(X, SpectralDensity):
            raise TypeError("X must be a SpectralDensity")
        if not isinstance(self.basis, BasisSet):
            raise TypeError("basis must be a BasisSet")
        channels = [s.channel for s in self.specs]
        if self.mode == "lti-model":
            cmap = cap.model_B(channels, self.simulator.disc, self.basis)
        elif self.mode in ("lti-data", "nonlinear-data"):
            cmap = cap.estimate_B_dd(self.simulator, channels, self.basis, self.n_real, self.N, self.seed)
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.constraint_map_ = cmap
        problem = cap.build_problem(self.basis, X, cmap, self.specs, self.n_loads)
        self.result_ = cap.solve_qp(problem, self.basis, tol=self.tol)
        self.theta_ = self.result_.theta_star
        return self

    def predict(self, X=None):
        """Capacity density values on the basis grid."""
        check_is_fitted(self, "result_")
        return self.result_.capacity_sd.values

    def score(self, X, y=None):
        """Negative projection error against the reference ``X``."""
        check_is_fitted(self, "result_")
        diff = self.result_.capacity_sd.values - X.values
        return -float(np.mean(diff**2))
