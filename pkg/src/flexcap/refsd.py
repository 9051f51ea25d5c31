"""Reference densities from net demand: empirical estimate, ARMA(2,1) fit, extrapolation, passbands.

Net demand is treated as a zero-mean stationary series sampled every
``native_delta_t`` seconds. Its density is fitted with a rational model
whose shape is then evaluated on a finer simulation grid, and an ideal
bandpass selects the part of it a grid operator wants served by loads.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.optimize
import scipy.signal

from .signalgen import _rng
from .spectra import FrequencyGrid, SpectralDensity

DEFAULT_NATIVE_DT = 600.0


class FitError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class RationalSD:
    """``gain * |1 + b1 z^-1|^2 / |1 + a1 z^-1 + a2 z^-2|^2`` on the unit circle."""

    ar: tuple[float, float]
    ma: float
    gain: float
    native_delta_t: float = DEFAULT_NATIVE_DT
    fit_residual: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "ar", tuple(float(a) for a in self.ar))
        if len(self.ar) != 2:
            raise ValueError("expected two autoregressive coefficients")
        if self.gain < 0:
            raise ValueError("gain must be nonnegative")
        if not self.native_delta_t > 0:
            raise ValueError("native_delta_t must be positive")
        if not self.is_stationary:
            raise ValueError(f"AR polynomial with coefficients {self.ar} is not stable")

    @property
    def poles(self) -> np.ndarray:
        return np.roots([1.0, *self.ar])

    @property
    def is_stationary(self) -> bool:
        return bool(np.all(np.abs(self.poles) < 1.0))

    def evaluate(self, omega) -> np.ndarray:
        z = np.exp(-1j * np.asarray(omega, dtype=float))
        num = np.abs(1.0 + self.ma * z) ** 2
        den = np.abs(1.0 + self.ar[0] * z + self.ar[1] * z**2) ** 2
        return self.gain * num / den

    def on_grid(self, n_freq: int) -> SpectralDensity:
        grid = FrequencyGrid(n_freq, self.native_delta_t)
        return SpectralDensity(grid, self.evaluate(grid.omegas))

    def to_json(self) -> dict:
        out = {"ar": list(self.ar), "ma": self.ma, "gain": self.gain, "native_delta_t_s": self.native_delta_t}
        if self.fit_residual is not None:
            out["fit_residual"] = self.fit_residual
        return out

    @classmethod
    def from_json(cls, payload: dict) -> "RationalSD":
        return cls(
            tuple(payload["ar"]),
            float(payload["ma"]),
            float(payload["gain"]),
            float(payload.get("native_delta_t_s", DEFAULT_NATIVE_DT)),
            payload.get("fit_residual"),
        )


@dataclass(frozen=True)
class Passband:
    """Physical band ``[f_low, f_high]`` in Hz."""

    f_low: float
    f_high: float

    def __post_init__(self):
        if not 0 <= self.f_low < self.f_high:
            raise ValueError(f"need 0 <= f_low < f_high, got [{self.f_low}, {self.f_high}]")

    @classmethod
    def per_hour(cls, lo: float, hi: float) -> "Passband":
        return cls(lo / 3600.0, hi / 3600.0)

    @classmethod
    def per_minute(cls, lo: float, hi: float) -> "Passband":
        return cls(lo / 60.0, hi / 60.0)


def empirical_nd_sd(series, delta_t: float, n_freq: int = 256) -> SpectralDensity:
    """Averaged segment periodogram of a net-demand series.

    The global mean is removed, then ``scipy.signal.welch`` averages
    Hann-windowed segments of ``n_freq`` samples with half overlap.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if x.size < 2 * n_freq:
        raise ValueError(f"series of length {x.size} is shorter than two segments of {n_freq}")
    grid = FrequencyGrid(n_freq, delta_t)
    x = x - x.mean()
    _, pxx = scipy.signal.welch(
        x, fs=1.0, window="hann", nperseg=n_freq, detrend=False, return_onesided=False, scaling="density"
    )
    # welch orders frequencies as fftfreq; the grid starts at -pi
    return SpectralDensity.symmetrized(grid, np.fft.fftshift(pxx))


def _unpack(x):
    k1, k2, v, log_gain = x
    r1, r2 = np.tanh(k1), np.tanh(k2)
    return (r1 * (1.0 + r2), r2), float(np.tanh(v)), float(np.exp(log_gain))


def _cancel_common_factor(ar, ma, gain, tol=1e-3):
    """Drop a pole that coincides with the MA zero; the density is unchanged to within ``tol``."""
    poles = np.roots([1.0, *ar])
    hit = np.flatnonzero(np.abs(poles - (-ma)) < tol)
    if hit.size == 0:
        return ar, ma, gain
    rest = np.delete(poles, hit[0])
    return (float(-np.real(rest[0])), 0.0), 0.0, gain


def fit_arma21(density: SpectralDensity, band: tuple[float, float] | None = None, n_starts: int = 4) -> RationalSD:
    """Least-squares fit of an ARMA(2,1) density to ``log density``.

    The fit covers grid points with ``band[0] <= |omega| <= band[1]``
    (default: every nonzero frequency). Stationarity and invertibility are
    built into the parametrization: reflection coefficients ``tanh(k1)``,
    ``tanh(k2)`` give the AR part and ``b1 = tanh(v)``. Starts run over a
    small grid of reflection and MA values; the lowest residual wins and
    ties go to the lexicographically smallest start.
    """
    grid = density.grid
    w = grid.omegas
    lo, hi = band if band is not None else (grid.spacing, np.pi)
    mask = (w >= lo - 1e-12) & (w <= hi + 1e-12)
    if not mask.any():
        raise FitError("fitting band contains no grid points")
    target = density.values[mask]
    if np.any(target <= 0):
        raise FitError("density must be strictly positive on the fitting band")
    log_target = np.log(target)
    z = np.exp(-1j * w[mask])

    def resid(x):
        (a1, a2), b1, _ = _unpack(x)
        num = np.abs(1.0 + b1 * z) ** 2
        den = np.abs(1.0 + a1 * z + a2 * z**2) ** 2
        return x[3] + np.log(num) - np.log(den) - log_target

    levels = np.linspace(-2.0, 2.0, n_starts)
    best = None
    for k1, k2, v in itertools.product(levels, levels, levels):
        x0 = np.array([k1, k2, v, 0.0])
        x0[3] = -np.mean(resid(x0))
        try:
            sol = scipy.optimize.least_squares(resid, x0, method="trf", x_scale=1.0, max_nfev=2000)
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(sol.x)):
            continue
        cost = float(np.sqrt(np.mean(sol.fun**2)))
        if best is None or cost < best[0] - 1e-12:
            best = (cost, sol.x)
    if best is None:
        raise FitError("no start produced a finite fit")
    cost, x = best
    ar, ma, gain = _cancel_common_factor(*_unpack(x))
    try:
        return RationalSD(ar, ma, gain, grid.delta_t, fit_residual=cost)
    except ValueError as exc:
        raise FitError(f"best fit is not stationary: {exc}", residual=cost) from exc


def extrapolate(model: RationalSD, target_grid: FrequencyGrid) -> SpectralDensity:
    """Evaluate ``model`` on a finer grid by matching physical frequencies.

    The density is rescaled by ``native_dt / target_dt`` so the variance
    carried by frequencies below the native Nyquist is unchanged. Above
    the native Nyquist the model is held at its Nyquist value.
    """
    ratio = model.native_delta_t / target_grid.delta_t
    if ratio < 1 - 1e-12:
        raise ValueError(
            f"target step {target_grid.delta_t} s is coarser than the native {model.native_delta_t} s"
        )
    native = np.clip(np.abs(target_grid.omegas) * ratio, 0.0, np.pi)
    return SpectralDensity.symmetrized(target_grid, model.evaluate(native) * ratio)


def band_mask(grid: FrequencyGrid, band: Passband) -> np.ndarray:
    f = np.abs(grid.to_hz(grid.omegas))
    tol = 1e-9 * max(band.f_high, 1e-300)
    return (f >= band.f_low - tol) & (f <= band.f_high + tol)


def bandpass_reference(snd: SpectralDensity, band: Passband) -> SpectralDensity:
    """Ideal bandpass: ``snd`` inside ``band`` (both signs of frequency), zero elsewhere."""
    grid = snd.grid
    if band.f_high > grid.nyquist_hz * (1 + 1e-9):
        raise ValueError(f"band edge {band.f_high} Hz exceeds the Nyquist frequency {grid.nyquist_hz} Hz")
    mask = band_mask(grid, band)
    if not mask.any():
        raise ValueError("passband contains no grid points")
    return SpectralDensity(grid, np.where(mask, snd.values, 0.0))


def synth_net_demand(model: RationalSD, N: int, seed: int, warmup: int = 1000) -> np.ndarray:
    """ARMA(2,1) sample path driven by seeded Gaussian noise of variance ``gain``."""
    if model.gain == 0:
        return np.zeros(int(N))
    e = _rng(seed).standard_normal(int(N) + warmup) * np.sqrt(model.gain)
    y = scipy.signal.lfilter([1.0, model.ma], [1.0, *model.ar], e)
    return y[warmup:]


def read_net_demand_csv(path, column: str = "net_demand_mw") -> np.ndarray:
    """Read ``timestamp,net_demand_mw`` (with header) or a headerless single column."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"reference data not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise ValueError(f"{path} is empty")
    head = [cell.strip() for cell in rows[0]]
    if column in head:
        j = head.index(column)
        body = rows[1:]
    else:
        j = len(head) - 1
        body = rows
    try:
        return np.array([float(r[j]) for r in body])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: could not parse net demand values: {exc}") from exc
