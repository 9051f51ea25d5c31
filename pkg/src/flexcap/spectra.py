"""Frequency grids, spectral densities and indicator-band bases.

Spectral densities live on a two-sided grid of ``n_freq`` points
``omega_m = -pi + 2*pi*m/n_freq`` (rad/sample), so index ``n_freq // 2``
is the zero frequency and index 0 is the Nyquist point. Integrals over
``[-pi, pi)`` divided by ``2*pi`` reduce to a plain mean over the grid.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft

DEFAULT_N_FREQ = 4096
EVEN_RTOL = 1e-9


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform two-sided grid on ``[-pi, pi)`` with a physical sampling interval."""

    n_freq: int = DEFAULT_N_FREQ
    delta_t: float = 60.0

    def __post_init__(self):
        if int(self.n_freq) != self.n_freq or self.n_freq < 2 or self.n_freq % 2:
            raise ValueError(f"n_freq must be a positive even integer, got {self.n_freq}")
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")
        object.__setattr__(self, "n_freq", int(self.n_freq))
        object.__setattr__(self, "delta_t", float(self.delta_t))

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.n_freq

    @property
    def bins(self) -> np.ndarray:
        """Signed integer bin index of every grid point (``omega = bins * spacing``)."""
        return np.arange(self.n_freq) - self.n_freq // 2

    @property
    def omegas(self) -> np.ndarray:
        return self.bins * self.spacing

    @property
    def mirror(self) -> np.ndarray:
        """Index of ``-omega`` for every grid point."""
        return (self.n_freq - np.arange(self.n_freq)) % self.n_freq

    @property
    def nyquist_hz(self) -> float:
        return 0.5 / self.delta_t

    def to_hz(self, omega):
        return np.asarray(omega) / (2 * np.pi * self.delta_t)

    def from_hz(self, f_hz):
        return 2 * np.pi * self.delta_t * np.asarray(f_hz)

    def to_per_hour(self, omega):
        return self.to_hz(omega) * 3600.0

    def from_per_hour(self, f_per_hour):
        return self.from_hz(np.asarray(f_per_hour) / 3600.0)


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    """Nonnegative, even function of frequency sampled on a :class:`FrequencyGrid`.

    Units are (signal unit)^2 per rad/sample; the variance of the
    underlying process is :func:`integrate_sd`.
    """

    grid: FrequencyGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = _readonly(self.values)
        if values.shape != (self.grid.n_freq,):
            raise ValueError(f"expected {self.grid.n_freq} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("spectral density values must be finite")
        scale = float(np.max(np.abs(values))) if values.size else 0.0
        if np.any(values < -EVEN_RTOL * scale):
            raise ValueError("spectral density must be nonnegative")
        if np.max(np.abs(values - values[self.grid.mirror]), initial=0.0) > EVEN_RTOL * scale:
            raise ValueError("spectral density must be even (S(w) == S(-w))")
        object.__setattr__(self, "values", _readonly(np.clip(values, 0.0, None)))

    @classmethod
    def constant(cls, grid: FrequencyGrid, level: float = 1.0) -> "SpectralDensity":
        return cls(grid, np.full(grid.n_freq, float(level)))

    @classmethod
    def zeros(cls, grid: FrequencyGrid) -> "SpectralDensity":
        return cls(grid, np.zeros(grid.n_freq))

    @classmethod
    def symmetrized(cls, grid: FrequencyGrid, values) -> "SpectralDensity":
        """Build from an estimate that is only approximately even."""
        values = np.asarray(values, dtype=float)
        return cls(grid, 0.5 * (values + values[grid.mirror]))

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return SpectralDensity(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __add__(self, other):
        if not isinstance(other, SpectralDensity):
            return NotImplemented
        _check_same_grid(self.grid, other.grid)
        return SpectralDensity(self.grid, self.values + other.values)

    def to_fft_order(self) -> np.ndarray:
        """Values ordered as ``numpy.fft`` bins (0, 1, ..., -1)."""
        return np.fft.ifftshift(self.values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["omega_rad_per_sample", "value"])
            for omega, value in zip(self.grid.omegas, self.values):
                writer.writerow([repr(float(omega)), repr(float(value))])

    def to_json(self) -> dict:
        return {
            "delta_t_s": self.grid.delta_t,
            "n_freq": self.grid.n_freq,
            "values": [float(v) for v in self.values],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SpectralDensity":
        grid = FrequencyGrid(int(payload["n_freq"]), float(payload["delta_t_s"]))
        return cls(grid, payload["values"])

    @classmethod
    def read_csv(cls, path, delta_t: float) -> "SpectralDensity":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        grid = FrequencyGrid(data.shape[0], delta_t)
        if not np.allclose(data[:, 0], grid.omegas, atol=1e-9):
            raise ValueError(f"{path}: frequency column does not match a uniform grid")
        return cls(grid, data[:, 1])

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def _check_same_grid(a: FrequencyGrid, b: FrequencyGrid) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


def integrate_sd(sd: SpectralDensity) -> float:
    """Variance of the process with density ``sd``: ``(1/2pi) * integral``."""
    return float(np.mean(sd.values))


def _as_realizations(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        arr = np.atleast_2d(np.asarray(samples, dtype=float))
    else:
        lengths = {len(s) for s in samples}
        if len(lengths) > 1:
            raise ValueError(f"realizations have mismatched lengths: {sorted(lengths)}")
        arr = np.atleast_2d(np.asarray(list(samples), dtype=float))
    if arr.ndim != 2:
        raise ValueError("samples must be a sequence of 1-D realizations")
    return arr


def cell_average(power: np.ndarray, n_freq: int) -> np.ndarray:
    """Average fine FFT-ordered periodogram bins into the ``n_freq`` grid cells.

    ``power`` has ``M = r * n_freq`` bins along the last axis. Each grid
    point receives the mean of the fine bins inside its cell, with bins on
    a shared cell boundary split evenly, so the grid mean equals the fine
    mean (Parseval is preserved). Output is in grid (centered) order.
    """
    m = power.shape[-1]
    r = m // n_freq
    if r * n_freq != m:
        raise ValueError("fine resolution must be a multiple of n_freq")
    if r == 1:
        return np.fft.fftshift(power, axes=-1)
    # rolled so that each cell is contiguous: bins j*r - r//2 ... j*r + r//2
    if r % 2:
        rolled = np.roll(power, r // 2, axis=-1)
        cells = rolled.reshape(power.shape[:-1] + (n_freq, r)).mean(axis=-1)
    else:
        half = r // 2
        rolled = np.roll(power, half, axis=-1)
        blocks = rolled.reshape(power.shape[:-1] + (n_freq, r))
        upper = np.roll(blocks[..., 0], -1, axis=-1)  # first bin of next cell
        cells = (blocks.sum(axis=-1) - 0.5 * blocks[..., 0] + 0.5 * upper) / r
    return np.fft.fftshift(cells, axes=-1)


def periodogram_matrix(samples, grid: FrequencyGrid, window: str | None = None) -> np.ndarray:
    """Per-realization periodograms on ``grid``, shape ``(n_real, n_freq)``.

    Each row is ``(1/N)|sum_k z[k] exp(-j w k)|^2`` evaluated at the DFT
    resolution of the realization (zero padded to a multiple of
    ``n_freq``) and then cell-averaged onto the grid.
    """
    z = _as_realizations(samples)
    n_real, n = z.shape
    if n < grid.n_freq:
        raise ValueError(f"realization length {n} is shorter than n_freq={grid.n_freq}")
    if window is None:
        norm = float(n)
    elif window == "hann":
        w = np.hanning(n + 2)[1:-1]
        z = z * w
        norm = float(np.sum(w**2))
    else:
        raise ValueError(f"unknown window {window!r}")
    m = -(-n // grid.n_freq) * grid.n_freq
    spectrum = scipy.fft.fft(z, n=m, axis=-1)
    power = (spectrum.real**2 + spectrum.imag**2) / norm
    cells = cell_average(power, grid.n_freq)
    return 0.5 * (cells + cells[:, grid.mirror])


def periodogram(samples, grid: FrequencyGrid, window: str | None = None) -> SpectralDensity:
    """Ensemble-averaged periodogram of equal-length realizations, symmetrized."""
    per = periodogram_matrix(samples, grid, window=window)
    return SpectralDensity.symmetrized(grid, per.mean(axis=0))


def apply_lti_sd(sd: SpectralDensity, gain2) -> SpectralDensity:
    """Output density of an LTI filter with squared magnitude response ``gain2``."""
    if isinstance(gain2, SpectralDensity):
        _check_same_grid(sd.grid, gain2.grid)
        gain2 = gain2.values
    gain2 = np.asarray(gain2, dtype=float)
    if gain2.shape != sd.values.shape:
        raise ValueError(f"gain2 has shape {gain2.shape}, grid needs {sd.values.shape}")
    return SpectralDensity(sd.grid, sd.values * gain2)


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Indicator bases of disjoint bands ``[lo_i, hi_i)`` mirrored to negative frequency."""

    grid: FrequencyGrid
    edges: np.ndarray

    def __post_init__(self):
        edges = _readonly(self.edges)
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("need at least two edges")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("basis edges must be strictly increasing")
        if edges[0] < 0 or edges[-1] > np.pi * (1 + 1e-12):
            raise ValueError("basis edges must lie in [0, pi]")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_matrix", _readonly(self._indicators()))

    def _indicators(self) -> np.ndarray:
        n = self.grid.n_freq
        k = np.abs(self.grid.bins).astype(float)
        edge_bins = self.edges * n / (2 * np.pi)
        tol = 1e-9
        psi = np.zeros((self.edges.size - 1, n))
        for i, (lo, hi) in enumerate(zip(edge_bins[:-1], edge_bins[1:])):
            inside = (k >= lo - tol) & (k < hi - tol)
            if hi >= n / 2 - tol:
                inside |= k >= n / 2 - tol
            psi[i] = inside
        return psi

    @property
    def d(self) -> int:
        return self.edges.size - 1

    @property
    def matrix(self) -> np.ndarray:
        """Basis values, shape ``(d, n_freq)``."""
        return self._matrix

    @property
    def widths(self) -> np.ndarray:
        """Two-sided width of each band in rad/sample."""
        return self._matrix.sum(axis=1) * self.grid.spacing

    def psi(self, i: int) -> SpectralDensity:
        return SpectralDensity(self.grid, self._matrix[i])


def make_basis(grid: FrequencyGrid, edges) -> BasisSet:
    """Indicator bases for positive-axis band edges in rad/sample."""
    return BasisSet(grid, np.asarray(edges, dtype=float))


def snap_edges_per_hour(grid: FrequencyGrid, f_low: float, f_high: float, count: int) -> np.ndarray:
    """``count + 1`` edges spanning ``[f_low, f_high]`` (cycles/hour) snapped to grid points."""
    lo, hi = grid.from_per_hour([f_low, f_high]) / grid.spacing
    k = np.unique(np.round(np.linspace(lo, hi, count + 1)).astype(int))
    k = np.clip(k, 0, grid.n_freq // 2)
    if k.size != count + 1:
        raise ValueError(
            f"band [{f_low}, {f_high}] 1/h spans too few grid points for {count} bases"
        )
    return k * grid.spacing


def eval_basis(basis: BasisSet, theta) -> SpectralDensity:
    """Weighted sum of basis indicators as a spectral density."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.d,):
        raise ValueError(f"theta must have length {basis.d}")
    if np.any(theta < 0):
        raise ValueError("basis coefficients must be nonnegative")
    return SpectralDensity(basis.grid, theta @ basis.matrix)
