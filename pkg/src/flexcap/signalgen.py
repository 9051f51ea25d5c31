"""Zero-mean colored noise with a prescribed spectral density.

Seed schedule
-------------
Every random stream is a ``numpy.random.PCG64`` generator keyed by an
unsigned 64-bit integer. Derived seeds come from :func:`sub_seed`, which
hashes ``(seed, *keys)`` through ``numpy.random.SeedSequence``; the result
depends only on the integers involved, so runs are reproducible and the
order in which components are generated does not matter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.signal

from .spectra import BasisSet, SpectralDensity

METHODS = ("random-phase", "spectral-factorization")


def sub_seed(seed: int, *keys: int) -> int:
    """Stable 64-bit child seed of ``seed`` for the integer path ``keys``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True, eq=False)
class NoiseRecipe:
    target: SpectralDensity
    length: int
    seed: int = 0
    method: str = "random-phase"

    def __post_init__(self):
        if self.length < self.target.grid.n_freq:
            raise ValueError(
                f"length {self.length} must be >= grid size {self.target.grid.n_freq}"
            )
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")


def resample_to_fft_bins(target: SpectralDensity, length: int) -> np.ndarray:
    """Target values at the ``rfft`` bins of a ``length``-point transform.

    Each bin takes the value of the grid cell it falls in. A bin sitting
    exactly on a cell boundary takes the mean of both neighbours, matching
    the half-and-half split used by :func:`~flexcap.spectra.cell_average`,
    so every cell carries the same total power as the target.
    """
    n = target.grid.n_freq
    j = np.arange(length // 2 + 1)
    num = j * n  # position on the grid is num / length
    lo = num // length
    rem = num - lo * length
    k = np.where(2 * rem >= length, lo + 1, lo)
    out = target.values[(k + n // 2) % n]
    tie = 2 * rem == length
    if tie.any():
        out = out.copy()
        out[tie] = 0.5 * (target.values[(lo[tie] + n // 2) % n] + target.values[(lo[tie] + 1 + n // 2) % n])
    return out


def random_phase_spectrum(levels: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """One-sided spectrum with amplitude ``sqrt(S * L)`` and uniform random phase.

    The DC bin is zeroed; a Nyquist bin (even ``length``) keeps the real
    part of its phasor scaled by sqrt(2) so its expected power is unchanged.
    Phases are always drawn for every bin so the stream does not depend on
    the target values.
    """
    phases = rng.uniform(0.0, 2 * np.pi, size=levels.shape[-1])
    spec = np.sqrt(levels * length) * np.exp(1j * phases)
    spec[..., 0] = 0.0
    if length % 2 == 0:
        spec[..., -1] = np.sqrt(2.0 * levels[..., -1] * length) * np.cos(phases[-1])
    return spec


def minimum_phase_filter(target: SpectralDensity) -> np.ndarray:
    """FIR impulse response ``h`` with ``|H|^2 ~= target`` via the real cepstrum."""
    values = target.to_fft_order()
    if np.any(values <= 0):
        raise ValueError("spectral factorization needs a strictly positive target")
    n = values.size
    cep = np.fft.ifft(np.log(values)).real
    fold = np.zeros(n)
    fold[0] = cep[0]
    fold[1 : n // 2] = 2 * cep[1 : n // 2]
    fold[n // 2] = cep[n // 2]
    # log |H| = 0.5 * log S
    return np.fft.ifft(np.exp(0.5 * np.fft.fft(fold))).real


def synthesize(recipe: NoiseRecipe) -> np.ndarray:
    """Real zero-mean sequence whose expected periodogram is the recipe's target."""
    target, length = recipe.target, int(recipe.length)
    rng = _rng(recipe.seed)
    if recipe.method == "random-phase":
        levels = resample_to_fft_bins(target, length)
        return scipy.fft.irfft(random_phase_spectrum(levels, length, rng), n=length)
    h = minimum_phase_filter(target)
    burn = h.size
    white = rng.standard_normal(length + burn)
    out = scipy.signal.lfilter(h, [1.0], white)[burn:]
    return out - out.mean()


def synthesize_mixture(basis: BasisSet, theta, length: int, seed: int) -> np.ndarray:
    """Sum of independent components, component ``i`` with density ``theta_i * psi_i``.

    Component ``i`` uses seed ``sub_seed(seed, i)``, so ``theta = e_i``
    reproduces ``synthesize`` on ``psi_i`` with that seed exactly.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.d,):
        raise ValueError(f"theta must have length {basis.d}")
    if np.any(theta < 0):
        raise ValueError("basis coefficients must be nonnegative")
    if length < basis.grid.n_freq:
        raise ValueError(f"length {length} must be >= grid size {basis.grid.n_freq}")
    total = np.zeros(length // 2 + 1, dtype=complex)
    for i in np.flatnonzero(theta > 0):
        levels = resample_to_fft_bins(basis.psi(i) * theta[i], length)
        total += random_phase_spectrum(levels, length, _rng(sub_seed(seed, i)))
    return scipy.fft.irfft(total, n=length)


def synthesize_batch(target: SpectralDensity, length: int, seeds) -> np.ndarray:
    """Random-phase realizations for each seed, shape ``(len(seeds), length)``."""
    levels = resample_to_fft_bins(target, length)
    spec = np.empty((len(seeds), levels.size), dtype=complex)
    for r, seed in enumerate(seeds):
        spec[r] = random_phase_spectrum(levels, length, _rng(seed))
    return scipy.fft.irfft(spec, n=length, axis=-1)
