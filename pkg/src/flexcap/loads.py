"""HVAC thermal models and the QoS channels that map power deviation to QoS signals.

Units: power in kW, temperature in degC, thermal resistance in degC/kW,
capacitance in kWh/degC, energy in kWh. Time steps are given in seconds
and converted to hours wherever they meet ``R * Cth``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .spectra import FrequencyGrid

CHANNEL_KINDS = ("power", "ramp", "energy", "storage")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThermalParams:
    R: float = 8.0
    Cth: float = 22.0
    eta0: float = 3.5
    alpha1: float = 0.0
    alpha2: float = 0.0
    Ta: float = 30.0
    Tbar: float = 22.0
    qint: float = 0.0

    def __post_init__(self):
        if not (self.R > 0 and self.Cth > 0 and self.eta0 > 0):
            raise ValueError("R, Cth and eta0 must be positive")
        if not self.eta_bar > 0:
            raise ValueError(f"effective COP {self.eta_bar} is not positive")

    @property
    def eta_bar(self) -> float:
        """COP at the setpoint: ``eta0 - alpha1 * (Ta - Tbar) + alpha2``."""
        return self.eta0 - self.alpha1 * (self.Ta - self.Tbar) + self.alpha2


def baseline_power(p: ThermalParams, nonlinear: bool = False) -> float:
    """Power that holds the zone at ``Tbar`` (kW, positive when cooling a warm zone)."""
    eta = p.eta_bar if nonlinear else p.eta0
    if eta <= 0:
        raise ValueError(f"COP must be positive, got {eta}")
    return (p.Ta - p.Tbar) / (eta * p.R) + p.qint / eta


@dataclass(frozen=True)
class Discretization:
    delta_t: float
    a: float
    b: float
    gamma: float
    beta: float
    method: str = "zoh"

    @property
    def dt_hours(self) -> float:
        return self.delta_t / 3600.0

    @property
    def one_minus_a(self) -> float:
        """``1 - a`` without cancellation."""
        x = self.gamma * self.dt_hours
        if self.method == "zoh":
            return -math.expm1(-x)
        return x / (1.0 + x)

    @property
    def warmup(self) -> int:
        """Samples needed for the storage transient to decay (five time constants)."""
        return int(math.ceil(5.0 / self.one_minus_a))


def discretize(p: ThermalParams, delta_t: float, method: str = "zoh") -> Discretization:
    """Discrete pole ``a`` and gain ``b`` of the linear temperature-deviation model.

    ``zoh`` is the exact sampled model ``a = exp(-gamma dt)``,
    ``b = beta (1 - a) / gamma``; ``backward_euler`` gives the scheme used by
    :func:`simulate_bilinear` with ``alpha1 = 0``.
    """
    if not delta_t > 0:
        raise ValueError("delta_t must be positive")
    gamma = 1.0 / (p.R * p.Cth)
    beta = p.eta0 / p.Cth
    h = delta_t / 3600.0
    if method == "zoh":
        a = math.exp(-gamma * h)
        b = beta * (-math.expm1(-gamma * h)) / gamma
    elif method == "backward_euler":
        a = 1.0 / (1.0 + gamma * h)
        b = beta * h * a
    else:
        raise ValueError(f"unknown discretization {method!r}")
    return Discretization(float(delta_t), a, b, gamma, beta, method)


def simulate_lti(d: Discretization, pdev, T0: float = 0.0) -> np.ndarray:
    """``T[k+1] = a T[k] + b P[k]`` with ``T[0] = T0``; works along the last axis."""
    pdev = np.asarray(pdev, dtype=float)
    if pdev.shape[-1] == 0:
        return pdev.copy()
    # output at k uses inputs up to k-1
    shifted = np.concatenate([np.zeros(pdev.shape[:-1] + (1,)), pdev[..., :-1]], axis=-1)
    zi = np.full(pdev.shape[:-1] + (1,), float(T0))
    out, _ = scipy.signal.lfilter([d.b], [1.0, -d.a], shifted, axis=-1, zi=zi)
    out[..., 0] = T0
    return out


def simulate_bilinear(p: ThermalParams, delta_t: float, pdev, T0: float = 0.0) -> np.ndarray:
    """Backward-Euler solution of the bilinear temperature-deviation ODE.

    ``Cth dT/dt = -T/R + eta_bar P + alpha1 Pbar T + alpha1 T P`` with the
    power held over each step. The implicit update is affine in
    ``T[k+1]``::

        T[k+1] = (T[k] + h eta_bar P[k]) / (1 + h/R - h alpha1 (Pbar + P[k])),  h = dt / Cth

    so it is solved exactly. The time-varying linear recursion is evaluated
    blockwise with cumulative products, vectorized over leading axes.
    """
    pdev = np.asarray(pdev, dtype=float)
    h = delta_t / 3600.0 / p.Cth
    pbar = baseline_power(p, nonlinear=True)
    den = 1.0 + h / p.R - h * p.alpha1 * (pbar + pdev)
    bad = den <= 0
    if np.any(bad):
        k = int(np.argwhere(bad)[0][-1])
        raise SimulationError(f"implicit step is ill-posed at step {k} (denominator <= 0)")
    g = 1.0 / den
    f = h * p.eta_bar * pdev * g
    n = pdev.shape[-1]
    out = np.empty_like(pdev)
    if n == 0:
        return out
    state = np.full(pdev.shape[:-1], float(T0))
    max_log = float(np.max(np.abs(np.log(g)))) if g.size else 0.0
    block = n if max_log == 0 else max(1, min(n, int(20.0 / max_log)))
    out[..., 0] = state
    # out[k+1] = g[k] out[k] + f[k]
    for start in range(0, n - 1, block):
        stop = min(start + block, n - 1)
        gb = g[..., start:stop]
        fb = f[..., start:stop]
        cum = np.cumprod(gb, axis=-1)
        acc = np.cumsum(fb / cum, axis=-1)
        seg = cum * (state[..., None] + acc)
        out[..., start + 1 : stop + 1] = seg
        state = seg[..., -1]
    return out


@dataclass(frozen=True)
class QoSChannel:
    kind: str
    delta_steps: int = 1
    window_steps: int = 1
    model: str = "lti"

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"channel kind must be one of {CHANNEL_KINDS}")
        if self.delta_steps < 1 or self.window_steps < 1:
            raise ValueError("delta_steps and window_steps must be >= 1")
        if self.model not in ("lti", "bilinear"):
            raise ValueError("storage model must be 'lti' or 'bilinear'")

    @property
    def is_lti(self) -> bool:
        return self.kind != "storage" or self.model == "lti"

    def warmup(self, d: Discretization) -> int:
        if self.kind == "ramp":
            return self.delta_steps
        if self.kind == "energy":
            return self.window_steps
        if self.kind == "storage":
            return d.warmup
        return 0


def steps_from_seconds(seconds: float, delta_t: float) -> int:
    steps = seconds / delta_t
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise ValueError(f"{seconds} s is not a positive multiple of the {delta_t} s time step")
    return int(round(steps))


def _raw_signal(ch: QoSChannel, pdev: np.ndarray, p: ThermalParams, d: Discretization):
    if ch.kind == "power":
        return pdev
    if ch.kind == "ramp":
        z = np.zeros_like(pdev)
        z[..., ch.delta_steps :] = pdev[..., ch.delta_steps :] - pdev[..., : -ch.delta_steps]
        return z
    if ch.kind == "energy":
        csum = np.cumsum(pdev, axis=-1)
        z = csum.copy()
        t = ch.window_steps
        z[..., t:] -= csum[..., :-t]
        return z * d.dt_hours
    if ch.model == "lti":
        return simulate_lti(d, pdev)
    return simulate_bilinear(p, d.delta_t, pdev)


def qos_signal(
    ch: QoSChannel,
    pdev,
    p: ThermalParams,
    d: Discretization,
    warmup: int | None = None,
) -> np.ndarray:
    """QoS signal ``Z`` for the power deviation ``pdev`` with warm-up samples dropped.

    ``warmup`` defaults to the channel's own transient length; pass a
    common value to align several channels on the same window.
    """
    pdev = np.asarray(pdev, dtype=float)
    skip = ch.warmup(d) if warmup is None else int(warmup)
    if pdev.shape[-1] <= skip:
        raise ValueError(f"sequence of length {pdev.shape[-1]} is shorter than warm-up {skip}")
    return _raw_signal(ch, pdev, p, d)[..., skip:]


def lti_gain2(ch: QoSChannel, d: Discretization, grid: FrequencyGrid) -> np.ndarray:
    """Squared magnitude response ``|G(e^{jw})|^2`` of an LTI channel on ``grid``."""
    w = grid.omegas
    if ch.kind == "power":
        return np.ones_like(w)
    if ch.kind == "ramp":
        return 2.0 - 2.0 * np.cos(w * ch.delta_steps)
    if ch.kind == "energy":
        t = ch.window_steps
        s = np.sin(w / 2.0)
        small = np.abs(s) < 1e-12
        ratio = np.where(small, float(t) ** 2, np.sin(w * t / 2.0) ** 2 / np.where(small, 1.0, s**2))
        return d.dt_hours**2 * ratio
    if ch.model != "lti":
        raise NotImplementedError("a bilinear storage channel has no frequency response")
    # 1 - 2a cos w + a^2 written to keep precision near w = 0
    return d.b**2 / (d.one_minus_a**2 + 4.0 * d.a * np.sin(w / 2.0) ** 2)


@dataclass(frozen=True)
class LoadSimulator:
    """Black-box simulator: power deviation in, QoS signals out."""

    params: ThermalParams
    delta_t: float
    storage_model: str = "lti"

    @property
    def disc(self) -> Discretization:
        return discretize(self.params, self.delta_t)

    def channel(self, ch: QoSChannel) -> QoSChannel:
        if ch.kind == "storage" and ch.model != self.storage_model:
            return QoSChannel(ch.kind, ch.delta_steps, ch.window_steps, self.storage_model)
        return ch

    def warmup(self, channels) -> int:
        d = self.disc
        return max([self.channel(ch).warmup(d) for ch in channels] + [0])

    def run(self, channels, pdev, warmup: int | None = None) -> list[np.ndarray]:
        d = self.disc
        skip = self.warmup(channels) if warmup is None else warmup
        return [qos_signal(self.channel(ch), pdev, self.params, d, warmup=skip) for ch in channels]
