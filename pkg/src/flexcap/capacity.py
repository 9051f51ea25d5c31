"""Flexibility capacity as a constrained projection of the reference spectral density.

The decision variable is the coefficient vector ``theta >= 0`` of an
indicator basis, so the capacity density is ``basis.matrix.T @ theta``. Each QoS
channel contributes a variance constraint ``B[l] @ theta <= b[l]`` with
``b[l] = c_l**2 * eps_l`` (a Chebyshev bound). ``B`` is either computed
from the channel frequency responses (LTI models only) or estimated by
driving a simulator with noise whose density is one basis function.

Constraint maps are per load; ``theta`` and the reference density refer
to the ensemble of ``n`` loads, each tracking ``1/n`` of the aggregate, so
ensemble bounds are ``n**2 * b`` (see :func:`scale_ensemble`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import qp as _qp
from .loads import Discretization, LoadSimulator, QoSChannel, lti_gain2
from .signalgen import random_phase_spectrum, resample_to_fft_bins, sub_seed, _rng
from .spectra import BasisSet, SpectralDensity, eval_basis

import scipy.fft

CHUNK = 16


class EstimationError(RuntimeError):
    pass


class RefinementError(RuntimeError):
    def __init__(self, message, slack=None, result=None):
        super().__init__(message)
        self.slack = slack
        self.result = result


@dataclass(frozen=True)
class QoSSpec:
    channel: QoSChannel
    c: float
    epsilon: float = 0.05

    def __post_init__(self):
        chebyshev_bound(self.c, self.epsilon)

    @property
    def b(self) -> float:
        return chebyshev_bound(self.c, self.epsilon)


def chebyshev_bound(c: float, epsilon: float) -> float:
    """Variance bound ``c**2 * epsilon`` that guarantees ``P(|Z| >= c) <= epsilon``."""
    if not c > 0:
        raise ValueError(f"bound c must be positive, got {c}")
    if not 0 < epsilon <= 1:
        raise ValueError(f"tolerance epsilon must be in (0, 1], got {epsilon}")
    return float(c) ** 2 * float(epsilon)


def scale_ensemble(specs, n: int) -> list[QoSSpec]:
    """Bounds for the aggregate of ``n`` identical loads under coherent dispatch.

    Every load tracks ``1/n`` of the aggregate deviation, so per-load
    densities are the aggregate density divided by ``n**2`` and each
    variance bound lifts to ``n**2 * b``.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"ensemble size must be a positive integer, got {n}")
    return [replace(s, c=s.c * n) for s in specs]


@dataclass(frozen=True, eq=False)
class ConstraintMap:
    B: np.ndarray
    provenance: tuple
    stderr: np.ndarray | None = None

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if np.any(B < 0):
            raise ValueError("constraint map entries must be nonnegative")
        object.__setattr__(self, "B", B)
        if len(self.provenance) != B.shape[0]:
            raise ValueError("one provenance tag per row is required")

    def to_json(self) -> dict:
        out = {"B": self.B.tolist(), "provenance": list(self.provenance)}
        if self.stderr is not None:
            out["stderr"] = np.asarray(self.stderr).tolist()
        return out


def model_B(channels, disc: Discretization, basis: BasisSet) -> ConstraintMap:
    """``B[l, i] = (1/2pi) * integral |G_l|^2 psi_i`` by grid quadrature."""
    rows = [lti_gain2(ch, disc, basis.grid) for ch in channels]
    B = np.array([basis.matrix @ g2 for g2 in rows]) / basis.grid.n_freq
    return ConstraintMap(B, tuple("model" for _ in channels))


def integrated_periodogram(z: np.ndarray) -> np.ndarray:
    """Integral of each realization's periodogram along the last axis.

    By Parseval this is the mean square of the realization, which is what
    ``integrate_sd(periodogram(z))`` returns for any grid.
    """
    return np.mean(np.square(z), axis=-1)


def _probe_responses(sim: LoadSimulator, channels, spectra_fn, n_real: int, N: int, seed: int):
    """Per-realization integrated output densities, shape ``(m, n_real)``.

    ``spectra_fn(r, length)`` returns the one-sided random-phase spectrum of
    realization ``r``.
    """
    warm = sim.warmup(channels)
    length = warm + int(N)
    out = np.empty((len(channels), n_real))
    for start in range(0, n_real, CHUNK):
        idx = range(start, min(start + CHUNK, n_real))
        spec = np.stack([spectra_fn(r, length) for r in idx])
        u = scipy.fft.irfft(spec, n=length, axis=-1)
        try:
            zs = sim.run(channels, u, warmup=warm)
        except Exception as exc:  # simulator failures carry realization context
            raise EstimationError(f"simulator failed on realizations {idx.start}..{idx.stop - 1}: {exc}") from exc
        for l, z in enumerate(zs):
            out[l, idx.start : idx.stop] = integrated_periodogram(z)
    return out


def estimate_B_dd(
    sim: LoadSimulator,
    channels,
    basis: BasisSet,
    n_real: int = 50,
    N: int = 2**14,
    seed: int = 0,
    probe_scale: float = 1.0,
) -> ConstraintMap:
    """Estimate ``B`` column by column from simulations driven by single-basis noise.

    Column ``i`` comes from inputs with density ``probe_scale * psi_i``;
    realization ``r`` of that column uses seed
    ``sub_seed(sub_seed(seed, r), i)``, the same stream
    :func:`estimate_B_theta` uses for component ``i``.
    """
    if N < basis.grid.n_freq:
        raise ValueError(f"N={N} must be >= n_freq={basis.grid.n_freq}")
    m, d = len(channels), basis.d
    B = np.zeros((m, d))
    se = np.zeros((m, d))
    for i in range(d):
        if not basis.matrix[i].any():
            continue
        psi = basis.psi(i) * float(probe_scale)
        levels = {}

        def spectra_fn(r, length, i=i, psi=psi):
            if length not in levels:
                levels[length] = resample_to_fft_bins(psi, length)
            return random_phase_spectrum(levels[length], length, _rng(sub_seed(sub_seed(seed, r), i)))

        try:
            vals = _probe_responses(sim, channels, spectra_fn, n_real, N, seed)
        except EstimationError as exc:
            raise EstimationError(f"basis {i}: {exc}") from exc
        B[:, i] = vals.mean(axis=1) / probe_scale
        se[:, i] = vals.std(axis=1, ddof=1) / np.sqrt(n_real) / probe_scale if n_real > 1 else 0.0
    return ConstraintMap(B, tuple("data" for _ in channels), se)


def estimate_B_theta(
    sim: LoadSimulator,
    channels,
    basis: BasisSet,
    theta,
    n_real: int = 50,
    N: int = 2**14,
    seed: int = 0,
):
    """Monte-Carlo value of the constraint functions at ``theta`` (per-load units).

    Returns ``(values, stderr)``, each of length ``m``.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.d,) or np.any(theta < 0):
        raise ValueError("theta must be a nonnegative vector of length d")
    active = np.flatnonzero(theta > 0)
    if active.size == 0:
        return np.zeros(len(channels)), np.zeros(len(channels))
    levels = {}

    def spectra_fn(r, length):
        if length not in levels:
            levels[length] = [resample_to_fft_bins(basis.psi(i) * theta[i], length) for i in active]
        rseed = sub_seed(seed, r)
        total = np.zeros(length // 2 + 1, dtype=complex)
        for lv, i in zip(levels[length], active):
            total += random_phase_spectrum(lv, length, _rng(sub_seed(rseed, i)))
        return total

    vals = _probe_responses(sim, channels, spectra_fn, n_real, N, seed)
    se = vals.std(axis=1, ddof=1) / np.sqrt(n_real) if n_real > 1 else np.zeros(len(channels))
    return vals.mean(axis=1), se


def assemble_objective(basis: BasisSet, sba: SpectralDensity):
    """``(A, c_lin, const)`` with ``theta'A theta - 2 c_lin'theta + const = mean squared gap between the basis density and the reference``."""
    if sba.grid != basis.grid:
        raise ValueError("reference density and basis are on different grids")
    n = basis.grid.n_freq
    psi = basis.matrix
    A = psi @ psi.T / n
    c_lin = psi @ sba.values / n
    const = float(np.mean(sba.values**2))
    return A, c_lin, const


@dataclass(frozen=True, eq=False)
class QPProblem:
    A: np.ndarray
    c_lin: np.ndarray
    const: float
    constraints: ConstraintMap
    b: np.ndarray

    def objective(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(theta @ self.A @ theta - 2 * self.c_lin @ theta + self.const)


def build_problem(basis: BasisSet, sba: SpectralDensity, constraints: ConstraintMap, specs, n_loads: int = 1) -> QPProblem:
    A, c_lin, const = assemble_objective(basis, sba)
    b = np.array([s.b for s in scale_ensemble(specs, n_loads)])
    return QPProblem(A, c_lin, const, constraints, b)


@dataclass(eq=False)
class CapacityResult:
    theta_star: np.ndarray
    capacity_sd: SpectralDensity
    objective_value: float
    active_constraints: list
    kkt_residual: float
    multipliers: np.ndarray
    constraint_values: np.ndarray
    bounds: np.ndarray
    provenance: tuple = ()
    validation: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        grid = self.capacity_sd.grid
        return {
            "theta": [float(t) for t in self.theta_star],
            "objective": float(self.objective_value),
            "active_constraints": [int(i) for i in self.active_constraints],
            "kkt_residual": float(self.kkt_residual),
            "multipliers": [float(x) for x in self.multipliers],
            "constraint_values": [float(x) for x in self.constraint_values],
            "bounds": [float(x) for x in self.bounds],
            "provenance": list(self.provenance),
            "delta_t_s": grid.delta_t,
            "n_freq": grid.n_freq,
            "capacity_sd": [float(v) for v in self.capacity_sd.values],
            "validation": self.validation,
            "diagnostics": self.diagnostics,
        }


def solve_qp(problem: QPProblem, basis: BasisSet, tol: float = 1e-6, active_rtol: float = 1e-6) -> CapacityResult:
    """Solve the capacity QP; raises :class:`flexcap.qp.QPError` on failure."""
    B = problem.constraints.B
    sol = _qp.solve_qp(problem.A, problem.c_lin, B, problem.b, const=problem.const, tol=tol)
    values = B @ sol.theta
    finite = np.isfinite(problem.b)
    active = [int(l) for l in np.flatnonzero(finite) if values[l] >= problem.b[l] * (1 - active_rtol)]
    return CapacityResult(
        theta_star=sol.theta,
        capacity_sd=eval_basis(basis, sol.theta),
        objective_value=sol.objective,
        active_constraints=active,
        kkt_residual=sol.kkt_residual,
        multipliers=sol.lam,
        constraint_values=values,
        bounds=problem.b,
        provenance=problem.constraints.provenance,
        diagnostics={"iterations": sol.iterations},
    )


@dataclass(frozen=True)
class NonlinearOptions:
    n_real: int = 50
    N: int = 2**14
    seed: int = 0
    probe_scale: float = 1.0
    max_rounds: int = 0
    check: bool = True
    tol: float = 1e-6


def solve_nonlinear(
    sim: LoadSimulator,
    channels,
    basis: BasisSet,
    sba: SpectralDensity,
    specs,
    n_loads: int = 1,
    opts: NonlinearOptions = NonlinearOptions(),
) -> CapacityResult:
    """Capacity for a possibly nonlinear simulator.

    A fixed ``B`` is estimated by basis probing on ``sim`` and the QP is
    solved. With ``max_rounds > 0`` the constraint functions are then
    re-evaluated at the solution and violated rows are rescaled to the
    observed values until the solution is feasible by Monte-Carlo.
    """
    cmap = estimate_B_dd(sim, channels, basis, opts.n_real, opts.N, opts.seed, opts.probe_scale)
    problem = build_problem(basis, sba, cmap, specs, n_loads)
    result = solve_qp(problem, basis, tol=opts.tol)
    b_load = np.array([s.b for s in specs])
    n2 = float(n_loads) ** 2
    history = []
    check_seed = sub_seed(opts.seed, 0xC4EC)
    if not (opts.check or opts.max_rounds):
        return result
    for rnd in range(opts.max_rounds + 1):
        vals, se = estimate_B_theta(sim, channels, basis, result.theta_star / n2, opts.n_real, opts.N, check_seed)
        slack = b_load - vals
        history.append({"round": rnd, "values": vals.tolist(), "stderr": se.tolist(), "slack": slack.tolist()})
        violated = vals > b_load + 2 * se
        if not violated.any() or rnd == opts.max_rounds:
            break
        B = problem.constraints.B.copy()
        predicted = B @ result.theta_star / n2
        for l in np.flatnonzero(violated):
            if predicted[l] > 0:
                B[l] *= vals[l] / predicted[l]
        cmap = ConstraintMap(B, cmap.provenance, cmap.stderr)
        problem = QPProblem(problem.A, problem.c_lin, problem.const, cmap, problem.b)
        result = solve_qp(problem, basis, tol=opts.tol)
    result.diagnostics["feasibility_checks"] = history
    if opts.max_rounds and violated.any():
        raise RefinementError(
            f"refinement did not reach Monte-Carlo feasibility in {opts.max_rounds} rounds",
            slack=slack,
            result=result,
        )
    return result


def validate(
    capacity_sd: SpectralDensity,
    sim: LoadSimulator,
    specs,
    n_real: int = 20,
    N: int = 2**14,
    seed: int = 0,
    n_loads: int = 1,
    keep_trace: bool = False,
) -> dict:
    """Monte-Carlo violation probabilities ``P(|Z_l| >= c_l)`` for one load.

    Power deviation realizations have density ``capacity_sd / n_loads**2``.
    Reports the fraction of post-warm-up samples violating each bound and
    a 95% halfwidth from the scatter of per-realization fractions.
    """
    channels = [s.channel for s in specs]
    per_load = capacity_sd * (1.0 / float(n_loads) ** 2)
    warm = sim.warmup(channels)
    length = warm + int(N)
    levels = resample_to_fft_bins(per_load, length)
    frac = np.zeros((len(specs), n_real))
    trace = None
    for start in range(0, n_real, CHUNK):
        idx = range(start, min(start + CHUNK, n_real))
        spec = np.stack([random_phase_spectrum(levels, length, _rng(sub_seed(seed, r))) for r in idx])
        u = scipy.fft.irfft(spec, n=length, axis=-1)
        zs = sim.run(channels, u, warmup=warm)
        for l, (s, z) in enumerate(zip(specs, zs)):
            frac[l, idx.start : idx.stop] = np.mean(np.abs(z) >= s.c, axis=-1)
            if keep_trace and trace is None and s.channel.kind == "storage":
                trace = z[0].copy()
    p = frac.mean(axis=1)
    hw = 1.96 * frac.std(axis=1, ddof=1) / np.sqrt(n_real) if n_real > 1 else np.zeros(len(specs))
    report = {
        "channels": [s.channel.kind for s in specs],
        "c": [float(s.c) for s in specs],
        "epsilon": [float(s.epsilon) for s in specs],
        "violation_probability": p.tolist(),
        "halfwidth": hw.tolist(),
        "n_real": int(n_real),
        "samples_per_realization": int(N),
        "warmup": int(warm),
    }
    if keep_trace:
        report["trace"] = trace
    return report
