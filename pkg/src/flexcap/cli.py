"""Command line front end.

Run directory layout::

    reference/  snd.csv  arma.json  manifest.json  <band>/sba.csv
    <mode>/     manifest.json  <band>/theta.json  <band>/capacity_sd.csv
                <band>/violations.json  <band>/violations.csv  <band>/temperature_trace.csv
    figures/    <band>_overlay.csv  net_demand_sd.csv  <mode>_<band>_temperature.csv

Exit codes: 0 success, 1 solver or estimation failure, 2 input error,
3 missing upstream artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import capacity as cap
from .config import RunConfig, ValidationError, load_config
from .loads import SimulationError
from .qp import QPError
from .refsd import (
    FitError,
    bandpass_reference,
    empirical_nd_sd,
    extrapolate,
    fit_arma21,
    read_net_demand_csv,
    synth_net_demand,
)
from .signalgen import sub_seed
from .spectra import FrequencyGrid, SpectralDensity, make_basis, snap_edges_per_hour

log = logging.getLogger("flexcap")

MODES = ("lti-model", "lti-data", "nonlinear-data")
EXIT_OK, EXIT_FAILURE, EXIT_INPUT, EXIT_INCOMPLETE = 0, 1, 2, 3

# seed schedule: sub_seed(seed, stage, band_index)
STAGE_REFERENCE, STAGE_ESTIMATION, STAGE_VALIDATION = 1, 2, 3


class IncompleteRun(RuntimeError):
    def __init__(self, missing):
        super().__init__("missing artifacts: " + ", ".join(str(m) for m in missing))
        self.missing = list(missing)


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _require(*paths: Path) -> None:
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise IncompleteRun(missing)


def _grid(cfg: RunConfig) -> FrequencyGrid:
    return FrequencyGrid(cfg.n_freq, cfg.load.delta_t_s)


def _basis(cfg: RunConfig, band_cfg):
    grid = _grid(cfg)
    lo, hi = band_cfg.per_hour
    return make_basis(grid, snap_edges_per_hour(grid, lo, hi, cfg.basis_count))


def _manifest(cfg: RunConfig, **extra) -> dict:
    return {"package_version": _version(), "config": cfg.model_dump(mode="json"), **extra}


def cmd_fit_reference(cfg: RunConfig, out: Path) -> dict:
    ref = cfg.reference
    native_dt = ref.native_delta_t_s
    if ref.source == "csv":
        series = read_net_demand_csv(ref.csv_path)
        source = {"source": "csv", "path": ref.csv_path}
    else:
        truth = ref.synthetic.model(native_dt)
        seed = sub_seed(cfg.seed, STAGE_REFERENCE)
        series = synth_net_demand(truth, ref.synthetic.length, seed)
        source = {"source": "synthetic", "model": truth.to_json(), "seed": seed}
    phi = empirical_nd_sd(series, native_dt, ref.segment_length)
    model = fit_arma21(phi)
    snd = extrapolate(model, _grid(cfg)) * ref.unit_scale
    rdir = out / "reference"
    rdir.mkdir(parents=True, exist_ok=True)
    snd.to_csv(rdir / "snd.csv")
    write_json(rdir / "arma.json", model.to_json())
    bands = {}
    for band_cfg in ref.passbands:
        sba = bandpass_reference(snd, band_cfg.passband())
        (rdir / band_cfg.name).mkdir(exist_ok=True)
        sba.to_csv(rdir / band_cfg.name / "sba.csv")
        bands[band_cfg.name] = {"per_hour": list(band_cfg.per_hour)}
    write_json(rdir / "manifest.json", _manifest(cfg, reference=source, bands=bands))
    return {"model": model, "snd": snd}


def _simulator(cfg: RunConfig, mode: str):
    return cfg.load.simulator("bilinear" if mode == "nonlinear-data" else "lti")


def cmd_capacity(cfg: RunConfig, mode: str, out: Path) -> dict:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    grid = _grid(cfg)
    specs = cfg.specs()
    channels = [s.channel for s in specs]
    sba_paths = [out / "reference" / b.name / "sba.csv" for b in cfg.reference.passbands]
    _require(*sba_paths)
    sim = _simulator(cfg, mode)
    est = cfg.estimation
    mdir = out / mode
    results, seeds = {}, {}
    for j, (band_cfg, path) in enumerate(zip(cfg.reference.passbands, sba_paths)):
        sba = SpectralDensity.read_csv(path, grid.delta_t)
        if sba.grid != grid:
            raise ValueError(f"{path} does not match the configured grid")
        basis = _basis(cfg, band_cfg)
        seed = sub_seed(cfg.seed, STAGE_ESTIMATION, j)
        seeds[band_cfg.name] = seed
        bdir = mdir / band_cfg.name
        try:
            if mode == "lti-model":
                cmap = cap.model_B(channels, sim.disc, basis)
                result = cap.solve_qp(cap.build_problem(basis, sba, cmap, specs, cfg.ensemble_n), basis, tol=cfg.solver.tol)
            elif mode == "lti-data":
                cmap = cap.estimate_B_dd(sim, channels, basis, est.n_real, est.N, seed, est.probe_scale)
                result = cap.solve_qp(cap.build_problem(basis, sba, cmap, specs, cfg.ensemble_n), basis, tol=cfg.solver.tol)
            else:
                opts = cap.NonlinearOptions(
                    est.n_real, est.N, seed, est.probe_scale, cfg.solver.refine_rounds, True, cfg.solver.tol
                )
                result = cap.solve_nonlinear(sim, channels, basis, sba, specs, cfg.ensemble_n, opts)
        except (QPError, cap.RefinementError) as exc:
            diag = {"error": str(exc), "band": band_cfg.name}
            for attr in ("theta", "residual", "slack"):
                val = getattr(exc, attr, None)
                if val is not None:
                    diag[attr] = np.asarray(val).tolist()
            write_json(bdir / "diagnostics.json", diag)
            raise
        payload = result.to_json()
        payload["basis_edges"] = [float(e) for e in basis.edges]
        payload["band"] = band_cfg.name
        write_json(bdir / "theta.json", payload)
        result.capacity_sd.to_csv(bdir / "capacity_sd.csv")
        results[band_cfg.name] = result
        log.info("%s/%s: active %s, kkt %.2e", mode, band_cfg.name, result.active_constraints, result.kkt_residual)
    write_json(
        mdir / "manifest.json",
        _manifest(
            cfg,
            mode=mode,
            seed_schedule={"estimation": seeds, "feasibility_check": "sub_seed(estimation, 0xC4EC)"},
            n_real=est.n_real,
            N=est.N,
            bands={
                k: {
                    "provenance": list(r.provenance),
                    "kkt_residual": r.kkt_residual,
                    "active_constraints": r.active_constraints,
                }
                for k, r in results.items()
            },
        ),
    )
    return results


def cmd_validate(cfg: RunConfig, mode: str, out: Path, inflate: float = 1.0) -> dict:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not inflate > 0:
        raise ValueError("inflate must be positive")
    grid = _grid(cfg)
    specs = cfg.specs()
    sim = _simulator(cfg, mode)
    paths = [out / mode / b.name / "capacity_sd.csv" for b in cfg.reference.passbands]
    _require(*paths)
    reports = {}
    for j, (band_cfg, path) in enumerate(zip(cfg.reference.passbands, paths)):
        sd = SpectralDensity.read_csv(path, grid.delta_t) * inflate
        seed = sub_seed(cfg.seed, STAGE_VALIDATION, j)
        report = cap.validate(
            sd, sim, specs, cfg.validation.n_real, cfg.validation.N, seed, cfg.ensemble_n, keep_trace=True
        )
        trace = report.pop("trace")
        report.update(seed=seed, inflate=inflate, band=band_cfg.name)
        bdir = out / mode / band_cfg.name
        suffix = "" if inflate == 1.0 else f"_x{inflate:g}"
        write_json(bdir / f"violations{suffix}.json", report)
        write_rows(
            bdir / f"violations{suffix}.csv",
            ["channel", "c", "epsilon", "violation_probability", "halfwidth"],
            [
                [k, repr(c), repr(e), repr(p), repr(h)]
                for k, c, e, p, h in zip(
                    report["channels"], report["c"], report["epsilon"], report["violation_probability"], report["halfwidth"]
                )
            ],
        )
        if trace is not None:
            write_rows(
                bdir / f"temperature_trace{suffix}.csv",
                ["k", "T_dev_C"],
                ([k, repr(float(v))] for k, v in enumerate(trace)),
            )
        reports[band_cfg.name] = report
    return reports


def _read_sd_csv(path: Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def cmd_figures(out: Path) -> list[Path]:
    """Overlay and time-series CSVs for every band found in a completed run."""
    ref_manifest = out / "reference" / "manifest.json"
    _require(ref_manifest, out / "reference" / "snd.csv")
    manifest = json.loads(ref_manifest.read_text())
    delta_t = float(manifest["config"]["load"]["delta_t_s"])
    fdir = out / "figures"
    missing, jobs = [], []
    for band in sorted(manifest["bands"]):
        sba = out / "reference" / band / "sba.csv"
        model = out / "lti-model" / band / "capacity_sd.csv"
        data = [out / m / band / "capacity_sd.csv" for m in ("lti-data", "nonlinear-data")]
        present = [p for p in data if p.exists()]
        for p in (sba, model):
            if not p.exists():
                missing.append(p)
        if not present:
            missing.append(data[0])
        jobs.append((band, sba, model, present[:1]))
    if missing:
        raise IncompleteRun(missing)

    written = []
    snd = _read_sd_csv(out / "reference" / "snd.csv")
    pos = snd[:, 0] >= 0
    per_hour = snd[pos, 0] / (2 * np.pi * delta_t) * 3600.0
    path = fdir / "net_demand_sd.csv"
    write_rows(path, ["freq", "s_nd"], ([repr(float(f)), repr(float(v))] for f, v in zip(per_hour, snd[pos, 1])))
    written.append(path)
    for band, sba, model, data in jobs:
        cols = [_read_sd_csv(p)[pos, 1] for p in (sba, model, data[0])]
        path = fdir / f"{band}_overlay.csv"
        write_rows(
            path,
            ["freq", "s_ba", "s_capacity_model", "s_capacity_data"],
            ([repr(float(f)), *(repr(float(c[i])) for c in cols)] for i, f in enumerate(per_hour)),
        )
        written.append(path)
        for mode in MODES:
            trace = out / mode / band / "temperature_trace.csv"
            if trace.exists():
                target = fdir / f"{mode}_{band}_temperature.csv"
                target.write_bytes(trace.read_bytes())
                written.append(target)
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flexcap", description="Spectral flexibility capacity of HVAC loads.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode=False):
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        if mode:
            p.add_argument("--mode", choices=MODES, default="lti-model")

    common(sub.add_parser("fit-reference", help="fit the net-demand model and write reference densities"))
    common(sub.add_parser("capacity", help="solve for the capacity density"), mode=True)
    p = sub.add_parser("validate", help="Monte-Carlo violation rates of a capacity density")
    common(p, mode=True)
    p.add_argument("--inflate", type=float, default=1.0, help="scale the capacity density before validating")
    p = sub.add_parser("figures", help="write plot data for a completed run")
    p.add_argument("--out", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "figures":
            for path in cmd_figures(args.out):
                print(path)
            return EXIT_OK
        cfg = load_config(args.config, args.seed)
        if args.command == "fit-reference":
            cmd_fit_reference(cfg, args.out)
        elif args.command == "capacity":
            cmd_capacity(cfg, args.mode, args.out)
        else:
            cmd_validate(cfg, args.mode, args.out, args.inflate)
    except IncompleteRun as exc:
        print(f"error: incomplete run, {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except FileNotFoundError as exc:
        msg = str(exc) if "reference data not found" in str(exc) else f"file not found: {exc.filename or exc}"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except (ValidationError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (QPError, cap.EstimationError, cap.RefinementError, FitError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
