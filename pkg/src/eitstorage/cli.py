"""Command-line front end: config ingestion, experiment orchestration, output files.

Subcommands::

    eitstorage simulate   --config cfg.yaml [--out DIR] [--solver full|adiabatic]
    eitstorage optimize   --config cfg.yaml [--out DIR] [--solver ...] [--parallel N]
    eitstorage sweep      --config cfg.yaml [--out DIR] [--solver ...] [--parallel N]
    eitstorage oracle     --config cfg.yaml [--out DIR] [--solver ...]
    eitstorage crosscheck --config cfg.yaml [--out DIR] [--solver ...] [--map BASE]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.  Every
output file embeds the configuration hash; CSV files carry it as a leading
``# config=`` comment ahead of the single column-header line.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import oracle as oracle_mod
from .config import RunConfig, load_config
from .errors import ConfigError, DegenerateRetrievalError, SolverDivergenceError, ValidationError
from .model import Envelope, Grid, MediumParams, require_valid
from .optimizer import OptimizationResult, control_study, iterate, run_cycle
from .pulses import write_envelope_csv

log = logging.getLogger(__name__)


def _atomic_write_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_csv(path: Path, rows: np.ndarray, header: str, config_hash: str):
    tmp = path.with_name(path.name + ".tmp")
    np.savetxt(tmp, np.atleast_2d(rows), fmt="%.17g", delimiter=",",
               header=f"# config={config_hash}\n{header}", comments="")
    os.replace(tmp, path)


def _atomic_waveform(path: Path, env: Envelope, config_hash: str):
    tmp = path.with_name(path.name + ".tmp")
    write_envelope_csv(env, tmp, config_hash=config_hash)
    os.replace(tmp, path)


def _write_json(path: Path, payload: dict, config_hash: str):
    payload = dict(payload)
    payload["config_hash"] = config_hash
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _ledger_dict(ledger) -> dict:
    return {
        "in_energy": ledger.in_energy,
        "leaked_or_out_energy": ledger.leaked_or_out_energy,
        "p_dissipated": ledger.p_dissipated,
        "s_dissipated": ledger.s_dissipated,
        "stored_excitation": ledger.stored_excitation,
        "field_in_medium": ledger.field_in_medium,
        "relative_imbalance": ledger.relative_imbalance,
    }


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out) if args.out else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solver(cfg: RunConfig, args) -> str:
    return args.solver if args.solver else cfg.solver


def cmd_simulate(cfg: RunConfig, args) -> int:
    solver = _solver(cfg, args)
    control = cfg.control()
    trial = cfg.trial()
    require_valid(cfg.medium, cfg.grid, control, solver)
    out = _out_dir(cfg, args)

    cycle = run_cycle(cfg.medium, cfg.grid, control, trial, solver=solver,
                      record=cfg.dump_trajectory)
    _atomic_waveform(out / "input.csv", trial, cfg.hash)
    _atomic_waveform(out / "leakage.csv", cycle.leakage, cfg.hash)
    _atomic_waveform(out / "output.csv", cycle.output, cfg.hash)
    _write_json(out / "ledger.json", {
        "efficiency": cycle.efficiency,
        "leakage_fraction": cycle.leakage_fraction,
        "dissipated_fraction": cycle.dissipated_fraction,
        "residual_fraction": cycle.residual_fraction,
        "storage_dissipated": cycle.storage_dissipated,
        "write": _ledger_dict(cycle.write_ledger),
        "retrieve": _ledger_dict(cycle.retrieve_ledger),
        "solver": solver,
    }, cfg.hash)
    print(f"efficiency = {cycle.efficiency:.6f}  (files in {out})")
    return 0


def _write_iteration_files(out: Path, result: OptimizationResult, cfg_hash: str):
    rows = np.array([
        [r.index, r.efficiency, r.leakage_fraction, r.dissipated_fraction,
         r.delta_vs_previous]
        for r in result.records
    ])
    _atomic_csv(out / "iterations.csv", rows,
                "iteration,efficiency,leakage_fraction,dissipated_fraction,shape_delta",
                cfg_hash)
    for r in result.records:
        _atomic_waveform(out / f"input_{r.index:03d}.csv", r.input, cfg_hash)
        _atomic_waveform(out / f"output_{r.index:03d}.csv", r.output, cfg_hash)


def _summary_dict(result: OptimizationResult, solver: str) -> dict:
    return {
        "converged": result.converged,
        "converged_shape": result.converged_shape,
        "converged_efficiency": result.converged_efficiency,
        "iterations": len(result.records),
        "max_efficiency": result.max_efficiency,
        "final_shape_delta": result.records[-1].delta_vs_previous,
        "solver": solver,
    }


def cmd_optimize(cfg: RunConfig, args) -> int:
    solver = _solver(cfg, args)
    trial = cfg.trial()
    out = _out_dir(cfg, args)
    controls = cfg.controls()
    kwargs = dict(epsilon_shape=cfg.epsilon_shape, epsilon_eta=cfg.epsilon_eta,
                  max_iters=cfg.max_iters, target_energy=cfg.target_energy)

    if len(controls) == 1:
        control = next(iter(controls.values()))
        result = iterate(cfg.medium, cfg.grid, control, trial, solver=solver, **kwargs)
        _write_iteration_files(out, result, cfg.hash)
        _atomic_waveform(out / "fixed_point_input.csv", result.fixed_point_input, cfg.hash)
        _write_json(out / "summary.json", _summary_dict(result, solver), cfg.hash)
        print(f"converged efficiency = {result.max_efficiency:.6f} "
              f"after {len(result.records)} iterations (converged={result.converged})")
        return 0

    study = control_study(cfg.medium, cfg.grid, controls, trial, solver=solver,
                          n_jobs=args.parallel, **kwargs)
    table = []
    for row in study.rows:
        sub = out / row.control_id
        sub.mkdir(parents=True, exist_ok=True)
        _write_iteration_files(sub, row.result, cfg.hash)
        _atomic_waveform(sub / "fixed_point_input.csv", row.fixed_point_input, cfg.hash)
        _write_json(sub / "summary.json", _summary_dict(row.result, solver), cfg.hash)
        table.append({"control": row.control_id, "max_efficiency": row.max_efficiency,
                      "converged": row.converged})
    _write_json(out / "study.json", {
        "results": table,
        "relative_spread": study.relative_spread,
        "solver": solver,
    }, cfg.hash)
    print(f"{len(study.rows)} controls, efficiency spread = {study.relative_spread:.3%}")
    return 0


def _sweep_config(cfg: RunConfig, parameter: str, value: float):
    """Medium, grid and control for one sweep point."""
    medium, grid = cfg.medium, cfg.grid
    control = cfg.control()
    if parameter == "d":
        medium = dataclasses.replace(medium, d=value)
    elif parameter == "gamma_s":
        medium = dataclasses.replace(medium, gamma_s=value)
    elif parameter == "tau":
        grid = Grid(grid.t_write, value, grid.t_retrieve, grid.dt, grid.nz)
    elif parameter == "control_amplitude":
        peak = control.peak()
        if peak <= 0:
            raise ConfigError("cannot rescale a zero control envelope")
        control = Envelope(control.samples * (value / peak), control.window)
    else:
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    return medium, grid, control


def _sweep_point(job):
    cfg, parameter, value, solver, with_oracle = job
    medium, grid, control = _sweep_config(cfg, parameter, value)
    result = iterate(medium, grid, control, cfg.trial(), solver=solver,
                     epsilon_shape=cfg.epsilon_shape, epsilon_eta=cfg.epsilon_eta,
                     max_iters=cfg.max_iters, target_energy=cfg.target_energy)
    eta_oracle = rel = float("nan")
    if with_oracle:
        dmap = oracle_mod.build_map(medium, grid, control, solver=solver)
        eta_oracle, _ = oracle_mod.optimal_efficiency(dmap)
        rel = abs(result.max_efficiency - eta_oracle) / eta_oracle if eta_oracle > 0 else float("inf")
    return value, result.max_efficiency, eta_oracle, rel


def cmd_sweep(cfg: RunConfig, args) -> int:
    if cfg.sweep is None:
        raise ConfigError("sweep command needs a 'sweep' section in the config")
    solver = _solver(cfg, args)
    out = _out_dir(cfg, args)
    jobs = [(cfg, cfg.sweep.parameter, v, solver, cfg.sweep.oracle)
            for v in cfg.sweep.values]
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            points = list(pool.map(_sweep_point, jobs))
    else:
        points = [_sweep_point(job) for job in jobs]

    if cfg.sweep.oracle:
        rows = np.array(points)
        header = "value,eta_max,eta_oracle,relative_difference"
    else:
        rows = np.array([(v, eta) for v, eta, _, _ in points])
        header = "value,eta_max"
    _atomic_csv(out / "sweep.csv", rows, header, cfg.hash)
    _write_json(out / "sweep.json", {
        "parameter": cfg.sweep.parameter,
        "values": list(cfg.sweep.values),
        "eta_max": [p[1] for p in points],
        "eta_oracle": [p[2] for p in points] if cfg.sweep.oracle else None,
        "solver": solver,
    }, cfg.hash)
    print(f"swept {cfg.sweep.parameter} over {len(points)} points (files in {out})")
    return 0


def cmd_oracle(cfg: RunConfig, args) -> int:
    solver = _solver(cfg, args)
    out = _out_dir(cfg, args)
    dmap = oracle_mod.build_map(cfg.medium, cfg.grid, cfg.control(), solver=solver,
                                config_hash=cfg.hash)
    eta, optimal_input = oracle_mod.optimal_efficiency(dmap)
    oracle_mod.save_map(dmap, out / "map")
    _atomic_waveform(out / "optimal_input.csv", optimal_input, cfg.hash)
    _write_json(out / "oracle.json", {
        "eta_max": eta,
        "n_in": int(dmap.matrix.shape[1]),
        "n_out": int(dmap.matrix.shape[0]),
        "solver": solver,
    }, cfg.hash)
    print(f"spectral optimum efficiency = {eta:.6f}")
    return 0


def cmd_crosscheck(cfg: RunConfig, args) -> int:
    solver = _solver(cfg, args)
    out = _out_dir(cfg, args)
    if args.map:
        dmap = oracle_mod.load_map(args.map)
        if dmap.config_hash is not None and dmap.config_hash != cfg.hash:
            raise ConfigError(
                f"refusing crosscheck: map was built from config {dmap.config_hash}, "
                f"current config is {cfg.hash}"
            )
    else:
        dmap = oracle_mod.build_map(cfg.medium, cfg.grid, cfg.control(), solver=solver,
                                    config_hash=cfg.hash)
    result = iterate(cfg.medium, cfg.grid, cfg.control(), cfg.trial(), solver=solver,
                     epsilon_shape=cfg.epsilon_shape, epsilon_eta=cfg.epsilon_eta,
                     max_iters=cfg.max_iters, target_energy=cfg.target_energy)
    report = oracle_mod.crosscheck(result, dmap)
    _write_json(out / "crosscheck.json", report.as_dict(), cfg.hash)
    print(f"eta_iterative = {report.eta_iterative:.6f}, "
          f"eta_spectral = {report.eta_spectral:.6f}, "
          f"overlap = {report.mode_overlap:.6f}")
    if report.slow_convergence:
        print(f"note: near-degenerate top modes (gap {report.spectral_gap:.4f}); "
              "shape convergence may be slow")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
    "crosscheck": cmd_crosscheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eitstorage",
        description="Simulate and optimize write/store/retrieve light storage.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "run one write/store/retrieve cycle"),
        ("optimize", "run the iterative pulse-shape optimization"),
        ("sweep", "optimize across a parameter sweep"),
        ("oracle", "build the cycle map and compute the spectral optimum"),
        ("crosscheck", "compare the iteration against the spectral optimum"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML configuration file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--solver", choices=("full", "adiabatic"), default=None,
                       help="integrator (overrides config)")
        p.add_argument("--parallel", type=int, default=1,
                       help="worker processes for sweeps and control studies")
        if name == "crosscheck":
            p.add_argument("--map", default=None,
                           help="base path of a saved map (without extension)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ValidationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SolverDivergenceError, DegenerateRetrievalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
