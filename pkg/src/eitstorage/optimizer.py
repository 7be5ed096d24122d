"""Iterative time-reversal optimization of the input signal pulse shape.

One cycle writes an input waveform into the medium, stores it, and retrieves
it with the time-reversed control.  The next input is the time-reversed,
energy-renormalized retrieved waveform.  Because the write/store/retrieve map
is linear and retrieval with the reversed control realizes its adjoint (up to
time reversal), this loop is power iteration on a positive map: the efficiency
is a Rayleigh quotient that grows monotonically and converges to the best
achievable value for the chosen medium and control.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRetrievalError, ValidationError, WindowMismatchError
from .model import Envelope, Grid, MediumParams, Window, require_valid
from .propagation import (
    EnergyLedger,
    StageResult,
    retrieve_stage,
    spin_excitation,
    storage_decay,
    write_stage,
)
from .pulses import l2_distance, normalize_energy, time_reverse

__all__ = [
    "CycleResult",
    "IterationRecord",
    "OptimizationResult",
    "ControlStudyRow",
    "ControlStudy",
    "reversed_control",
    "run_cycle",
    "iterate",
    "control_study",
]

log = logging.getLogger(__name__)


def reversed_control(control_write: Envelope, retrieve_window: Window) -> Envelope:
    """Retrieval control: the write control played backwards on the new window.

    Sample k of the result is conj(Omega(-k*dt)), i.e. the reversed tail of the
    write control.  If the retrieve window is longer than the write window the
    extra samples are zero (control already over); if shorter, only the tail
    of the write control is used.
    """
    if not math.isclose(control_write.window.dt, retrieve_window.dt, rel_tol=1e-12):
        raise WindowMismatchError("write and retrieve windows must share dt")
    reversed_samples = np.conj(control_write.samples[::-1])
    out = np.zeros(retrieve_window.count, dtype=complex)
    m = min(retrieve_window.count, reversed_samples.size)
    out[:m] = reversed_samples[:m]
    return Envelope(out, retrieve_window)


@dataclass
class CycleResult:
    """Outcome of one write / store / retrieve cycle."""

    efficiency: float
    output: Envelope
    leakage: Envelope
    write_ledger: EnergyLedger
    retrieve_ledger: EnergyLedger
    storage_dissipated: float
    leakage_fraction: float
    dissipated_fraction: float
    residual_fraction: float

    @property
    def fraction_sum(self) -> float:
        return (self.efficiency + self.leakage_fraction
                + self.dissipated_fraction + self.residual_fraction)


@dataclass
class IterationRecord:
    """Per-iteration bookkeeping of the optimization loop.

    ``delta_vs_previous`` is the phase-aligned relative L2 distance between the
    next normalized input and the current one, i.e. how much the shape moved.
    """

    index: int
    efficiency: float
    leakage_fraction: float
    dissipated_fraction: float
    residual_fraction: float
    input: Envelope
    output: Envelope
    delta_vs_previous: float


@dataclass
class OptimizationResult:
    records: list[IterationRecord]
    converged: bool
    converged_shape: bool
    converged_efficiency: bool
    fixed_point_input: Envelope
    max_efficiency: float
    meta: dict = field(default_factory=dict)

    @property
    def efficiencies(self) -> np.ndarray:
        return np.array([r.efficiency for r in self.records])


def run_cycle(params: MediumParams, grid: Grid, control_write: Envelope,
              trial: Envelope, solver: str = "adiabatic",
              record: bool = False) -> CycleResult:
    """Run one full cycle and account for every part of the input energy.

    The retrieval control is the time-reversed write control.  Efficiency is
    the energy of the retrieved waveform over the energy of the input.  The
    remaining fractions (leakage, dissipation, residual excitation left in the
    medium) sum with the efficiency to one, up to solver tolerance.
    """
    report = require_valid(params, grid, control_write, solver)
    for message in report.warnings:
        log.warning("%s", message)

    wr = write_stage(params, grid, control_write, trial, solver=solver, record=record)

    spin_after_write = spin_excitation(wr.spin_wave)
    decay_amp = math.exp(-params.gamma_s * grid.tau)
    stored = storage_decay(wr.spin_wave, grid.tau, params.gamma_s)
    storage_dissipated = spin_after_write * (1.0 - decay_amp**2)

    control_retr = reversed_control(control_write, grid.retrieve_window)
    rt = retrieve_stage(params, grid, control_retr, stored, solver=solver, record=record)

    in_energy = wr.ledger.in_energy
    if in_energy <= 0:
        raise DegenerateRetrievalError("input waveform has zero energy")
    efficiency = rt.ledger.leaked_or_out_energy / in_energy
    # Polarization left at the write-stage cutoff is discarded by the stage
    # hand-off (only the spin wave survives storage); count it as residual.
    discarded_p = max(wr.ledger.stored_excitation - spin_after_write, 0.0)
    dissipated = (wr.ledger.p_dissipated + wr.ledger.s_dissipated
                  + storage_dissipated
                  + rt.ledger.p_dissipated + rt.ledger.s_dissipated)
    residual = discarded_p + rt.ledger.stored_excitation

    return CycleResult(
        efficiency=efficiency,
        output=rt.boundary_out,
        leakage=wr.boundary_out,
        write_ledger=wr.ledger,
        retrieve_ledger=rt.ledger,
        storage_dissipated=storage_dissipated,
        leakage_fraction=wr.ledger.leaked_or_out_energy / in_energy,
        dissipated_fraction=dissipated / in_energy,
        residual_fraction=residual / in_energy,
    )


def iterate(params: MediumParams, grid: Grid, control_write: Envelope, trial: Envelope,
            solver: str = "adiabatic", epsilon_shape: float = 1e-4,
            epsilon_eta: float = 1e-6, max_iters: int = 50,
            target_energy: float | None = None) -> OptimizationResult:
    """Repeat write/store/retrieve cycles, feeding back the reversed output.

    Stops once both the input shape and the efficiency have settled
    (``delta_vs_previous < epsilon_shape`` and ``|d efficiency| <
    epsilon_eta``) or after ``max_iters`` cycles.  With a near-degenerate pair
    of top modes the shape may keep drifting long after the efficiency has
    converged, so the two flags are also reported separately.
    """
    if not (grid.write_window.same_shape(grid.retrieve_window)):
        raise ValidationError(
            "iteration requires t_retrieve = t_write so the retrieved waveform "
            "maps back onto the write window"
        )
    if target_energy is None:
        target_energy = trial.energy()
    current = normalize_energy(trial, target_energy)

    records: list[IterationRecord] = []
    prev_eta: float | None = None
    converged = converged_shape = converged_eta = False
    next_input = current

    for k in range(max_iters):
        cycle = run_cycle(params, grid, control_write, current, solver=solver)
        if cycle.output.energy() <= 0:
            raise DegenerateRetrievalError(
                f"retrieval produced no output at iteration {k}: "
                "check that the control turns on during retrieval and d > 0"
            )
        next_input = normalize_energy(
            time_reverse(cycle.output, grid.write_window), target_energy
        )
        shape_delta = l2_distance(next_input, current, phase_align=True)
        records.append(IterationRecord(
            index=k,
            efficiency=cycle.efficiency,
            leakage_fraction=cycle.leakage_fraction,
            dissipated_fraction=cycle.dissipated_fraction,
            residual_fraction=cycle.residual_fraction,
            input=current,
            output=cycle.output,
            delta_vs_previous=shape_delta,
        ))
        converged_shape = shape_delta < epsilon_shape
        if prev_eta is None:
            # A shape fixed point on the very first cycle implies a fixed
            # efficiency as well (the map is linear and deterministic).
            converged_eta = converged_shape
        else:
            converged_eta = abs(cycle.efficiency - prev_eta) < epsilon_eta
        if converged_shape and converged_eta:
            converged = True
            break
        prev_eta = cycle.efficiency
        current = next_input

    return OptimizationResult(
        records=records,
        converged=converged,
        converged_shape=converged_shape,
        converged_efficiency=converged_eta,
        fixed_point_input=next_input,
        max_efficiency=max(r.efficiency for r in records),
        meta={
            "params": params,
            "grid": grid,
            "solver": solver,
            "control": control_write,
            "target_energy": target_energy,
        },
    )


@dataclass
class ControlStudyRow:
    control_id: str
    max_efficiency: float
    fixed_point_input: Envelope
    converged: bool
    result: OptimizationResult


@dataclass
class ControlStudy:
    rows: list[ControlStudyRow]

    @property
    def efficiencies(self) -> np.ndarray:
        return np.array([row.max_efficiency for row in self.rows])

    @property
    def relative_spread(self) -> float:
        """(max - min) / mean of the per-control maximum efficiencies."""
        eta = self.efficiencies
        mean = float(np.mean(eta))
        if mean == 0:
            return 0.0
        return float((eta.max() - eta.min()) / mean)


def _study_point(args) -> tuple[str, OptimizationResult]:
    params, grid, control, trial, solver, kwargs, label = args
    return label, iterate(params, grid, control, trial, solver=solver, **kwargs)


def control_study(params: MediumParams, grid: Grid, controls, trial: Envelope,
                  solver: str = "adiabatic", labels: list[str] | None = None,
                  n_jobs: int = 1, **iterate_kwargs) -> ControlStudy:
    """Optimize the input pulse for each control profile and compare optima.

    ``controls`` is a list of control envelopes (or a {label: envelope} dict).
    Different control profiles select different optimal input shapes; with
    negligible spin decay their maximum efficiencies agree, so the study's
    ``relative_spread`` is the interesting summary number.
    """
    if isinstance(controls, dict):
        labels = list(controls.keys())
        controls = list(controls.values())
    if labels is None:
        labels = [f"control_{i}" for i in range(len(controls))]
    if len(labels) != len(controls):
        raise ValidationError("labels and controls must have the same length")

    for label, control in zip(labels, controls):
        report = require_valid(params, grid, control, solver)
        for message in report.warnings:
            log.warning("control %s: %s", label, message)

    jobs = [(params, grid, control, trial, solver, iterate_kwargs, label)
            for label, control in zip(labels, controls)]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_study_point, jobs))
    else:
        results = [_study_point(job) for job in jobs]

    rows = [
        ControlStudyRow(
            control_id=label,
            max_efficiency=res.max_efficiency,
            fixed_point_input=res.fixed_point_input,
            converged=res.converged,
            result=res,
        )
        for label, res in results
    ]
    return ControlStudy(rows)
