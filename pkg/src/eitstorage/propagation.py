"""Three-stage write / store / retrieve dynamics with a closed energy ledger.

Two integrators are provided for the comoving-frame equations (see
:mod:`eitstorage.model` for the conventions):

* ``full``      keeps the optical polarization P as a dynamical variable.  P
  and S advance with the classical 4-stage explicit Runge-Kutta method on each
  z node; the signal field is slaved to P at every stage by trapezoidal
  integration along z with the inflow boundary value.
* ``adiabatic`` eliminates P by setting dP/dt = 0, i.e.
  P = i (sqrt(d) E + Omega S / gamma), which reduces the dynamics to

      dE/dz = -d E - sqrt(d) (Omega / gamma) S
      dS/dt = -(gamma_s + |Omega|^2 / gamma) S - sqrt(d) conj(Omega) E

  Here E is again slaved, now through a one-sided trapezoidal solve of the
  damped z equation.  The reduction is verified against the full model in the
  stiff limit by the test suite.

Both integrators are linear in the input field and in the initial spin wave,
and both accept batched inputs (a trailing batch axis) so that many boundary
waveforms propagate through one set of matrix operations.

Energy bookkeeping uses the exact identity obtained from the equations:

    gamma * d/dz |E|^2 + d/dt (|P|^2 + |S|^2) = -2 gamma |P|^2 - 2 gamma_s |S|^2

Integrated over the medium and a stage window this closes the budget: boundary
energy in equals boundary energy out, plus polarization and spin dissipation,
plus the change of excitation stored in the medium.  In the comoving frame the
field itself stores no energy, so the ledger's ``field_in_medium`` term is
identically zero; it is kept for interface completeness.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import SolverDivergenceError, ValidationError, WindowMismatchError
from .model import Envelope, Grid, MediumParams, Window, require_valid, time_weights

__all__ = [
    "FieldState",
    "EnergyLedger",
    "StageResult",
    "Trajectory",
    "solve_full",
    "solve_adiabatic",
    "write_stage",
    "storage_decay",
    "retrieve_stage",
    "spin_excitation",
]

log = logging.getLogger(__name__)

_DIVERGENCE_LIMIT = 1e12


@dataclass
class FieldState:
    """Instantaneous field and coherence arrays on the z grid.

    ``e`` is the slaved signal field, ``p`` the optical polarization and ``s``
    the spin wave.  Arrays are (nz,) for single runs or (nz, nb) for batches.
    """

    e: np.ndarray
    p: np.ndarray
    s: np.ndarray

    @classmethod
    def zeros(cls, nz: int, batch: int | None = None) -> "FieldState":
        shape = (nz,) if batch is None else (nz, batch)
        return cls(
            np.zeros(shape, dtype=complex),
            np.zeros(shape, dtype=complex),
            np.zeros(shape, dtype=complex),
        )


@dataclass(frozen=True)
class EnergyLedger:
    """Energy budget of one propagation stage.

    All terms share the normalization in which a boundary waveform carries
    energy ``gamma * integral |E|^2 dt`` and medium excitation is
    ``integral (|P|^2 + |S|^2) dz``.  ``in_energy`` includes any excitation
    already stored when the stage starts (relevant for retrieval).
    """

    in_energy: float
    leaked_or_out_energy: float
    p_dissipated: float
    s_dissipated: float
    stored_excitation: float
    field_in_medium: float = 0.0

    @property
    def imbalance(self) -> float:
        return self.in_energy - (
            self.leaked_or_out_energy
            + self.p_dissipated
            + self.s_dissipated
            + self.stored_excitation
            + self.field_in_medium
        )

    @property
    def relative_imbalance(self) -> float:
        scale = max(self.in_energy, 1e-300)
        return abs(self.imbalance) / scale


@dataclass
class Trajectory:
    """Result of integrating one stage window."""

    window: Window
    boundary_out: np.ndarray
    final: FieldState
    ledger: EnergyLedger | None
    e: np.ndarray | None = None
    p: np.ndarray | None = None
    s: np.ndarray | None = None


@dataclass
class StageResult:
    """Spin wave, boundary waveform and energy ledger of a write or retrieve stage."""

    spin_wave: np.ndarray
    boundary_out: Envelope
    ledger: EnergyLedger
    final: FieldState
    trajectory: Trajectory | None = None


@lru_cache(maxsize=32)
def _z_weights(nz: int) -> np.ndarray:
    w = np.full(nz, 1.0 / (nz - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@lru_cache(maxsize=32)
def _cumtrapz_matrix(nz: int) -> np.ndarray:
    """Matrix form of the cumulative trapezoidal integral from z=0."""
    dz = 1.0 / (nz - 1)
    ct = np.zeros((nz, nz))
    for j in range(1, nz):
        ct[j, : j + 1] = 1.0
        ct[j, 0] = 0.5
        ct[j, j] = 0.5
    return ct * dz


@lru_cache(maxsize=64)
def _adiabatic_system(d: float, gamma: float, nz: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form solve of the slaved adiabatic field equation.

    The trapezoidal discretization of dE/dz = -d E + source is the recurrence
    E[j+1] = a E[j] + g[j] with a = (1 - beta) / (1 + beta), beta = d dz / 2.
    Unrolling it gives E = apow * E(0) + Omega(t) * (mhat @ S) with constant
    arrays apow (powers of a) and mhat (the accumulated source weights).
    """
    dz = 1.0 / (nz - 1)
    beta = d * dz / 2.0
    if beta >= 1.0:
        raise ValidationError(
            f"z grid too coarse for d={d}: need d/(nz-1) < 2, got {d * dz:.3g}"
        )
    a = (1.0 - beta) / (1.0 + beta)
    j = np.arange(nz)
    apow = a**j
    # mhat[j, k] collects the contribution of S[k] to E[j]; S[k] enters the
    # recurrence through steps k-1 -> k and k -> k+1.
    kappa = (dz / 2.0) * math.sqrt(d) / gamma / (1.0 + beta)
    diff = j[:, None] - j[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        pow_jk = np.where(diff >= 0, a ** np.maximum(diff, 0), 0.0)
    t1 = np.where((j[None, :] >= 1) & (diff >= 0), pow_jk, 0.0)
    t2 = np.where(diff >= 1, np.where(diff >= 1, a ** np.maximum(diff - 1, 0), 0.0), 0.0)
    mhat = -kappa * (t1 + t2)
    return apow, mhat


def _as_batch(arr: np.ndarray | None, rows: int, name: str) -> tuple[np.ndarray, bool]:
    """Normalize an optional (rows,) / (rows, nb) array to 2-D."""
    if arr is None:
        return np.zeros((rows, 1), dtype=complex), False
    arr = np.asarray(arr, dtype=complex)
    if arr.ndim == 1:
        if arr.size != rows:
            raise WindowMismatchError(f"{name} has length {arr.size}, expected {rows}")
        return arr[:, None], False
    if arr.ndim == 2 and arr.shape[0] == rows:
        return arr, True
    raise WindowMismatchError(f"{name} has shape {arr.shape}, expected ({rows},) or ({rows}, nb)")


def _check_finite(arrays, step: int, t: float):
    for arr in arrays:
        m = np.abs(arr).max(initial=0.0)
        if not np.isfinite(m) or m > _DIVERGENCE_LIMIT:
            raise SolverDivergenceError(
                f"integration diverged at step {step} (t={t:.6g}); "
                "reduce dt or check the stability warning from validate_params",
                step=step,
                time=t,
            )


def _integrate(params: MediumParams, window: Window, omega: np.ndarray,
               ein: np.ndarray | None, p0: np.ndarray | None, s0: np.ndarray | None,
               nz: int, solver: str, record: bool, need_ledger: bool) -> Trajectory:
    """Advance one stage window; shared driver for both integrators."""
    nt = window.count
    dt = window.dt
    gamma, gamma_s, d = params.gamma, params.gamma_s, params.d
    sqrt_d = math.sqrt(d)

    omega = np.asarray(omega, dtype=complex)
    if omega.shape != (nt,):
        raise WindowMismatchError(f"control has shape {omega.shape}, expected ({nt},)")
    u, batched_u = _as_batch(ein, nt, "boundary input")
    p, batched_p = _as_batch(p0, nz, "initial polarization")
    s, batched_s = _as_batch(s0, nz, "initial spin wave")
    batched = batched_u or batched_p or batched_s
    nb = max(u.shape[1], p.shape[1], s.shape[1])
    if u.shape[1] != nb:
        u = np.broadcast_to(u, (nt, nb)).copy()
    if p.shape[1] != nb:
        p = np.broadcast_to(p, (nz, nb)).copy()
    if s.shape[1] != nb:
        s = np.broadcast_to(s, (nz, nb)).copy()
    p = p.copy()
    s = s.copy()

    adiabatic = solver == "adiabatic"
    if adiabatic:
        apow, mhat = _adiabatic_system(d, gamma, nz)
        apow_col = apow[:, None]
    else:
        if solver != "full":
            raise ValidationError(f"unknown solver {solver!r}; choose 'full' or 'adiabatic'")
        ct = _cumtrapz_matrix(nz)

    def field_full(pv, uv):
        return uv[None, :] + 1j * sqrt_d * (ct @ pv)

    def field_adiabatic(sv, om, uv):
        return apow_col * uv[None, :] + om * (mhat @ sv)

    def rhs(pv, sv, om, uv):
        if adiabatic:
            e = field_adiabatic(sv, om, uv)
            ds = -(gamma_s + abs(om) ** 2 / gamma) * sv - sqrt_d * np.conj(om) * e
            return None, ds, e
        e = field_full(pv, uv)
        dp = -gamma * pv + 1j * sqrt_d * gamma * e + 1j * om * sv
        ds = -gamma_s * sv + 1j * np.conj(om) * pv
        return dp, ds, e

    def slaved_p(e, sv, om):
        # Polarization implied by the adiabatic elimination; used for the
        # ledger and trajectory output only.
        return 1j * (sqrt_d * e + om * sv / gamma)

    boundary_out = np.empty((nt, nb), dtype=complex)
    wz = _z_weights(nz)
    p2 = np.empty((nt, nb)) if need_ledger else None
    s2 = np.empty((nt, nb)) if need_ledger else None
    e_hist = np.empty((nt, nz, nb), dtype=complex) if record else None
    p_hist = np.empty((nt, nz, nb), dtype=complex) if record else None
    s_hist = np.empty((nt, nz, nb), dtype=complex) if record else None

    def snapshot(n, e_now):
        boundary_out[n] = e_now[-1]
        if need_ledger:
            p_now = slaved_p(e_now, s, omega[n]) if adiabatic else p
            p2[n] = wz @ (np.abs(p_now) ** 2)
            s2[n] = wz @ (np.abs(s) ** 2)
        if record:
            e_hist[n] = e_now
            p_hist[n] = slaved_p(e_now, s, omega[n]) if adiabatic else p
            s_hist[n] = s

    excitation_start = _excitation(p, s, wz, adiabatic)

    times = window.times()
    for n in range(nt - 1):
        om0, om1 = omega[n], omega[n + 1]
        omh = 0.5 * (om0 + om1)
        u0, u1 = u[n], u[n + 1]
        uh = 0.5 * (u0 + u1)

        if adiabatic:
            _, k1, e_now = rhs(None, s, om0, u0)
            snapshot(n, e_now)
            _, k2, _ = rhs(None, s + 0.5 * dt * k1, omh, uh)
            _, k3, _ = rhs(None, s + 0.5 * dt * k2, omh, uh)
            _, k4, _ = rhs(None, s + dt * k3, om1, u1)
            s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            _check_finite((s,), n + 1, times[n + 1])
        else:
            k1p, k1s, e_now = rhs(p, s, om0, u0)
            snapshot(n, e_now)
            k2p, k2s, _ = rhs(p + 0.5 * dt * k1p, s + 0.5 * dt * k1s, omh, uh)
            k3p, k3s, _ = rhs(p + 0.5 * dt * k2p, s + 0.5 * dt * k2s, omh, uh)
            k4p, k4s, _ = rhs(p + dt * k3p, s + dt * k3s, om1, u1)
            p = p + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            s = s + (dt / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
            _check_finite((p, s), n + 1, times[n + 1])

    _, _, e_final = rhs(p, s, omega[-1], u[-1])
    snapshot(nt - 1, e_final)
    if adiabatic:
        p = slaved_p(e_final, s, omega[-1])

    ledger = None
    if need_ledger:
        wt = time_weights(window)
        in_bound = gamma * (wt @ (np.abs(u) ** 2))
        out_bound = gamma * (wt @ (np.abs(boundary_out) ** 2))
        p_diss = 2.0 * gamma * (wt @ p2)
        s_diss = 2.0 * gamma_s * (wt @ s2)
        excitation_end = _excitation(p, s, wz, adiabatic)
        if not batched:
            ledger = EnergyLedger(
                in_energy=float(in_bound[0] + excitation_start[0]),
                leaked_or_out_energy=float(out_bound[0]),
                p_dissipated=float(p_diss[0]),
                s_dissipated=float(s_diss[0]),
                stored_excitation=float(excitation_end[0]),
            )

    final = FieldState(e=_maybe_squeeze(e_final, batched),
                       p=_maybe_squeeze(p, batched),
                       s=_maybe_squeeze(s, batched))
    return Trajectory(
        window=window,
        boundary_out=_maybe_squeeze(boundary_out, batched),
        final=final,
        ledger=ledger,
        e=_maybe_squeeze(e_hist, batched) if record else None,
        p=_maybe_squeeze(p_hist, batched) if record else None,
        s=_maybe_squeeze(s_hist, batched) if record else None,
    )


def _excitation(p, s, wz, adiabatic: bool) -> np.ndarray:
    if adiabatic:
        return wz @ (np.abs(s) ** 2)
    return wz @ (np.abs(p) ** 2 + np.abs(s) ** 2)


def spin_excitation(spin_wave: np.ndarray) -> float:
    """Excitation integral of |S|^2 dz for a spin wave on the z grid."""
    spin_wave = np.asarray(spin_wave)
    return float(_z_weights(spin_wave.shape[0]) @ np.abs(spin_wave) ** 2)


def _maybe_squeeze(arr, batched: bool):
    if arr is None or batched:
        return arr
    return arr[..., 0]


def solve_full(state: FieldState, params: MediumParams, control: Envelope,
               boundary_in: Envelope | None = None, *, record: bool = False,
               need_ledger: bool = True) -> Trajectory:
    """Integrate the full three-variable model over the control's window."""
    nz = state.p.shape[0]
    ein = boundary_in.samples if boundary_in is not None else None
    if boundary_in is not None and not boundary_in.window.same_shape(control.window):
        raise WindowMismatchError("boundary input and control must share the stage window")
    return _integrate(params, control.window, control.samples, ein,
                      state.p, state.s, nz, "full", record, need_ledger)


def solve_adiabatic(state: FieldState, params: MediumParams, control: Envelope,
                    boundary_in: Envelope | None = None, *, record: bool = False,
                    need_ledger: bool = True) -> Trajectory:
    """Integrate the reduced model (polarization eliminated) over the window."""
    nz = state.s.shape[0]
    ein = boundary_in.samples if boundary_in is not None else None
    if boundary_in is not None and not boundary_in.window.same_shape(control.window):
        raise WindowMismatchError("boundary input and control must share the stage window")
    return _integrate(params, control.window, control.samples, ein,
                      None, state.s, nz, "adiabatic", record, need_ledger)


def write_stage(params: MediumParams, grid: Grid, control: Envelope, input_env: Envelope,
                solver: str = "full", record: bool = False) -> StageResult:
    """Map an input waveform into a spin wave; returns the leakage and ledger.

    The medium starts empty.  The boundary condition at z=0 is the input
    waveform; the waveform that exits at z=1 during the write window is the
    leakage (the part of the pulse that escaped before the control switched
    off).
    """
    report = require_valid(params, grid, control, solver)
    for message in report.warnings:
        log.warning("%s", message)
    if not (input_env.window.same_shape(grid.write_window)
            and math.isclose(input_env.window.start, grid.write_window.start,
                             rel_tol=1e-9, abs_tol=1e-12)):
        raise WindowMismatchError("input envelope must live on the grid's write window")

    traj = _integrate(params, grid.write_window, control.samples, input_env.samples,
                      None, None, grid.nz, solver, record, need_ledger=True)
    return StageResult(
        spin_wave=traj.final.s,
        boundary_out=Envelope(traj.boundary_out, grid.write_window),
        ledger=traj.ledger,
        final=traj.final,
        trajectory=traj if record else None,
    )


def storage_decay(spin_wave: np.ndarray, tau: float, gamma_s: float) -> np.ndarray:
    """Exact spin-wave decay over a storage interval with the control off."""
    if tau < 0:
        raise ValidationError(f"storage duration must be non-negative, got {tau}")
    if gamma_s < 0:
        raise ValidationError(f"gamma_s must be non-negative, got {gamma_s}")
    return np.asarray(spin_wave, dtype=complex) * math.exp(-gamma_s * tau)


def retrieve_stage(params: MediumParams, grid: Grid, control: Envelope,
                   spin_wave: np.ndarray, solver: str = "full",
                   record: bool = False) -> StageResult:
    """Convert a stored spin wave back into an output waveform at z=1."""
    report = require_valid(params, grid, None, solver)
    for message in report.warnings:
        log.warning("%s", message)
    if not (control.window.same_shape(grid.retrieve_window)
            and math.isclose(control.window.start, grid.retrieve_window.start,
                             rel_tol=1e-9, abs_tol=1e-12)):
        raise WindowMismatchError("retrieval control must live on the grid's retrieve window")
    spin_wave = np.asarray(spin_wave, dtype=complex)
    if spin_wave.shape[0] != grid.nz:
        raise WindowMismatchError(
            f"spin wave has {spin_wave.shape[0]} samples for nz={grid.nz}"
        )

    traj = _integrate(params, grid.retrieve_window, control.samples, None,
                      None, spin_wave, grid.nz, solver, record, need_ledger=True)
    return StageResult(
        spin_wave=traj.final.s,
        boundary_out=Envelope(traj.boundary_out, grid.retrieve_window),
        ledger=traj.ledger,
        final=traj.final,
        trajectory=traj if record else None,
    )
