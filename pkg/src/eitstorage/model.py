"""Dimensionless conventions, parameters, grids, and transparency-window diagnostics.

Conventions used throughout the package:

* Time is measured in units of ``1/gamma`` where ``gamma`` is the decay rate of
  the optical polarization, so ``gamma = 1`` in the default dimensionless setup.
  Position is measured in units of the medium length, ``z in [0, 1]``.
* In the comoving (retarded-time) frame the propagation equations reduce to

      dE/dz = i sqrt(d) P
      dP/dt = -gamma P + i sqrt(d) gamma E + i Omega(t) S
      dS/dt = -gamma_s S + i conj(Omega(t)) P

  with ``d`` the resonant optical depth, ``Omega`` the control Rabi frequency
  envelope and ``S`` the collective ground-state (spin-wave) coherence.  The
  conjugate on ``Omega`` in the spin equation only matters for complex control
  envelopes; it keeps the energy bookkeeping exact in that case.
* With this scaling a resonant weak signal and no control is attenuated by
  ``exp(-d)`` in amplitude (``exp(-2d)`` in intensity) across the medium.
* Waveform energies are ``gamma * integral |E(t)|^2 dt``; excitation stored in
  the medium is ``integral (|P|^2 + |S|^2) dz`` in the same normalization.

All time integrals use trapezoidal quadrature on the uniform sample grid, which
keeps energy bookkeeping, the optimization inner product and the spectral
oracle mutually consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError, WindowMismatchError

__all__ = [
    "Window",
    "MediumParams",
    "Grid",
    "Envelope",
    "Diagnostics",
    "ValidationReport",
    "time_weights",
    "validate_params",
    "require_valid",
    "eit_diagnostics",
    "from_experimental",
    "to_experimental",
]

# Heuristic explicit-stepping stability margin, calibrated against bisection on
# dt for reference configurations (see tests): blowup sets in near
# dt * rate ~ 2.2, slightly inside the 2.8 real-axis limit of the classical
# 4-stage method because the collective coupling is strongly non-normal.
# Accuracy also degrades well before the stability edge, so warn early.
STABILITY_MARGIN = 1.5

# Retrieval is essentially complete once the control pulse area satisfies
# integral |Omega|^2 dt / gamma >= COMPLETE_RETRIEVAL_FACTOR * d.
COMPLETE_RETRIEVAL_FACTOR = 10.0


@dataclass(frozen=True)
class Window:
    """Uniform time window: samples at ``start + k*dt`` for ``k = 0..count-1``."""

    start: float
    dt: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValidationError(f"window needs at least 2 samples, got {self.count}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"window dt must be positive and finite, got {self.dt}")

    @property
    def duration(self) -> float:
        return (self.count - 1) * self.dt

    @property
    def end(self) -> float:
        return self.start + self.duration

    def times(self) -> np.ndarray:
        return self.start + self.dt * np.arange(self.count)

    def same_shape(self, other: "Window") -> bool:
        """Same sampling (dt, count); the absolute start time may differ."""
        return self.count == other.count and math.isclose(self.dt, other.dt, rel_tol=1e-12)


def time_weights(window: Window) -> np.ndarray:
    """Trapezoidal quadrature weights for the window's sample grid."""
    w = np.full(window.count, window.dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@dataclass(frozen=True)
class MediumParams:
    """Ensemble parameters in dimensionless form.

    ``d``       resonant optical depth (amplitude transmission exp(-d) without control)
    ``gamma``   optical polarization decay rate; the base rate scale
    ``gamma_s`` spin-wave decay rate
    """

    d: float
    gamma: float = 1.0
    gamma_s: float = 0.0


@dataclass(frozen=True)
class Grid:
    """Uniform simulation grid for the write / store / retrieve sequence.

    Window durations are snapped to integer multiples of ``dt`` at
    construction; any field that moved is listed in ``rounded``.
    """

    t_write: float
    tau: float
    t_retrieve: float
    dt: float
    nz: int = 200
    rounded: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive and finite, got {self.dt}")
        moved = []
        for name, minimum in (("t_write", 1), ("tau", 0), ("t_retrieve", 1)):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value}")
            steps = max(minimum, round(value / self.dt))
            snapped = steps * self.dt
            if not math.isclose(snapped, value, rel_tol=1e-9, abs_tol=1e-12 * self.dt):
                moved.append(name)
            object.__setattr__(self, name, snapped)
        object.__setattr__(self, "rounded", tuple(moved))

    @property
    def dz(self) -> float:
        return 1.0 / (self.nz - 1)

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nz)

    @property
    def write_window(self) -> Window:
        return Window(-self.t_write, self.dt, round(self.t_write / self.dt) + 1)

    @property
    def retrieve_window(self) -> Window:
        return Window(self.tau, self.dt, round(self.t_retrieve / self.dt) + 1)

    @classmethod
    def default_for(cls, t_write: float, tau: float, t_retrieve: float | None = None,
                    nz: int = 200, min_write_samples: int = 400) -> "Grid":
        """Grid with dt chosen so the write window has at least ``min_write_samples`` steps."""
        if t_retrieve is None:
            t_retrieve = t_write
        return cls(t_write, tau, t_retrieve, dt=t_write / min_write_samples, nz=nz)


@dataclass
class Envelope:
    """Complex-valued waveform sampled on a uniform time window.

    Represents either a signal-field boundary value or a control Rabi
    frequency envelope.
    """

    samples: np.ndarray
    window: Window

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim != 1 or self.samples.size != self.window.count:
            raise WindowMismatchError(
                f"envelope has {self.samples.size} samples for a window of {self.window.count}"
            )

    @property
    def times(self) -> np.ndarray:
        return self.window.times()

    def energy(self) -> float:
        """Trapezoidal integral of |samples|^2 over the window."""
        return float(time_weights(self.window) @ np.abs(self.samples) ** 2)

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def copy(self) -> "Envelope":
        return Envelope(self.samples.copy(), self.window)


@dataclass(frozen=True)
class Diagnostics:
    """Transparency-window figures of merit for a storage configuration.

    ``vg_over_l``        group velocity divided by the medium length (a rate)
    ``delta_omega_eit``  transparency bandwidth
    ``compression_ratio``  (v_g / L) * t_s; fraction of the medium the pulse occupies
    ``bandwidth_ratio``  1 / (t_s * delta_omega_eit); pulse bandwidth vs window

    Both ratios well below one indicates the favorable regime where the pulse
    fits inside the medium and inside the transparency window at once.
    """

    vg_over_l: float
    delta_omega_eit: float
    compression_ratio: float
    bandwidth_ratio: float
    flags: tuple[str, ...] = ()

    def favorable(self, limit: float = 0.1) -> bool:
        return self.compression_ratio < limit and self.bandwidth_ratio < limit


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_on_error(self):
        if self.errors:
            raise ValidationError("; ".join(self.errors))


def _finite(*values) -> bool:
    return all(math.isfinite(v) for v in values)


def validate_params(params: MediumParams, grid: Grid, control: Envelope | None = None,
                    solver: str = "full") -> ValidationReport:
    """Check a configuration for hard errors and numerical-quality warnings.

    Errors make a simulation meaningless (negative rates, non-finite values,
    empty windows).  Warnings flag configurations that will run but are likely
    inaccurate or incomplete: a time step beyond the explicit-stepping
    stability margin, or retrieval control energy too small to empty the
    medium.
    """
    errors: list[str] = []
    warnings: list[str] = []

    if not _finite(params.d, params.gamma, params.gamma_s):
        errors.append("medium parameters must be finite")
    else:
        if params.d < 0:
            errors.append(f"negative optical depth d={params.d}")
        if params.gamma <= 0:
            errors.append(f"gamma must be positive, got {params.gamma}")
        if params.gamma_s < 0:
            errors.append(f"gamma_s must be non-negative, got {params.gamma_s}")
        elif params.gamma > 0 and params.gamma_s >= params.gamma:
            errors.append(
                f"gamma_s={params.gamma_s} must be below gamma={params.gamma} "
                "(spin coherence outliving the optical one is the physical regime)"
            )

    if not _finite(grid.t_write, grid.tau, grid.t_retrieve, grid.dt):
        errors.append("grid values must be finite")
    else:
        if grid.t_write <= 0 or grid.t_retrieve <= 0:
            errors.append("write and retrieve windows must have positive duration")
        if grid.tau < 0:
            errors.append(f"storage duration must be non-negative, got {grid.tau}")
        if grid.dt <= 0:
            errors.append(f"dt must be positive, got {grid.dt}")
    if grid.nz < 2:
        errors.append(f"nz must be at least 2, got {grid.nz}")

    omega_peak = 0.0
    if control is not None:
        if not np.all(np.isfinite(control.samples)):
            errors.append("control envelope contains non-finite samples")
        else:
            omega_peak = control.peak()
        if not control.window.same_shape(grid.write_window):
            errors.append(
                "control envelope window does not match the grid write window "
                f"({control.window.count} samples vs {grid.write_window.count})"
            )

    if not errors and params.gamma > 0:
        dz = grid.dz
        if solver == "full":
            # Dominant rates: polarization decay (with the collective-coupling
            # contribution of one z-slab) plus the Rabi frequency.
            rate = params.gamma * (1.0 + params.d * dz / 2.0) + omega_peak
        else:
            rate = params.gamma_s + omega_peak**2 / params.gamma * (1.0 + params.d * dz / 2.0)
        if rate > 0 and grid.dt * rate > STABILITY_MARGIN:
            warnings.append(
                f"time step exceeds stiffness bound: dt*rate = {grid.dt * rate:.3g} "
                f"> {STABILITY_MARGIN} for the {solver} solver; reduce dt"
            )
        if control is not None and params.d > 0:
            area = float(time_weights(control.window) @ np.abs(control.samples) ** 2)
            if area / params.gamma < COMPLETE_RETRIEVAL_FACTOR * params.d:
                warnings.append(
                    "control energy may be insufficient for complete retrieval: "
                    f"integral |Omega|^2 dt / gamma = {area / params.gamma:.3g} "
                    f"< {COMPLETE_RETRIEVAL_FACTOR} * d = {COMPLETE_RETRIEVAL_FACTOR * params.d:.3g}"
                )

    return ValidationReport(tuple(errors), tuple(warnings))


def require_valid(params: MediumParams, grid: Grid, control: Envelope | None = None,
                  solver: str = "full") -> ValidationReport:
    """Validate and raise :class:`ValidationError` on any hard error."""
    report = validate_params(params, grid, control, solver)
    report.raise_on_error()
    return report


def eit_diagnostics(params: MediumParams, control_peak: float, signal_duration: float) -> Diagnostics:
    """Figures of merit for storing a pulse of the given duration.

    With control Rabi frequency ``Omega`` the group velocity per medium length
    is ``Omega^2 / (d * gamma)`` and the transparency bandwidth is ``sqrt(d)``
    times that rate.
    """
    if params.d <= 0 or params.gamma <= 0:
        raise ValidationError("diagnostics require d > 0 and gamma > 0")
    if signal_duration <= 0:
        raise ValidationError("signal duration must be positive")
    if control_peak < 0:
        raise ValidationError("control peak must be non-negative")

    vg_over_l = control_peak**2 / (params.d * params.gamma)
    delta_omega = math.sqrt(params.d) * vg_over_l
    compression = vg_over_l * signal_duration
    flags: tuple[str, ...] = ()
    if delta_omega > 0:
        bandwidth = 1.0 / (signal_duration * delta_omega)
    else:
        bandwidth = math.inf
        flags = ("zero control: no transparency window",)
    return Diagnostics(vg_over_l, delta_omega, compression, bandwidth, flags)


def from_experimental(cell: dict, rates: dict, times: dict,
                      dt: float | None = None, nz: int = 200) -> tuple[MediumParams, Grid]:
    """Convert laboratory values to the dimensionless parameter set.

    ``cell``  {"length": L, "optical_depth": d}; the length fixes the unit of
              position (z is measured in medium lengths afterwards).
    ``rates`` {"gamma": .., "gamma_s": ..} in 1/time units.
    ``times`` {"t_write": .., "tau": .., "t_retrieve": ..} in time units.

    Time is rescaled by gamma (so gamma maps to 1) and durations to
    gamma * duration.  ``dt`` defaults to 400 steps across the write window.
    """
    length = float(cell["length"])
    depth = float(cell["optical_depth"])
    gamma = float(rates["gamma"])
    gamma_s = float(rates.get("gamma_s", 0.0))
    if length <= 0 or depth <= 0 or gamma <= 0:
        raise ValidationError("cell length, optical depth and gamma must be positive")
    if gamma_s < 0:
        raise ValidationError("gamma_s must be non-negative")
    t_write = float(times["t_write"])
    tau = float(times["tau"])
    t_retrieve = float(times.get("t_retrieve", times["t_write"]))
    if t_write <= 0 or t_retrieve <= 0 or tau < 0:
        raise ValidationError("window durations must be positive (tau may be zero)")

    params = MediumParams(d=depth, gamma=1.0, gamma_s=gamma_s / gamma)
    if dt is None:
        dt = t_write * gamma / 400.0
    grid = Grid(t_write * gamma, tau * gamma, t_retrieve * gamma, dt=dt, nz=nz)
    return params, grid


def to_experimental(params: MediumParams, grid: Grid, gamma: float, length: float) -> tuple[dict, dict, dict]:
    """Invert :func:`from_experimental` given the physical gamma and cell length."""
    if gamma <= 0 or length <= 0:
        raise ValidationError("gamma and length must be positive")
    cell = {"length": length, "optical_depth": params.d}
    rates = {"gamma": gamma * params.gamma, "gamma_s": gamma * params.gamma_s}
    times = {
        "t_write": grid.t_write / gamma,
        "tau": grid.tau / gamma,
        "t_retrieve": grid.t_retrieve / gamma,
    }
    return cell, rates, times
