"""Control and trial pulse construction, time reversal, and comparison utilities."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRetrievalError, ValidationError, WindowMismatchError
from .model import Envelope, Grid, Window, time_weights

__all__ = [
    "PulseSpec",
    "build",
    "time_reverse",
    "normalize_energy",
    "l2_distance",
    "write_envelope_csv",
    "read_envelope_csv",
]

log = logging.getLogger(__name__)

SHAPES = ("gaussian", "square", "two_step", "linear_ramp", "from_samples")


@dataclass(frozen=True)
class PulseSpec:
    """Parametric description of a pulse shape on a time window.

    Shapes and the fields they use:

    * ``gaussian``:    amplitude, center, width (standard deviation)
    * ``square``:      amplitude, optional t_on / t_off (default: whole window)
    * ``two_step``:    level1, level2, switch_time (level1 before the switch)
    * ``linear_ramp``: start_level, end_level
    * ``from_samples``: samples (must match the target window length)

    Square and two-step edges are snapped to the nearest grid point so the
    discontinuity lands on a sample; a snap that moves an edge is logged.
    Values at a jump are right-continuous.
    """

    shape: str
    amplitude: complex = 1.0
    center: float | None = None
    width: float | None = None
    t_on: float | None = None
    t_off: float | None = None
    level1: complex | None = None
    level2: complex | None = None
    switch_time: float | None = None
    start_level: complex | None = None
    end_level: complex | None = None
    samples: tuple | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown pulse shape {self.shape!r}; choose from {SHAPES}")


def _snap(window: Window, t: float, name: str) -> int:
    idx = round((t - window.start) / window.dt)
    idx = min(max(idx, 0), window.count - 1)
    snapped = window.start + idx * window.dt
    if abs(snapped - t) > 1e-9 * window.dt:
        log.info("pulse edge %s snapped from t=%g to grid point t=%g", name, t, snapped)
    return idx


def build(spec: PulseSpec, window: Window | Grid) -> Envelope:
    """Sample a pulse specification onto a window (or a grid's write window)."""
    if isinstance(window, Grid):
        window = window.write_window
    t = window.times()

    if spec.shape == "gaussian":
        if spec.center is None or spec.width is None or spec.width <= 0:
            raise ValidationError("gaussian pulse needs a center and a positive width")
        values = spec.amplitude * np.exp(-((t - spec.center) ** 2) / (2.0 * spec.width**2))
    elif spec.shape == "square":
        i_on = _snap(window, spec.t_on, "t_on") if spec.t_on is not None else 0
        i_off = _snap(window, spec.t_off, "t_off") if spec.t_off is not None else window.count - 1
        if i_off < i_on:
            raise ValidationError("square pulse has t_off before t_on")
        values = np.zeros(window.count, dtype=complex)
        values[i_on : i_off + 1] = spec.amplitude
    elif spec.shape == "two_step":
        if spec.level1 is None or spec.level2 is None or spec.switch_time is None:
            raise ValidationError("two_step pulse needs level1, level2 and switch_time")
        i_sw = _snap(window, spec.switch_time, "switch_time")
        values = np.full(window.count, complex(spec.level1))
        values[i_sw:] = spec.level2
    elif spec.shape == "linear_ramp":
        if spec.start_level is None or spec.end_level is None:
            raise ValidationError("linear_ramp pulse needs start_level and end_level")
        frac = (t - window.start) / window.duration
        values = (1.0 - frac) * complex(spec.start_level) + frac * complex(spec.end_level)
    elif spec.shape == "from_samples":
        if spec.samples is None:
            raise ValidationError("from_samples pulse needs samples")
        values = np.asarray(spec.samples, dtype=complex)
        if values.size != window.count:
            raise WindowMismatchError(
                f"from_samples has {values.size} samples for a window of {window.count}"
            )
        values = spec.amplitude * values
    else:  # pragma: no cover - guarded in PulseSpec
        raise ValidationError(f"unknown shape {spec.shape}")

    return Envelope(np.asarray(values, dtype=complex), window)


def time_reverse(env: Envelope, new_window: Window | None = None) -> Envelope:
    """Reverse a waveform in time (with conjugation) onto a new window.

    out(t) = conj(in(old_end - (t - new_start))).  On the shared uniform grid
    this is an exact sample-order reversal, so applying it twice returns the
    original envelope bit for bit.  The conjugation makes the operation the
    adjoint-side reversal for complex envelopes; real envelopes are simply
    mirrored.
    """
    if new_window is None:
        new_window = env.window
    if not env.window.same_shape(new_window):
        raise WindowMismatchError(
            "time_reverse needs equal-duration windows with the same sampling: "
            f"{env.window.count}@{env.window.dt} vs {new_window.count}@{new_window.dt}"
        )
    return Envelope(np.conj(env.samples[::-1]), new_window)


def normalize_energy(env: Envelope, target_energy: float) -> Envelope:
    """Rescale a waveform to the target energy, leaving its shape untouched."""
    if target_energy <= 0 or not math.isfinite(target_energy):
        raise ValidationError(f"target energy must be positive and finite, got {target_energy}")
    energy = env.energy()
    if energy <= 0 or not math.isfinite(energy):
        raise DegenerateRetrievalError(
            "degenerate retrieval: cannot normalize a zero-energy waveform"
        )
    return Envelope(env.samples * math.sqrt(target_energy / energy), env.window)


def l2_distance(a: Envelope, b: Envelope, phase_align: bool = False) -> float:
    """Relative L2 distance between two waveforms on matching sample grids.

    Computes sqrt(integral |a - exp(i phi) b|^2 dt) / sqrt(energy(a)), with the
    global phase phi chosen to minimize the distance when ``phase_align`` is
    set.  Comparing sign-flipped or phase-rotated copies of the same shape then
    gives zero.
    """
    if not a.window.same_shape(b.window):
        raise WindowMismatchError("l2_distance needs envelopes on matching sample grids")
    w = time_weights(a.window)
    ea = float(w @ np.abs(a.samples) ** 2)
    eb = float(w @ np.abs(b.samples) ** 2)
    inner = complex(w @ (np.conj(b.samples) * a.samples))
    cross = 2.0 * abs(inner) if phase_align else 2.0 * inner.real
    dist_sq = max(ea + eb - cross, 0.0)
    if ea == 0.0:
        return 0.0 if dist_sq == 0.0 else math.inf
    return math.sqrt(dist_sq) / math.sqrt(ea)


def write_envelope_csv(env: Envelope, path, config_hash: str | None = None):
    """Write a waveform as CSV with columns t, re, im.

    A ``# config=<hash>`` comment precedes the column header when a hash is
    given, so outputs can be matched to the configuration that produced them.
    """
    header = "t,re,im"
    if config_hash is not None:
        header = f"# config={config_hash}\n{header}"
    data = np.column_stack([env.times, env.samples.real, env.samples.imag])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def read_envelope_csv(path) -> Envelope:
    """Read a waveform CSV with columns (t, value) or (t, re, im)."""
    data = np.loadtxt(path, delimiter=",", skiprows=_count_header_lines(path), ndmin=2)
    if data.shape[1] not in (2, 3):
        raise ValidationError(f"expected 2 or 3 columns in {path}, got {data.shape[1]}")
    t = data[:, 0]
    if t.size < 2:
        raise ValidationError(f"waveform in {path} needs at least 2 samples")
    dt = float(t[1] - t[0])
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12 * max(abs(dt), 1.0)):
        raise ValidationError(f"waveform in {path} is not uniformly sampled")
    values = data[:, 1] + 1j * data[:, 2] if data.shape[1] == 3 else data[:, 1].astype(complex)
    return Envelope(values, Window(float(t[0]), dt, t.size))


def _count_header_lines(path) -> int:
    count = 0
    with open(path) as fh:
        for line in fh:
            stripped = line.strip()
            if stripped.startswith("#") or (stripped and not _looks_numeric(stripped.split(",")[0])):
                count += 1
            else:
                break
    return count


def _looks_numeric(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False
