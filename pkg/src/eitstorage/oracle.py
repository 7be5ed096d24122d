"""Independent spectral verification of the pulse-shape optimization.

The write/store/retrieve cycle is linear in the input waveform, so on a fixed
grid it is a complex matrix acting on the input samples.  This module builds
that matrix column by column (one simulator run per unit-sample basis input,
executed as a single batched propagation), computes the best achievable
efficiency as the top eigenvalue of the weighted normal matrix, and compares
it against what the time-reversal iteration found.  The two routes share the
simulator but determine the optimum by entirely different computations.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError, WindowMismatchError
from .model import Envelope, Grid, MediumParams, Window, require_valid, time_weights
from .optimizer import OptimizationResult, reversed_control
from .propagation import _integrate, storage_decay
from .pulses import normalize_energy

__all__ = [
    "DiscreteMap",
    "CrosscheckReport",
    "build_map",
    "optimal_efficiency",
    "crosscheck",
    "save_map",
    "load_map",
]

log = logging.getLogger(__name__)

DENSE_EIGENSOLVE_LIMIT = 1000
POWER_ITERATION_TOL = 1e-10
DEGENERATE_GAP = 0.99


def _control_fingerprint(control: Envelope) -> str:
    digest = hashlib.sha256(np.ascontiguousarray(control.samples).tobytes())
    return digest.hexdigest()[:16]


@dataclass
class DiscreteMap:
    """Matrix form of the write/store/retrieve cycle on the sample grids.

    ``matrix[i, j]`` is output sample i produced by a unit value on input
    sample j, so applying the map is a plain matrix-vector product on sample
    values.  ``weights_in`` / ``weights_out`` are the trapezoidal quadrature
    weights that turn sample vectors into energies.
    """

    matrix: np.ndarray
    in_window: Window
    out_window: Window
    weights_in: np.ndarray
    weights_out: np.ndarray
    params: MediumParams
    solver: str
    control_fingerprint: str
    config_hash: str | None = None

    def apply(self, env: Envelope) -> Envelope:
        if not env.window.same_shape(self.in_window):
            raise WindowMismatchError("input does not match the map's input window")
        return Envelope(self.matrix @ env.samples, self.out_window)

    def efficiency_of(self, env: Envelope) -> float:
        out = self.matrix @ env.samples
        num = float(self.weights_out @ np.abs(out) ** 2)
        den = float(self.weights_in @ np.abs(env.samples) ** 2)
        return num / den


def build_map(params: MediumParams, grid: Grid, control_write: Envelope,
              solver: str = "adiabatic", config_hash: str | None = None) -> DiscreteMap:
    """Propagate every unit-sample basis input through one cycle, batched.

    The write-window sample count sets the matrix width; keep it at desk scale
    (a few hundred columns) since the eigensolve is dense.
    """
    require_valid(params, grid, control_write, solver).raise_on_error()
    win_in = grid.write_window
    win_out = grid.retrieve_window
    n_in = win_in.count
    if n_in > 1200:
        log.warning("building a %d-column map; expect this to be slow", n_in)

    basis = np.eye(n_in, dtype=complex)
    wr = _integrate(params, win_in, control_write.samples, basis,
                    None, None, grid.nz, solver, record=False, need_ledger=False)
    stored = storage_decay(wr.final.s, grid.tau, params.gamma_s)
    control_retr = reversed_control(control_write, win_out)
    rt = _integrate(params, win_out, control_retr.samples, None,
                    None, stored, grid.nz, solver, record=False, need_ledger=False)

    matrix = np.asarray(rt.boundary_out)
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("cycle map contains non-finite entries")
    return DiscreteMap(
        matrix=matrix,
        in_window=win_in,
        out_window=win_out,
        weights_in=time_weights(win_in),
        weights_out=time_weights(win_out),
        params=params,
        solver=solver,
        control_fingerprint=_control_fingerprint(control_write),
        config_hash=config_hash,
    )


def _weighted_normal_matrix(dmap: DiscreteMap) -> np.ndarray:
    sw_in = np.sqrt(dmap.weights_in)
    sw_out = np.sqrt(dmap.weights_out)
    b = dmap.matrix * sw_out[:, None] / sw_in[None, :]
    return b.conj().T @ b


def _top_modes(dmap: DiscreteMap, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Leading eigenvalues/eigenvectors of the weighted normal matrix."""
    n_in = dmap.matrix.shape[1]
    g = _weighted_normal_matrix(dmap)
    if not np.all(np.isfinite(g)):
        raise ValidationError("map produced a non-finite normal matrix")
    if n_in <= DENSE_EIGENSOLVE_LIMIT:
        vals, vecs = np.linalg.eigh(g)
        order = np.argsort(vals)[::-1][:k]
        return vals[order], vecs[:, order]
    return _power_iteration_modes(g, k)


def _power_iteration_modes(g: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Power iteration with one deflation step; tolerance POWER_ITERATION_TOL."""
    n = g.shape[0]
    vals = np.zeros(k)
    vecs = np.zeros((n, k), dtype=complex)
    work = g.copy()
    for mode in range(k):
        v = np.ones(n, dtype=complex) / math.sqrt(n)
        lam_prev = 0.0
        for _ in range(100_000):
            w = work @ v
            lam = float(np.real(np.vdot(v, w)))
            norm = np.linalg.norm(w)
            if norm == 0:
                lam = 0.0
                break
            v = w / norm
            if abs(lam - lam_prev) <= POWER_ITERATION_TOL * max(abs(lam), 1e-30):
                break
            lam_prev = lam
        vals[mode] = lam
        vecs[:, mode] = v
        work = work - lam * np.outer(v, v.conj())
    return vals, vecs


def optimal_efficiency(dmap: DiscreteMap) -> tuple[float, Envelope]:
    """Best efficiency over all inputs, and the input that achieves it.

    Maximizes ||A u||^2_w / ||u||^2_w by a dense Hermitian eigensolve of the
    weighted normal matrix (power iteration beyond 1000 columns).  The
    returned waveform has unit energy and its largest sample rotated to the
    positive real axis.
    """
    vals, vecs = _top_modes(dmap, k=1)
    eta = float(max(vals[0], 0.0))
    u = vecs[:, 0] / np.sqrt(dmap.weights_in)
    idx = int(np.argmax(np.abs(u)))
    if abs(u[idx]) > 0:
        u = u * np.exp(-1j * np.angle(u[idx]))
    env = Envelope(u, dmap.in_window)
    if env.energy() > 0:
        env = normalize_energy(env, 1.0)
    return eta, env


@dataclass
class CrosscheckReport:
    """Agreement between the iterative optimum and the spectral optimum."""

    eta_iterative: float
    eta_spectral: float
    relative_difference: float
    mode_overlap: float
    spectral_gap: float              # sigma_2 / sigma_1 of the cycle map
    predicted_cycle_ratio: float     # gap^2: efficiency-error factor per cycle
    predicted_pair_ratio: float      # gap^4: factor per composed-map application (two cycles)
    observed_ratios: tuple[float, ...]
    observed_pair_ratios: tuple[float, ...]
    slow_convergence: bool

    def as_dict(self) -> dict:
        return {
            "eta_iterative": self.eta_iterative,
            "eta_spectral": self.eta_spectral,
            "relative_difference": self.relative_difference,
            "mode_overlap": self.mode_overlap,
            "spectral_gap": self.spectral_gap,
            "predicted_cycle_ratio": self.predicted_cycle_ratio,
            "predicted_pair_ratio": self.predicted_pair_ratio,
            "observed_ratios": list(self.observed_ratios),
            "observed_pair_ratios": list(self.observed_pair_ratios),
            "slow_convergence": self.slow_convergence,
        }


def crosscheck(opt: OptimizationResult, dmap: DiscreteMap) -> CrosscheckReport:
    """Compare an optimization run against the spectral optimum of the map.

    Raises when the two were produced from different configurations.  The
    spectral gap (ratio sigma2/sigma1 of the two largest singular values)
    predicts the geometric convergence of the iteration: the efficiency error
    shrinks by gap^2 per cycle, i.e. gap^4 per application of the composed
    two-cycle map.  A gap above 0.99 flags slow, possibly stalled shape
    convergence.
    """
    meta = opt.meta
    if not meta:
        raise ValidationError("optimization result carries no configuration metadata")
    if meta["params"] != dmap.params or meta["solver"] != dmap.solver:
        raise ValidationError("optimizer and map were built from different configurations")
    if _control_fingerprint(meta["control"]) != dmap.control_fingerprint:
        raise ValidationError("optimizer and map used different control envelopes")
    if not meta["grid"].write_window.same_shape(dmap.in_window):
        raise ValidationError("optimizer and map use different write windows")

    vals, vecs = _top_modes(dmap, k=2)
    eta_spec = float(max(vals[0], 0.0))
    sigma1 = math.sqrt(max(vals[0], 0.0))
    sigma2 = math.sqrt(max(vals[1], 0.0))
    gap = sigma2 / sigma1 if sigma1 > 0 else math.nan

    u_spec = vecs[:, 0] / np.sqrt(dmap.weights_in)
    u_iter = opt.fixed_point_input.samples
    w = dmap.weights_in
    overlap_num = abs(np.vdot(u_spec * w, u_iter))
    overlap_den = math.sqrt(float(w @ np.abs(u_spec) ** 2) * float(w @ np.abs(u_iter) ** 2))
    overlap = overlap_num / overlap_den if overlap_den > 0 else 0.0

    eta_iter = opt.max_efficiency
    rel = abs(eta_iter - eta_spec) / eta_spec if eta_spec > 0 else math.inf

    etas = opt.efficiencies
    errors = eta_spec - etas
    ratios = []
    for k in range(len(errors) - 1):
        if errors[k] > 1e-12 * eta_spec and errors[k + 1] > 0:
            ratios.append(float(errors[k + 1] / errors[k]))
    pair_ratios = [ratios[k] * ratios[k + 1] for k in range(len(ratios) - 1)]

    return CrosscheckReport(
        eta_iterative=eta_iter,
        eta_spectral=eta_spec,
        relative_difference=rel,
        mode_overlap=float(overlap),
        spectral_gap=float(gap),
        predicted_cycle_ratio=float(gap**2) if math.isfinite(gap) else math.nan,
        predicted_pair_ratio=float(gap**4) if math.isfinite(gap) else math.nan,
        observed_ratios=tuple(ratios),
        observed_pair_ratios=tuple(pair_ratios),
        slow_convergence=bool(gap > DEGENERATE_GAP),
    )


def save_map(dmap: DiscreteMap, basepath) -> tuple[Path, Path]:
    """Persist a map as <base>.npz plus a small <base>.json header."""
    base = Path(basepath)
    npz_path = base.with_suffix(".npz")
    json_path = base.with_suffix(".json")
    np.savez(
        npz_path,
        matrix=dmap.matrix,
        weights_in=dmap.weights_in,
        weights_out=dmap.weights_out,
        in_window=np.array([dmap.in_window.start, dmap.in_window.dt, dmap.in_window.count]),
        out_window=np.array([dmap.out_window.start, dmap.out_window.dt, dmap.out_window.count]),
        params=np.array([dmap.params.d, dmap.params.gamma, dmap.params.gamma_s]),
    )
    header = {
        "n_out": int(dmap.matrix.shape[0]),
        "n_in": int(dmap.matrix.shape[1]),
        "dt": dmap.in_window.dt,
        "solver": dmap.solver,
        "control_fingerprint": dmap.control_fingerprint,
        "config_hash": dmap.config_hash,
    }
    json_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return npz_path, json_path


def load_map(basepath) -> DiscreteMap:
    base = Path(basepath)
    header = json.loads(base.with_suffix(".json").read_text())
    with np.load(base.with_suffix(".npz")) as data:
        in_w = data["in_window"]
        out_w = data["out_window"]
        d, gamma, gamma_s = data["params"]
        return DiscreteMap(
            matrix=data["matrix"],
            in_window=Window(float(in_w[0]), float(in_w[1]), int(in_w[2])),
            out_window=Window(float(out_w[0]), float(out_w[1]), int(out_w[2])),
            weights_in=data["weights_in"],
            weights_out=data["weights_out"],
            params=MediumParams(float(d), float(gamma), float(gamma_s)),
            solver=header["solver"],
            control_fingerprint=header["control_fingerprint"],
            config_hash=header.get("config_hash"),
        )
