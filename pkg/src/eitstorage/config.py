"""Run-configuration files: YAML schema, validation and hashing.

A configuration fully determines a run; the SHA-256 hash of its canonical JSON
form is embedded in every output file so results can always be traced back to
(and refused against) the configuration that produced them.

Schema (keys with defaults may be omitted)::

    medium:                     # dimensionless ...
      d: 9.0
      gamma: 1.0
      gamma_s: 0.0
    # ... or laboratory values:
    # medium:
    #   experimental: {length: .., optical_depth: .., gamma: .., gamma_s: ..}

    grid:
      t_write: 30.0
      tau: 5.0
      t_retrieve: 30.0          # default: t_write
      dt: 0.075                 # default: t_write / 400
      nz: 200

    control:                    # one control pulse spec ...
      shape: square
      amplitude: 1.8
    # ... or several, for a control study:
    # controls:
    #   - {id: constant, shape: square, amplitude: 1.8}
    #   - {id: ramp, shape: linear_ramp, start_level: 2.4, end_level: 0.9}

    trial:
      shape: gaussian
      center: -15.0
      width: 3.0

    solver: adiabatic           # or full

    optimizer:
      epsilon_shape: 1.0e-4
      epsilon_eta: 1.0e-6
      max_iters: 50
      target_energy: null       # default: trial energy

    output:
      directory: out
      dump_trajectory: false
      deterministic: true

    sweep:                      # only used by the sweep command
      parameter: d              # d | gamma_s | tau | control_amplitude
      values: [1, 3, 9, 27]
      oracle: false
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .model import Envelope, Grid, MediumParams, from_experimental
from .pulses import PulseSpec, build

__all__ = ["RunConfig", "SweepSpec", "load_config", "parse_config", "config_hash"]

SWEEP_PARAMETERS = ("d", "gamma_s", "tau", "control_amplitude")

_PULSE_FIELDS = {f.name for f in dataclasses.fields(PulseSpec)}


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    oracle: bool = False


@dataclass
class RunConfig:
    medium: MediumParams
    grid: Grid
    control_specs: dict[str, PulseSpec]
    trial_spec: PulseSpec
    solver: str
    epsilon_shape: float
    epsilon_eta: float
    max_iters: int
    target_energy: float | None
    out_dir: Path
    dump_trajectory: bool
    deterministic: bool
    sweep: SweepSpec | None
    raw: dict
    hash: str

    def control(self, label: str | None = None) -> Envelope:
        specs = self.control_specs
        if label is None:
            label = next(iter(specs))
        return build(specs[label], self.grid.write_window)

    def controls(self) -> dict[str, Envelope]:
        return {label: build(spec, self.grid.write_window)
                for label, spec in self.control_specs.items()}

    def trial(self) -> Envelope:
        return build(self.trial_spec, self.grid.write_window)


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _section(raw: dict, name: str, required: bool = True) -> dict:
    value = raw.get(name)
    if value is None:
        if required:
            raise ConfigError(f"missing config section {name!r}")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return value


def _pulse_spec(section: dict, where: str) -> PulseSpec:
    if "shape" not in section:
        raise ConfigError(f"{where}: pulse spec needs a 'shape'")
    kwargs = {k: v for k, v in section.items() if k not in ("id",)}
    unknown = set(kwargs) - _PULSE_FIELDS
    if unknown:
        raise ConfigError(f"{where}: unknown pulse fields {sorted(unknown)}")
    if "samples" in kwargs and kwargs["samples"] is not None:
        kwargs["samples"] = tuple(kwargs["samples"])
    try:
        return PulseSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(raw: dict) -> RunConfig:
    """Build a validated RunConfig from a parsed YAML mapping."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a mapping")

    medium_raw = _section(raw, "medium")
    grid_raw = _section(raw, "grid")
    try:
        if "experimental" in medium_raw:
            exp = medium_raw["experimental"]
            medium, grid = from_experimental(
                cell={"length": exp["length"], "optical_depth": exp["optical_depth"]},
                rates={"gamma": exp["gamma"], "gamma_s": exp.get("gamma_s", 0.0)},
                times={"t_write": grid_raw["t_write"], "tau": grid_raw["tau"],
                       "t_retrieve": grid_raw.get("t_retrieve", grid_raw["t_write"])},
                dt=grid_raw.get("dt"),
                nz=int(grid_raw.get("nz", 200)),
            )
        else:
            medium = MediumParams(
                d=float(medium_raw["d"]),
                gamma=float(medium_raw.get("gamma", 1.0)),
                gamma_s=float(medium_raw.get("gamma_s", 0.0)),
            )
            t_write = float(grid_raw["t_write"])
            grid = Grid(
                t_write=t_write,
                tau=float(grid_raw["tau"]),
                t_retrieve=float(grid_raw.get("t_retrieve", t_write)),
                dt=float(grid_raw.get("dt", t_write / 400.0)),
                nz=int(grid_raw.get("nz", 200)),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid medium/grid configuration: {exc}") from exc

    if "controls" in raw:
        entries = raw["controls"]
        if not isinstance(entries, list) or not entries:
            raise ConfigError("'controls' must be a non-empty list of pulse specs")
        control_specs = {}
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict):
                raise ConfigError("each control entry must be a mapping")
            label = str(entry.get("id", f"control_{i}"))
            if label in control_specs:
                raise ConfigError(f"duplicate control id {label!r}")
            control_specs[label] = _pulse_spec(entry, f"controls[{i}]")
    else:
        control_specs = {"control": _pulse_spec(_section(raw, "control"), "control")}

    trial_spec = _pulse_spec(_section(raw, "trial"), "trial")

    solver = str(raw.get("solver", "adiabatic"))
    if solver not in ("full", "adiabatic"):
        raise ConfigError(f"unknown solver {solver!r}; choose 'full' or 'adiabatic'")

    opt_raw = _section(raw, "optimizer", required=False)
    out_raw = _section(raw, "output", required=False)

    sweep = None
    if "sweep" in raw:
        sweep_raw = _section(raw, "sweep")
        parameter = sweep_raw.get("parameter")
        if parameter not in SWEEP_PARAMETERS:
            raise ConfigError(
                f"unknown sweep parameter {parameter!r}; choose from {SWEEP_PARAMETERS}"
            )
        values = sweep_raw.get("values")
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep needs a non-empty list of values")
        sweep = SweepSpec(
            parameter=parameter,
            values=tuple(float(v) for v in values),
            oracle=bool(sweep_raw.get("oracle", False)),
        )

    target = opt_raw.get("target_energy")
    return RunConfig(
        medium=medium,
        grid=grid,
        control_specs=control_specs,
        trial_spec=trial_spec,
        solver=solver,
        epsilon_shape=float(opt_raw.get("epsilon_shape", 1e-4)),
        epsilon_eta=float(opt_raw.get("epsilon_eta", 1e-6)),
        max_iters=int(opt_raw.get("max_iters", 50)),
        target_energy=None if target is None else float(target),
        out_dir=Path(out_raw.get("directory", "out")),
        dump_trajectory=bool(out_raw.get("dump_trajectory", False)),
        deterministic=bool(out_raw.get("deterministic", True)),
        sweep=sweep,
        raw=raw,
        hash=config_hash(raw),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if raw is None:
        raise ConfigError(f"config file {path} is empty")
    return parse_config(raw)
