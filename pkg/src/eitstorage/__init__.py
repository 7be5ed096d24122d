"""Light storage in a three-level ensemble: simulation and pulse-shape optimization.

The package simulates the write / store / retrieve cycle of a weak signal
pulse in an ensemble with a strong control field, and finds the input pulse
shape that maximizes the overall efficiency by iterating time-reversed
retrievals.  A discretized linear-map oracle verifies the optimum spectrally.
"""

from .errors import (
    ConfigError,
    DegenerateRetrievalError,
    SolverDivergenceError,
    ValidationError,
    WindowMismatchError,
)
from .model import (
    Diagnostics,
    Envelope,
    Grid,
    MediumParams,
    ValidationReport,
    Window,
    eit_diagnostics,
    from_experimental,
    time_weights,
    to_experimental,
    validate_params,
)
from .optimizer import (
    ControlStudy,
    CycleResult,
    IterationRecord,
    OptimizationResult,
    control_study,
    iterate,
    reversed_control,
    run_cycle,
)
from .oracle import (
    CrosscheckReport,
    DiscreteMap,
    build_map,
    crosscheck,
    load_map,
    optimal_efficiency,
    save_map,
)
from .propagation import (
    EnergyLedger,
    FieldState,
    StageResult,
    Trajectory,
    retrieve_stage,
    solve_adiabatic,
    solve_full,
    spin_excitation,
    storage_decay,
    write_stage,
)
from .pulses import (
    PulseSpec,
    build,
    l2_distance,
    normalize_energy,
    read_envelope_csv,
    time_reverse,
    write_envelope_csv,
)

__version__ = "0.1.0"
