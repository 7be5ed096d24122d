"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A configuration value violates a documented constraint."""


class WindowMismatchError(ValidationError):
    """Two envelopes (or an envelope and a grid) disagree on their time window."""


class DegenerateRetrievalError(RuntimeError):
    """Retrieval produced a zero-energy waveform, so the iteration cannot continue.

    Typically caused by a control field that never turns on during retrieval,
    or by a medium with zero optical depth.
    """


class SolverDivergenceError(RuntimeError):
    """Time stepping produced non-finite or explosively growing values."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class ConfigError(ValueError):
    """A run-configuration file is malformed or inconsistent."""
