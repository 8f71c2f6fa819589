"""Exception hierarchy shared by all emtkit modules."""

from __future__ import annotations


class EmtError(Exception):
    """Base class for every error raised by emtkit."""


class UnknownNode(EmtError):
    """A primitive or expression references a node/branch missing from the layout."""


class SingularStamp(EmtError):
    """A primitive would produce a structurally invalid stamp."""


class DomainError(EmtError):
    """A behavioral expression was evaluated outside its domain."""


class InvalidSpec(EmtError):
    """A component specification violates one of its invariants."""


class NotInitialized(EmtError):
    """A stateful device was used before its steady-state initialization."""


class NonConvergence(EmtError):
    """Newton iteration did not converge.

    ``worst`` names the unknown with the largest normalized residual.
    """

    def __init__(self, message: str, worst: str | None = None, residual: float | None = None):
        super().__init__(message)
        self.worst = worst
        self.residual = residual


class SingularJacobian(EmtError):
    """LU factorization hit a zero (or numerically negligible) pivot."""

    def __init__(self, message: str, unknown: str | None = None):
        super().__init__(message)
        self.unknown = unknown


class StepTooSmall(EmtError):
    """A step at ``dt_min`` was rejected."""


class SimulationError(EmtError):
    """Wraps a step failure with the simulation time at which it happened."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (at t={time!r} s)")
        self.time = time


class WindowOutOfRange(EmtError):
    """A phasor window extends beyond the span of the waveform."""


class CaseError(EmtError):
    """Base for case-file diagnostics; carries a 1-based line and column."""

    kind = "error"

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"{self.kind} at line {line}, column {column}: {message}")


class CaseSyntaxError(CaseError):
    kind = "syntax error"


class CaseValidationError(CaseError):
    kind = "validation error"
