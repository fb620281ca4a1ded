"""Exception hierarchy shared across the package.

The CLI maps these to process exit codes: validation errors exit 2,
budget errors exit 3, numerical blow-up exits 4.
"""


class BeamnfError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(BeamnfError):
    """Bad parameter, domain violation, or incompatible dimensions."""

    exit_code = 2


class DimensionError(ValidationError):
    """Mode-cutoff mismatch between operands."""


class BudgetError(BeamnfError):
    """An enumeration or degree budget was exceeded."""

    exit_code = 3


class BlowUpError(BeamnfError):
    """Numerical blow-up (NaN/Inf) during time integration.

    Carries the last time at which the state was finite.
    """

    exit_code = 4

    def __init__(self, message, last_finite_time=None):
        super().__init__(message)
        self.last_finite_time = last_finite_time


class FlowDomainError(BlowUpError):
    """A generator flow left its domain or the integrator step size underflowed."""


class StepRejectedError(BeamnfError):
    """A normal-form step failed its smallness gate and no override was given."""

    exit_code = 1

    def __init__(self, message, gate_record=None):
        super().__init__(message)
        self.gate_record = gate_record


class InsufficientDataError(ValidationError):
    """Not enough uncensored points for a fit."""
