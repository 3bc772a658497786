"""Exception types shared by all flatlab modules.

Each class carries an ``exit_code`` so the command-line front end can map
failures onto its documented taxonomy without inspecting messages.
"""


class FlatlabError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ValidationError(FlatlabError, ValueError):
    """Inputs violate a documented precondition."""

    exit_code = 2


class ScaleMismatchError(ValidationError):
    """Two objects live on incompatible dyadic scales."""


class AtomicSupportError(ValidationError):
    """The measure is supported on a single point (diameter zero)."""


class HypothesisRejected(ValidationError):
    """A numerical hypothesis required by a verifier does not hold."""


class BudgetError(FlatlabError):
    """A lattice, node or size budget would be exceeded."""

    exit_code = 3


class PropertyViolation(FlatlabError):
    """A checked inequality or invariant failed."""

    exit_code = 4
