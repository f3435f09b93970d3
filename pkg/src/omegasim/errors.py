"""Exception hierarchy shared by every omegasim module."""

from __future__ import annotations


class OmegaSimError(Exception):
    """Base class for all omegasim errors."""


# configuration spaces ------------------------------------------------------


class RangeError(OmegaSimError, ValueError):
    """A value lies outside the range of its dimension."""

    def __init__(self, dimension: str, value, detail: str = ""):
        self.dimension = dimension
        self.value = value
        msg = f"value {value!r} out of range for dimension {dimension!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SpaceMismatchError(OmegaSimError, ValueError):
    """Two points (or a point and a space) belong to different spaces."""


class NoHazardError(OmegaSimError):
    """The illegal set N is empty, so the hazard key is undefined (not zero)."""


class CapacityError(OmegaSimError):
    """An exhaustive analysis would exceed the configured enumeration cap."""


class DanglingArcError(OmegaSimError, ValueError):
    """A graph arc references a node or arc type that does not exist."""


class UnknownTokenError(OmegaSimError, ValueError):
    """A string could not be tokenized with the supplied dictionary."""


# plants ----------------------------------------------------------------------


class DisturbanceRangeError(OmegaSimError, ValueError):
    """A disturbance moved the plant outside its address space (strict mode)."""


class MappingError(OmegaSimError, KeyError):
    """A remap parameter does not name a registered divergence point."""


class DomainError(OmegaSimError, ZeroDivisionError):
    """A formula was evaluated outside its domain (e.g. zero denominator)."""


# storage -----------------------------------------------------------------------


class PatternNotFoundError(OmegaSimError, KeyError):
    """A repository address is not present."""


class ShapeError(OmegaSimError, ValueError):
    """Operands have incompatible lengths or supports."""


class MissingMaskError(OmegaSimError, ValueError):
    """Repairable compression was requested without a coverage mask."""


class ConflictError(OmegaSimError, ValueError):
    """Fragments or dimension groups overlap."""

    def __init__(self, message: str, ranges=()):
        self.ranges = list(ranges)
        super().__init__(message)


# controller --------------------------------------------------------------------


class InfeasibleStrategyError(OmegaSimError):
    """A strategy cannot be scheduled within the channel bandwidths."""


class NoEligibleStrategyError(OmegaSimError):
    """No candidate strategy passed the damage cap."""


class PreconditionError(OmegaSimError, ValueError):
    """An operation was invoked with a violated precondition."""


class EmptyMemoryError(OmegaSimError):
    """Memory-based planning was asked to recall from an empty repository."""


# channels ------------------------------------------------------------------------


class ChannelError(OmegaSimError, KeyError):
    """Unknown channel name."""


class UnrecoverableTransferError(OmegaSimError):
    """Duplex repair exceeded its retry cap."""


# omega units ----------------------------------------------------------------------


class ForbiddenCompositionError(OmegaSimError):
    """Layers were composed in a forbidden order (e.g. storage straight into plant)."""


class CompatibilityError(OmegaSimError, ValueError):
    """Layers of a unit disagree on address widths or spaces."""


class ImpermissibleDecompositionError(OmegaSimError):
    """A decomposition would lose content or change behavior."""

    def __init__(self, report):
        self.report = report
        super().__init__(report.reason)


class ConsolidationError(OmegaSimError):
    """Nested units cannot be consolidated (non-functional hookup)."""


# engine ---------------------------------------------------------------------------


class ScenarioError(OmegaSimError, ValueError):
    """Scenario text is malformed or violates a constraint."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class RunAbortedError(OmegaSimError):
    """A simulation run could not continue (e.g. unrecoverable transfer)."""
