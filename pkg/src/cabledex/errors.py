"""Error hierarchy shared across the package.

CLI exit-code mapping: ConfigError and its subclasses exit 2 (bad input or
configuration), RuntimeFailure and its subclasses exit 1 (a run that started
but failed), everything working exits 0.
"""

from __future__ import annotations


class CabledexError(Exception):
    """Base class for package errors."""


class ConfigError(CabledexError):
    """Invalid configuration, file content, or request."""


class FormatError(ConfigError):
    """Malformed file content."""


class UnsupportedVersionError(FormatError):
    """File or message declares a format version this reader does not speak."""


class IntegrityError(FormatError):
    """Digest check failed; carries the byte offset where the check failed."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class PlacementError(ConfigError):
    """Requested initial layout does not fit the world."""


class StructureError(ConfigError):
    """Hand configuration lacks the structure an operation requires."""


class RuntimeFailure(CabledexError):
    """A simulation or evaluation run failed after starting."""


class SolverFailure(RuntimeFailure):
    """Numerical failure in the rod solver; carries the offending particle."""

    def __init__(self, message: str, particle_index: int):
        super().__init__(message)
        self.particle_index = particle_index


class BudgetExceeded(RuntimeFailure):
    """A run hit its tick budget without reaching a terminal condition."""
