"""
Exception hierarchy for the lbforge package.

Checkers report violations as data; the exceptions here are for inputs that
cannot be processed and constructions that do not apply.
"""

from typing import Any, Optional


class LbforgeError(Exception):
    """Base class for all lbforge errors."""


class GraphFormatError(LbforgeError):
    """Raised when a graph or gadget text file cannot be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class InvalidGraphError(LbforgeError):
    """Raised when a graph violates its structural invariants."""


class InvalidPartitionError(LbforgeError):
    """Raised when a partition or cut does not satisfy its invariants."""


class ConstructionInapplicable(LbforgeError):
    """Raised when an impossibility construction does not apply to a graph."""


class InfeasibleConfiguration(LbforgeError):
    """Raised when a protocol is requested on a graph that cannot support it."""


class ScenarioError(LbforgeError):
    """Raised for invalid scenario files or flag combinations."""


class MissingBehaviorError(LbforgeError):
    """Raised when a node has no behavior assigned."""


class UnknownNodeError(LbforgeError):
    """Raised when a node or copy id is not part of a topology or trace."""


class BundleFormatError(LbforgeError):
    """Raised when a report bundle is missing files or is not parseable."""


class VictimDidNotTerminate(LbforgeError):
    """Raised when a victim algorithm fails to terminate in a crash execution."""

    def __init__(self, message: str, trace: Any = None):
        self.trace = trace
        super().__init__(message)


class WireFormatError(LbforgeError, ValueError):
    """Raised when a payload does not decode as a protocol message."""
