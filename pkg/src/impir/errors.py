"""Exception hierarchy shared across the package."""


class ImpirError(Exception):
    """Base class for all impir errors."""


class DomainError(ImpirError):
    """Inputs outside the declared domain (bad index, length mismatch...)."""


class ConfigurationError(ImpirError):
    """Invalid worker counts, cluster layouts or topology settings."""


class FormatError(ImpirError):
    """Malformed serialized key, database file or wire frame."""


class CapacityError(ImpirError):
    """A resource budget (host memory, MRAM) would be exceeded."""


class WramBudgetError(CapacityError):
    """Per-DPU scratchpad budget exceeded; the configuration is infeasible."""


class StateError(ImpirError):
    """Operation called out of order (e.g. scatter before preload)."""


class ProtocolError(ImpirError):
    """Peer violated the query protocol or sent a mismatched domain."""


class TransportError(ImpirError):
    """Connection-level failure: connect, timeout, or truncated stream."""


class ConsistencyError(ImpirError):
    """The two servers disagree on database shape or protocol version."""
