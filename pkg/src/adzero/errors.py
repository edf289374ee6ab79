"""Exception hierarchy shared across the toolkit.

Everything derives from AdZeroError so callers can catch toolkit failures
with one clause; ContractError doubles as ValueError for precondition
violations on plain function arguments.
"""


class AdZeroError(Exception):
    """Base class for all toolkit errors."""


class ContractError(AdZeroError, ValueError):
    """A documented precondition or invariant was violated by the caller."""


class BankFormatError(AdZeroError):
    """Character-bank manifest or bank file could not be parsed."""


class EmptyBankError(AdZeroError):
    """No manifest entry yielded a usable portrait feature."""


class DetectionError(AdZeroError):
    """The face-detection port failed for a frame."""


class GeometryError(ContractError):
    """Degenerate rectangle or other invalid geometry."""


class PaletteCapacityError(AdZeroError):
    """More distinct characters in a clip than palette colors."""


class ParseError(AdZeroError):
    """A templated model reply could not be parsed."""


class GatewayError(AdZeroError):
    """Base class for chat-endpoint client failures."""


class TransportError(GatewayError):
    """Network-level failure that persisted through all retries."""


class GatewayTimeoutError(TransportError):
    """Request deadline exceeded on every attempt."""


class ProtocolError(GatewayError):
    """Endpoint answered with a non-2xx status; carries the body."""

    def __init__(self, status: int, body: str):
        super().__init__(f"endpoint returned HTTP {status}: {body[:500]}")
        self.status = status
        self.body = body


class StubScriptError(GatewayError):
    """Scripted stub had no remaining entry matching the prompt."""


class AlignmentError(AdZeroError):
    """Soundtrack alignment failed."""


class LowConfidenceError(AlignmentError):
    """Best RANSAC consensus fell below the failure cutoff."""

    def __init__(self, inlier_ratio: float, cutoff: float):
        super().__init__(
            f"alignment inlier ratio {inlier_ratio:.3f} below cutoff {cutoff:.3f}"
        )
        self.inlier_ratio = inlier_ratio
        self.cutoff = cutoff


class MetricError(AdZeroError):
    """A metric is undefined for the given inputs (e.g. all pairs excluded)."""
