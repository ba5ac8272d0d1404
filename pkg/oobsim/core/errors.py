"""
Exceptions raised by the oobsim core.
"""
from typing import Optional


class OobsimError(Exception):
    """Base class for all oobsim errors."""
    pass


class LengthMismatch(OobsimError):
    """Raised when bit strings or SAS values of different lengths are combined."""
    pass


class CommitmentMismatch(OobsimError):
    """Raised when a decommitment does not open the commitment it claims to."""
    pass


class MalformedKey(OobsimError):
    """Raised when a public or private key has the wrong encoding."""
    pass


class InvalidState(OobsimError):
    """Raised when a session operation is invoked in the wrong state."""
    pass


class MalformedMessage(OobsimError):
    """Raised when a wireless message has an unexpected round or payload shape."""
    pass


class EmptyLayout(OobsimError):
    """Raised when a schedule is requested for a layout without nodes."""
    pass


class OutOfBounds(OobsimError):
    """Raised when an LED does not fit inside the camera frame."""
    pass


class DimensionMismatch(OobsimError):
    """Raised when two frames of different sizes are compared."""
    pass


class DetectionIncomplete(OobsimError):
    """Raised when fewer LEDs than expected are found at the floor threshold."""

    def __init__(self, found: int, expected: Optional[int], message: Optional[str] = None):
        self.found = found
        self.expected = expected
        super().__init__(message or f"Detected {found} of {expected} LEDs")


class ClusterInvalid(OobsimError):
    """Raised when a proximity cluster does not hold exactly one sync LED."""
    pass


class CaptureAborted(OobsimError):
    """Raised when the camera stops delivering frames in the middle of a batch."""
    pass


class BatchAborted(OobsimError):
    """Raised when a batch cannot complete its SAS transmission phase."""
    pass


class ConfigError(OobsimError):
    """Raised when a scenario or CLI configuration is invalid."""
    pass


class KeyUnwrapError(OobsimError):
    """Raised when wrapped keying material fails authentication under the link key."""
    pass
