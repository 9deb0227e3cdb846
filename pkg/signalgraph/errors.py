"""Exception hierarchy for SignalGraph."""

from typing import Optional


class SignalGraphError(Exception):
    """Base class for every error raised by the package."""


class ScenarioError(SignalGraphError, ValueError):
    """Invalid generation bounds or an unroutable network."""


class ParseError(SignalGraphError):
    """Malformed network, trip or configuration text."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        location = ""
        if path is not None:
            location += f"{path}:"
        if line is not None:
            location += f"{line}:"
        super().__init__(f"{location} {message}".strip())


class NetworkValidationError(SignalGraphError):
    """A road network violates one of its structural invariants."""

    def __init__(self, invariant: str, detail: str):
        self.invariant = invariant
        self.detail = detail
        super().__init__(f"[{invariant}] {detail}")


class TripValidationError(NetworkValidationError):
    """A trip table violates one of its invariants."""


class SimulationError(SignalGraphError):
    """Invalid request made to the simulator."""


class ModelShapeError(SignalGraphError, ValueError):
    """Graph features or mode do not match the model parameters."""


class TapeError(SignalGraphError):
    """A differentiation tape was reused after backward."""


class NonFiniteGradientError(SignalGraphError, FloatingPointError):
    """The optimizer received NaN or infinite gradients."""


class ConfigError(SignalGraphError, ValueError):
    """Configuration failed validation; `key` names the offending entry."""

    def __init__(self, key: str, detail: str):
        self.key = key
        self.detail = detail
        super().__init__(f"{key}: {detail}")


class PairingError(SignalGraphError):
    """Two result sets cannot be paired trip by trip."""


class TransferError(SignalGraphError):
    """Per-intersection parameters were applied to another network."""
