"""Exception types shared by the crypto, encoding, model and protocol layers."""
from __future__ import annotations

from enum import IntEnum


class FedHEError(ValueError):
    """Base class for every error raised by this project."""


class ParameterMismatchError(FedHEError):
    """Operands live in different rings, levels or scales."""


class DomainError(FedHEError):
    """An input lies outside the domain of the operation."""


class EncodingRangeError(FedHEError):
    """A value is too large to encode without wrapping mod t."""


class ScaleMismatchError(ParameterMismatchError):
    """Operands or chunks carry different fixed-point scale exponents."""


class NoiseOverflowError(FedHEError):
    """Ciphertext noise has (or is about to) overwhelm decryption."""


class ShapeError(FedHEError):
    pass


class ConfigError(FedHEError):
    pass


class WireFormatError(FedHEError):
    """Bytes on the wire do not parse as a frame, message or ciphertext."""


class ErrorCode(IntEnum):
    INTERNAL = 1
    STALE_ROUND = 2
    MANIFEST_DIVERGENCE = 3
    INCOMPLETE_ROUND = 4
    VERSION_MISMATCH = 5
    BAD_PHASE = 6
    ENCODING_RANGE = 7
    SCALE_MISMATCH = 8
    NOISE_OVERFLOW = 9


class ProtocolError(FedHEError):
    def __init__(self, code: ErrorCode, text: str):
        super().__init__(f"{code.name}: {text}")
        self.code = code
        self.text = text
