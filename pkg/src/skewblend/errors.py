"""Exception hierarchy shared by every module.

The CLI maps ``InputError`` to exit code 2 and ``VerificationFailure``
(and its subclasses) to exit code 1.
"""

from __future__ import annotations

from typing import Any


class SkewBlendError(Exception):
    """Base class."""


class InputError(SkewBlendError, ValueError):
    """Malformed input or an unmet precondition on the arguments."""


class ResourceError(SkewBlendError):
    """A configured resource cap (grid size, family size) was exceeded."""


class VerificationFailure(SkewBlendError):
    """A checked inequality failed. ``witness`` carries the evidence."""

    def __init__(self, message: str, witness: dict[str, Any] | None = None, stage: str | None = None):
        super().__init__(message)
        self.witness = dict(witness or {})
        self.stage = stage


class CertificateInvalid(VerificationFailure):
    """Declared constants contradict the data they describe."""
