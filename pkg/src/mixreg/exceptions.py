"""Exception hierarchy shared by every module."""

import numpy as np


class MixRegError(Exception):
    """Base class for all errors raised by mixreg."""


class ArgumentError(MixRegError, ValueError):
    """Invalid argument: wrong shape, out-of-range count, bad option."""


class DomainError(MixRegError, ValueError):
    """Input outside the mathematical domain of an operation."""


class SingularSystemError(MixRegError, np.linalg.LinAlgError):
    """Linear system could not be factorized, even after jitter escalation."""


class EmptyExpertError(MixRegError):
    """An expert carries (numerically) zero responsibility mass."""


class DegenerateDataError(MixRegError, ValueError):
    """Data with no spread where spread is required (e.g. zero total variance)."""


class InsufficientDataError(MixRegError, ValueError):
    """Too few samples for the requested computation."""


class FormatError(MixRegError, ValueError):
    """A file could not be parsed. The message names the line or byte offset."""


class ModelFormatError(FormatError):
    """A serialized model is malformed or violates a model invariant."""
