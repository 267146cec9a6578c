"""Exception taxonomy shared by the library, CLI, and service.

Each category maps to a stable CLI exit code and a machine-parsable
``category: message`` line on stderr.
"""

from __future__ import annotations


class MimeforgeError(Exception):
    """Base class; `category` is the machine-parsable error tag."""

    category = "internal-error"
    exit_code = 1


class ConfigError(MimeforgeError):
    """Invalid configuration: bad values, unknown keys, malformed JSON."""

    category = "config-error"
    exit_code = 2


class MissingInputError(MimeforgeError):
    """A required input file or directory does not exist."""

    category = "missing-input"
    exit_code = 3


class ShapeMismatchError(MimeforgeError):
    """Tensor/grid dimensions are incompatible between components."""

    category = "shape-mismatch"
    exit_code = 4


class CorruptFileError(MimeforgeError):
    """A binary artifact failed magic/size/structure validation."""

    category = "corrupt-file"
    exit_code = 5


class CheckpointMismatchError(MimeforgeError):
    """Checkpoint architecture hash does not match the requested config."""

    category = "checkpoint-mismatch"
    exit_code = 6


class DegenerateInputError(MimeforgeError):
    """Input is structurally valid but degenerate (e.g. zero-range signal)."""

    category = "degenerate-input"
    exit_code = 7


class NumericalError(MimeforgeError):
    """A computation produced NaN/Inf where finiteness is contractual."""

    category = "numerical-error"
    exit_code = 8
