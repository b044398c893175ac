"""Exception types shared across the toolkit.

Exit-code mapping used by the command line interface:
config/validation errors -> 1, file and format errors -> 2,
model adapter errors -> 3.
"""

from __future__ import annotations


class MupmError(Exception):
    """Base class for all toolkit errors."""


# -- configuration / validation (exit code 1) -------------------------------

class ConfigError(MupmError):
    pass


class InvalidSpec(ConfigError):
    pass


# -- files and formats (exit code 2) -----------------------------------------

class IoError(MupmError):
    pass


class ParseFailure(IoError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateKey(IoError):
    pass


class InconsistentK(IoError):
    pass


class MissingArtifact(IoError):
    pass


# -- model adapters (exit code 3) ---------------------------------------------

class ModelError(MupmError):
    pass


class DimensionMismatch(ModelError):
    pass


class NonFiniteOutput(ModelError):
    pass


class ReplayMiss(ModelError):
    pass


class HttpFailure(ModelError):
    pass


class UnsupportedKind(ModelError):
    pass


# -- numerical / statistical preconditions ------------------------------------

class EmptyInput(MupmError):
    pass


class EmptyAfterSubset(MupmError):
    pass


class TooFewReplicates(MupmError):
    pass


class TooFewObservations(MupmError):
    pass


class TooFewSamples(MupmError):
    pass


class DegenerateDesign(MupmError):
    pass


class DegenerateGroups(MupmError):
    pass


class ConstantBenchmark(MupmError):
    pass


class LengthMismatch(MupmError):
    pass


class NegativeInput(MupmError):
    pass


class ReductionMismatch(MupmError):
    pass


class NonFiniteDifference(MupmError):
    pass


EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_MODEL = 3


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the documented process exit code."""
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, IoError) or isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, ModelError):
        return EXIT_MODEL
    return EXIT_CONFIG
