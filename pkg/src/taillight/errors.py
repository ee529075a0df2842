"""Exception types shared across the engine.

Every contract violation raises a named subclass so callers (and the CLI,
which maps them to exit codes) can react without string matching.
"""


class TaillightError(Exception):
    """Base class for all engine errors."""


class NumericError(TaillightError):
    """Numeric contract violations (exit code 4 at the CLI)."""


class ZeroNorm(NumericError):
    pass


class DimensionMismatch(NumericError):
    pass


class ShapeMismatch(NumericError):
    pass


class NonPositiveTemperature(NumericError):
    pass


class NonPositiveEntry(NumericError):
    pass


class NonFiniteEvaluation(NumericError):
    pass


class NonFiniteGradient(NumericError):
    pass


class DataError(TaillightError):
    """Storage / ingestion contract violations (exit code 2 at the CLI)."""


class ManifestMissing(DataError):
    pass


class DimMismatch(DataError):
    pass


class TruncatedMatrix(DataError):
    pass


class DuplicateClassId(DataError):
    pass


class TextNotFound(DataError):
    pass


class InvalidRho(DataError):
    pass


class TooManyTasks(DataError):
    pass


class ConfigError(DataError):
    pass


class TreeError(TaillightError):
    """Language-tree construction errors."""


class MissingSlot(TreeError):
    pass


class EmptyResponse(TreeError):
    pass


class NoPhrases(TreeError):
    pass


class ClassCollision(TreeError):
    pass


class LlmUnavailable(TreeError):
    """LLM endpoint unreachable or returned a malformed body (exit code 3)."""


class GuidanceError(TaillightError):
    """Layer-weight / alignment model errors."""


class DegenerateTree(GuidanceError):
    pass


class UnknownClass(GuidanceError):
    pass


class EvalError(TaillightError):
    """Metric assembly errors."""


class TooFewClasses(EvalError):
    pass


class NoClasses(EvalError):
    pass


class IncompleteMatrix(EvalError):
    pass


class SingleTask(EvalError):
    pass
