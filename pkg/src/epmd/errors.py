"""Exception hierarchy.

``ValidationError`` subclasses signal bad inputs (CLI exit code 2); everything
else deriving from ``EpmdError`` is a runtime failure (exit code 3).
"""


class EpmdError(Exception):
    """Base class for all package errors."""


class ValidationError(EpmdError, ValueError):
    """Input data, configuration or arguments are invalid."""


class MalformedRecord(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownAttribute(ValidationError):
    pass


class DuplicateEpisodeId(ValidationError):
    pass


class UnmappedCategory(ValidationError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class InvalidConfig(ValidationError):
    pass


class SubsetTooLarge(ValidationError):
    pass


class EmptyCorpus(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NoNeighbors(EpmdError):
    pass


class EmptyGraph(ValidationError):
    pass


class SingularSystem(EpmdError):
    pass


class TooFewSamples(ValidationError):
    pass


class OneClassOnly(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class IdMisalignment(ValidationError):
    pass


class Misalignment(ValidationError):
    pass


class MissingProvenance(ValidationError):
    pass


class TooFewPairs(ValidationError):
    pass


class PlanError(ValidationError):
    pass


class TestLabelAccess(EpmdError):
    """Test-split labels were requested outside the evaluation phase."""

    __test__ = False


class SingleClassWarning(UserWarning):
    pass


class DegenerateFoldWarning(UserWarning):
    pass


class SkippedNodesWarning(UserWarning):
    pass
