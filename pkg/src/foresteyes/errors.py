"""Exception hierarchy shared by all modules.

Every error raised by this package derives from :class:`ForestEyesError`
and carries a short machine-readable ``category`` used by the CLI when
reporting failures.
"""


class ForestEyesError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class ValidationError(ForestEyesError):
    """An argument or precondition check failed."""

    category = "validation"


class FormatError(ForestEyesError):
    """A file could not be parsed or its payload is inconsistent."""

    category = "format"


class SchemaError(ForestEyesError):
    """Tabular input does not match the expected column schema."""

    category = "schema"


class IncompleteTaskError(ForestEyesError):
    """A task has fewer answers than the required redundancy."""

    category = "incomplete"


class MissingArtifactError(ForestEyesError):
    """An upstream pipeline artifact is absent."""

    category = "missing-artifact"
