"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class LineageError(Exception):
    exit_code = 2


class ValidationError(LineageError):
    """A relation, table or query violates shape or schema constraints."""


class MalformedTableError(ValidationError):
    pass


class MissingEdgeError(LineageError):
    pass


class QueryLimitError(LineageError):
    pass


class ReuseError(LineageError):
    pass


class StorageError(LineageError):
    exit_code = 3


class ChecksumError(StorageError):
    pass
