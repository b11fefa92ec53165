"""Exception types shared across the package."""


class FieldClusterError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(FieldClusterError, ValueError):
    """A parameter is missing, superfluous, or outside its legal range."""


class DataError(FieldClusterError, ValueError):
    """Input data violates a documented precondition (e.g. non-finite coordinates)."""


class ContractError(FieldClusterError, RuntimeError):
    """An internal invariant that callers rely on was broken."""


class PlyError(FieldClusterError, ValueError):
    """A PLY file cannot be parsed, or its header and body disagree."""
