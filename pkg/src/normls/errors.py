"""Exception types shared across the package."""


class NormlsError(Exception):
    """Base class for all package errors."""


class ShapeError(NormlsError, ValueError):
    pass


class DomainError(NormlsError, ArithmeticError):
    """Raised when an operation is evaluated outside its numerical domain."""


class ContractError(NormlsError, ValueError):
    """Raised when a caller violates a documented precondition."""


class ConfigError(NormlsError, ValueError):
    pass


class NumericalError(NormlsError, ArithmeticError):
    """Raised when an iterative procedure fails or produces non-finite values."""


class DataFormatError(NormlsError, ValueError):
    """Malformed on-disk data. ``offset`` is the byte position of the problem, if known."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
