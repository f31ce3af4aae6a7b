"""Exception hierarchy shared across the package."""


class NVAEError(Exception):
    """Base class for all package errors."""


class ShapeError(NVAEError, ValueError):
    pass


class DomainError(NVAEError, ValueError):
    pass


class DegenerateBatchError(NVAEError, ValueError):
    pass


class InputError(NVAEError, ValueError):
    pass


class NumericalError(NVAEError, FloatingPointError):
    pass


class ParseError(NVAEError, ValueError):
    """Malformed text input; ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


class CheckpointError(NVAEError, IOError):
    pass
