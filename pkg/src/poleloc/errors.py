"""Exception hierarchy shared by all modules."""


class PolelocError(Exception):
    pass


class InvalidArgumentError(PolelocError, ValueError):
    pass


class DegenerateGeometryError(PolelocError, ValueError):
    pass


class NoHypothesisError(PolelocError):
    pass


class CapacityError(PolelocError):
    pass


class ValidationError(PolelocError, ValueError):
    pass


class ParseError(PolelocError, ValueError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")
