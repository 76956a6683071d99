class HealNetError(Exception):
    """Base error. ``exit_code`` is what the command line returns for it."""

    exit_code = 1

    def __init__(self, message, details=None):
        super().__init__(message)
        self.message = message
        self.details = list(details or [])

    def __str__(self):
        if not self.details:
            return self.message
        return self.message + "\n" + "\n".join(f"  - {d}" for d in self.details)


class ConfigError(HealNetError):
    exit_code = 1


class UsageError(HealNetError):
    exit_code = 1


class DimensionError(HealNetError, ValueError):
    exit_code = 1


class ContractError(HealNetError, ValueError):
    exit_code = 1


class DataError(HealNetError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class FormatError(DataError):
    def __init__(self, message, path=None, offset=None):
        where = f"{path or '<stream>'} @ byte {offset}" if offset is not None else str(path or "")
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.offset = offset


class JoinError(DataError):
    pass


class DiscretizationError(DataError):
    pass


class NumericalError(HealNetError):
    exit_code = 3


class UndefinedCIndexError(NumericalError):
    pass


class NaNGradientError(NumericalError):
    def __init__(self, parameter):
        super().__init__(f"non-finite gradient for parameter '{parameter}', step aborted")
        self.parameter = parameter
