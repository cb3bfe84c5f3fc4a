"""Exception hierarchy shared by every app; each class maps to a process exit code."""


class LabError(Exception):
    """Base class for all laboratory errors"""
    exit_code = 1

    def __init__(self, message, key=None, **details):
        super().__init__(message)
        self.key = key
        self.details = details

    def diagnostic(self):
        """One-line diagnostic naming the offending config key when known"""
        message = str(self).splitlines()[0] if str(self) else self.__class__.__name__
        if self.key:
            return f'{self.key}: {message}'
        return message


class ConfigError(LabError, ValueError):
    exit_code = 2


class GeometryError(LabError, ValueError):
    exit_code = 3


class ConductivityError(LabError, ValueError):
    exit_code = 4


class SolverError(LabError, RuntimeError):
    exit_code = 5


class OperatorError(LabError, ValueError):
    exit_code = 6


class KernelError(LabError, ValueError):
    exit_code = 7


class ExperimentError(LabError, RuntimeError):
    exit_code = 8
