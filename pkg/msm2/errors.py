"""
Exception hierarchy. Every error carries the process exit code the CLI
returns for it.
"""

from typing import Any, List, Optional


class Msm2Error(Exception):
    """Base class for all library errors"""
    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context


class DatasetValidationError(Msm2Error):
    """Trajectory data violates the state space rules"""
    exit_code = 1

    def __init__(self, message: str, violations: Optional[List[Any]] = None, **context: Any):
        super().__init__(message, **context)
        self.violations = violations or []


class NoSupportError(Msm2Error):
    """A pair (h, j) was never observed or is not defined in the tensor"""
    exit_code = 1


class VacuousConditioningError(Msm2Error):
    """No subject ever occupies the conditioning state on the grid"""
    exit_code = 1


class DegenerateProcessError(Msm2Error):
    """Every grid point of a log-rank process has zero variance"""
    exit_code = 1


class StorageError(Msm2Error):
    """Reading or writing a file failed, or the file is malformed"""
    exit_code = 2


class ConfigurationError(Msm2Error):
    """Invalid parameters, flags or configuration files"""
    exit_code = 3
