"""Exception types raised by the solver stack."""

from typing import Optional


class SmagfemError(Exception):
    """Base class for all smagfem errors."""


class MeshError(SmagfemError, ValueError):
    """Invalid mesh input or connectivity."""

    def __init__(self, message: str, line: Optional[int] = None,
                 triangle: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.triangle = triangle


class ConfigError(SmagfemError, ValueError):
    """Invalid configuration key or value."""

    def __init__(self, message: str, key: Optional[str] = None,
                 line: Optional[int] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.key = key
        self.line = line


class SolverError(SmagfemError, RuntimeError):
    """Linear solve finished but did not meet its residual target."""

    def __init__(self, message: str, residual: Optional[float] = None):
        if residual is not None:
            message = f"{message} (relative residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class SingularSystemError(SolverError):
    """Factorization of the saddle-point matrix failed."""

    def __init__(self, message: str, suspected_cause: str):
        super().__init__(f"{message}; suspected cause: {suspected_cause}")
        self.suspected_cause = suspected_cause


class InstabilityError(SmagfemError, RuntimeError):
    """Discrete solution blew up (non-finite values or runaway energy)."""

    def __init__(self, reason: str, t: float, step: int):
        super().__init__(f"INSTABILITY at step {step} (t={t:.6g}): {reason}")
        self.reason = reason
        self.t = t
        self.step = step
