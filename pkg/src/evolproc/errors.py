"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class EvolProcError(Exception):
    """Base class for every error raised by :mod:`evolproc`."""


class DimensionError(EvolProcError, ValueError):
    pass


class GramError(EvolProcError, ValueError):
    pass


class DomainError(EvolProcError, ValueError):
    pass


class GridMismatchError(EvolProcError, ValueError):
    pass


class SingularResolventError(EvolProcError):
    """``lam I + A(t)`` is numerically singular."""

    def __init__(self, lam: complex, t: float, cond: float = float("inf")) -> None:
        self.lam = complex(lam)
        self.t = float(t)
        self.cond = float(cond)
        super().__init__(
            f"resolvent is numerically singular at t={self.t!r}, "
            f"lambda={self.lam!r} (condition estimate {self.cond:.3e})"
        )


class QuadratureError(EvolProcError):
    def __init__(self, message: str, residual: float) -> None:
        self.residual = float(residual)
        super().__init__(f"{message} (residual {self.residual:.3e})")


class ConvergenceError(EvolProcError):
    def __init__(self, message: str, history: list[float] | None = None) -> None:
        self.history = list(history or [])
        last = f"; last residual {self.history[-1]:.3e}" if self.history else ""
        super().__init__(message + last)


class BlowUpError(EvolProcError):
    def __init__(self, message: str, t: float, value: float) -> None:
        self.t = float(t)
        self.value = float(value)
        super().__init__(f"{message} at t={self.t!r} (norm {self.value:.3e})")


class ConfigError(EvolProcError, ValueError):
    def __init__(self, message: str, position: int | None = None, source: str | None = None) -> None:
        self.position = position
        self.source = source
        if position is not None:
            message = f"{message} at position {position}"
            if source is not None:
                message += f"\n  {source}\n  {' ' * position}^"
        super().__init__(message)
