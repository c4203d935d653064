"""Exception hierarchy. Diagnostics carry their witness so callers can report it."""

from __future__ import annotations

from typing import Any


class EqFlowError(Exception):
    """Base class for all package errors."""


class ValidationError(EqFlowError, ValueError):
    """Malformed input: bad graph, bad connection descriptor, unbalanced q."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class AssumptionError(EqFlowError):
    """An existence assumption fails. ``witness`` is JSON-serializable."""

    kind = "assumption"

    def __init__(self, message: str, witness: dict[str, Any] | None = None):
        super().__init__(message)
        self.witness = dict(witness or {})

    def to_dict(self) -> dict[str, Any]:
        return {"error": self.kind, "message": str(self), **self.witness}


class InfeasibleError(AssumptionError):
    kind = "infeasible"


class DeadNodeError(AssumptionError):
    kind = "dead_node"


class ProfitableLoopError(AssumptionError):
    kind = "profitable_loop"


class HallViolationError(AssumptionError):
    kind = "hall_violation"


class ConvergenceError(EqFlowError):
    """A numerical stage did not finish within its iteration cap."""

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class GuardError(EqFlowError):
    """An enumeration routine was asked to handle an instance above its size guard."""
