"""Exception hierarchy for locklens.

Every error carries a stable machine-readable ``code`` so the service layer
and the CLI can map failures onto HTTP responses / exit codes without string
matching on messages.
"""

from __future__ import annotations

__all__ = [
    "LockLensError",
    "MalformedRecordError",
    "TraceInvariantError",
    "MarkerNotFoundError",
    "UnbalancedSliceError",
    "WorkloadSyntaxError",
    "UnbalancedLockError",
    "UnboundRegisterError",
    "DeadlockError",
    "NotReexecutableError",
    "CyclicConstraintError",
    "OrderUnsatisfiableError",
    "MissingLabelError",
]


class LockLensError(Exception):
    """Base class; ``code`` is a stable identifier, ``details`` optional data."""

    code = "ERROR"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        d = {"code": self.code, "message": self.message}
        if self.details:
            d["details"] = {k: v for k, v in self.details.items()}
        return d


# --- trace model -----------------------------------------------------------

class MalformedRecordError(LockLensError):
    """A trace line is not valid JSON, misses fields, or has unknown fields."""

    code = "MALFORMED_RECORD"


class TraceInvariantError(LockLensError):
    """Structurally valid records that violate a whole-trace invariant
    (non-contiguous seq, duplicated acq_ord, unbalanced acquire/release...)."""

    code = "INVARIANT_VIOLATION"


class MarkerNotFoundError(LockLensError):
    code = "MARKER_NOT_FOUND"


class UnbalancedSliceError(LockLensError):
    """Slicing between markers would cut a critical section in half."""

    code = "UNBALANCED_SLICE"


# --- workload language ------------------------------------------------------

class WorkloadSyntaxError(LockLensError):
    code = "SYNTAX_ERROR"

    def __init__(self, message: str, line: int | None = None, **details):
        if line is not None:
            message = f"line {line}: {message}"
            details["line"] = line
        super().__init__(message, **details)


class UnbalancedLockError(LockLensError):
    """A thread body releases a lock it does not hold, or ends holding one."""

    code = "UNBALANCED_LOCK"


class UnboundRegisterError(LockLensError):
    """An expression or branch reads a register never loaded by a `read`."""

    code = "UNBOUND_REGISTER"


# --- execution --------------------------------------------------------------

class DeadlockError(LockLensError):
    """Simulation reached quiescence with blocked threads (wait-for cycle)."""

    code = "DEADLOCK"


class OrderUnsatisfiableError(LockLensError):
    """A replay policy's prescribed order can never be realized by the trace."""

    code = "ORDER_UNSATISFIABLE"


# --- analysis ---------------------------------------------------------------

class NotReexecutableError(LockLensError):
    """A critical section cannot be re-executed in isolation (a write whose
    value came from outside the section and was not captured)."""

    code = "NOT_REEXECUTABLE"


class CyclicConstraintError(LockLensError):
    """Defensive: ordering constraints derived from a topology form a cycle."""

    code = "CYCLIC_CONSTRAINT"


class MissingLabelError(LockLensError):
    """A timing computation asked for a Time label the replay did not produce."""

    code = "MISSING_LABEL"
