"""Exception types shared across the package."""


class CrowdflowError(Exception):
    """Base class for all package-specific failures."""


class DomainError(CrowdflowError, ValueError):
    """An evaluation was requested outside a function's admissible domain."""


class ConfigError(CrowdflowError, ValueError):
    """A scenario config is malformed.  Carries section/line context."""

    def __init__(self, message, *, section=None, line=None):
        ctx = []
        if section is not None:
            ctx.append(f"section [{section}]")
        if line is not None:
            ctx.append(f"line {line}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.section = section
        self.line = line


class ValidationFailure(CrowdflowError, ValueError):
    """Problem data violates a mandatory admissibility hypothesis."""

    def __init__(self, message, *, hypothesis=None):
        super().__init__(message)
        self.hypothesis = hypothesis


class CflViolation(CrowdflowError, RuntimeError):
    """A transport substep was asked to run past its stability bound."""


class NewtonFailure(CrowdflowError, RuntimeError):
    """The implicit pressure solve did not converge."""


class SolverAbort(CrowdflowError, RuntimeError):
    """Time stepping cannot continue; state is dumped by the caller."""


class GridMismatch(CrowdflowError, ValueError):
    """Fields from different meshes were combined."""


class OutputLocked(CrowdflowError, OSError):
    """Another run owns the requested output directory."""
