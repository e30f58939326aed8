"""Exception types raised across the package."""


class PredselError(Exception):
    """Base class for all package errors."""


class SchemaError(PredselError, KeyError):
    """A parameter vector does not match the schema a model expects."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DomainError(PredselError, ValueError):
    """An argument lies outside the domain of an operation."""


class DivergenceError(PredselError, ArithmeticError):
    """ODE integration produced a non-finite state."""

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"integration diverged at t={self.time:.6g}")


class DegenerateError(PredselError, ValueError):
    """A sampler or estimator hit a degenerate configuration."""


class PropagationError(PredselError, RuntimeError):
    """Too many posterior samples failed during predictive propagation."""


class StageError(PredselError, RuntimeError):
    """A scenario pipeline stage failed; carries the stage and model id."""

    def __init__(self, stage, model_id, cause):
        self.stage = stage
        self.model_id = model_id
        self.cause = cause
        super().__init__(f"stage '{stage}' failed for model '{model_id}': {cause}")
