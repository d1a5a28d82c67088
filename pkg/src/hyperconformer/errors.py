"""Exception types raised by the engine and the model code."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value violates a structural requirement."""


class CapacityError(ValueError):
    """A request exceeds a preallocated capacity, e.g. the position table."""


class InputError(ValueError):
    """Input data is outside the operation's domain (e.g. too short)."""


class InfeasibleTargetError(ValueError):
    """A CTC target cannot be aligned to the given number of frames."""


class UsageError(RuntimeError):
    """An API was called in a way it does not support."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step, loss):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss
