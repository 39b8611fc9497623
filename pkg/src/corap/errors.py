"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition (shape, mode, rank...)."""


class DegenerateRank1Error(ArithmeticError):
    """Best rank-1 extraction was asked for on an all-zero matrix."""

    def __init__(self, message="cannot extract a rank-1 term from a zero matrix", component=None):
        if component is not None:
            message = f"{message} (component {component})"
        super().__init__(message)
        self.component = component


class StageError(RuntimeError):
    """Wraps a failure inside one stage of a multi-stage pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
