"""Exception types shared across the pipeline."""


class SynergyError(Exception):
    """Base class for errors raised by this package."""


class DecodeError(SynergyError, ValueError):
    """An encoded image could not be parsed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class SingularCovarianceError(SynergyError, ValueError):
    pass


class DivergedError(SynergyError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration, loss):
        super().__init__(f"training diverged at iteration {iteration} (loss={loss})")
        self.iteration = iteration
        self.loss = loss


class ConfigError(SynergyError, ValueError):
    pass


class MissingArtifactError(SynergyError):
    """A stage was run before the stage it depends on."""

    def __init__(self, stage, requires):
        super().__init__(
            f"stage '{stage}' needs the output of '{requires}'; run '{requires}' first"
        )
        self.stage = stage
        self.requires = requires
