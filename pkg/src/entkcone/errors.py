"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid architecture, training or experiment configuration."""


class UsageError(ValueError):
    """A call violated an operation's preconditions."""


class ShapeError(ValueError):
    """Input dimensions do not match the architecture."""


class FormatError(ValueError):
    """A binary file does not follow the expected layout."""


class LengthError(FormatError):
    """A binary payload is shorter or longer than its header declares."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during a computation."""

    def __init__(self, message, layer=None, index=None):
        super().__init__(message)
        self.layer = layer
        self.index = index


class DegenerateKernelError(ZeroDivisionError):
    """Kernel distance is undefined for a zero Gram matrix."""


class DivergenceError(FloatingPointError):
    """Training loss became non-finite or exceeded the divergence guard."""

    def __init__(self, iteration, loss):
        super().__init__(f"training diverged at iteration {iteration} (loss={loss!r})")
        self.iteration = iteration
        self.loss = loss


class CheckpointMissing(KeyError):
    """No checkpoint (or cached Gram matrix) exists for the requested iteration."""

    def __init__(self, iteration, what="checkpoint"):
        super().__init__(f"no {what} at iteration {iteration}")
        self.iteration = iteration

    def __str__(self):
        return self.args[0]
