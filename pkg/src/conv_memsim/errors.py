"""Exception types shared across the package."""


class ConvSimError(Exception):
    pass


class ConfigError(ConvSimError, ValueError):
    """Invalid shapes, tiling parameters or kernel/input combination."""


class WrongKernelError(ConfigError):
    pass


class CapacityError(ConfigError):
    """A configuration needs more on-chip storage than the model provides."""

    def __init__(self, what: str, required: int, available: int):
        self.what = what
        self.required = required
        self.available = available
        super().__init__(f"{what} over capacity: {required} bytes required, {available} available")


class ModelViolation(ConvSimError, ValueError):
    """An access or parameter set breaks the bank-width memory model."""


class TensorFormatError(ConvSimError, ValueError):
    pass
