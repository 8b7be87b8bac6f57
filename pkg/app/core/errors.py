"""Exception hierarchy"""


class FourierSRError(Exception):
    """Base class for all library errors"""


class DimensionError(FourierSRError, ValueError):
    """Shapes that cannot be reconciled"""

    def __init__(self, message: str, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(message)


class ConfigurationError(FourierSRError, ValueError):
    """Invalid configuration value or combination"""


class FormatError(FourierSRError, ValueError):
    """Malformed container or image file"""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class ContractError(FourierSRError):
    """Caller violated an operation precondition"""


class CapabilityError(FourierSRError):
    """Requested kind is not implemented"""


class DivergenceError(FourierSRError):
    """Training produced a non-finite loss"""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at step {step}")
