"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class FormatError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class InfeasibleAlignment(ValueError):
    pass


class TrainingFailure(RuntimeError):
    def __init__(self, epoch: int, message: str = "loss became non-finite"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class CorruptTokens(ValueError):
    pass


class UndefinedCorrelation(ValueError):
    pass


class MissingBaseline(LookupError):
    pass


class MissingConfig(LookupError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing configurations: " + ", ".join(map(str, self.missing)))
