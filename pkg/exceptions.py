class MultistageError(Exception):
    """Base class of every error raised on purpose. `exit_code` is what the CLI returns."""

    exit_code = 1


class ConfigError(MultistageError):
    exit_code = 2


class DatasetNotFoundError(ConfigError):
    pass


class StaleArtifactError(ConfigError):
    pass


class InvalidInputError(MultistageError, ValueError):
    exit_code = 2


class ShapeMismatchError(InvalidInputError):
    pass


class NonPositiveCoefficientError(InvalidInputError):
    pass


class NumericalError(MultistageError):
    pass


class SolverDivergedError(NumericalError):
    pass


class PicardDivergedError(NumericalError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class SingularSystemError(NumericalError):
    pass


class NonFiniteError(NumericalError):
    pass


class GradientCheckError(NumericalError):
    def __init__(self, message: str, offending: list[str]):
        super().__init__(message)
        self.offending = offending


class SampleFailedError(NumericalError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index
