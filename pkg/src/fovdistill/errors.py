"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class GenerationFailure(RuntimeError):
    pass


class TrainingFailure(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
