"""Exception types shared across the toolkit."""


class InvalidInputError(ValueError):
    pass


class InvalidStateError(RuntimeError):
    pass


class NumericDegeneracyError(ArithmeticError):
    pass


class CorruptCheckpointError(ValueError):
    pass


class DivergedTrainingError(RuntimeError):
    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class UndefinedMetricError(ValueError):
    pass


class MotParseError(ValueError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number
