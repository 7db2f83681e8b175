"""Exception types shared across the package."""


class ClassalignError(Exception):
    """Base class for all package errors."""


class ShapeError(ClassalignError, ValueError):
    """Array dimensions do not match what an operation requires."""


class ParameterError(ClassalignError, ValueError):
    """A hyperparameter or input value is outside its legal range."""


class NumericError(ClassalignError, ArithmeticError):
    """A non-finite value appeared where the run cannot continue."""


class DegenerateBatchError(ClassalignError, ValueError):
    """A loss received a batch with no valid samples on one side."""

    def __init__(self, side: str):
        self.side = side
        super().__init__(f"no valid samples in {side} batch")


class DegenerateGeometryError(ClassalignError, ValueError):
    """Two class centers coincide, making the compactness ratio undefined."""


class DataError(ClassalignError, ValueError):
    """A dataset is empty or otherwise unusable for the requested task."""


class CsvParseError(ClassalignError, ValueError):
    """A CSV file does not conform to the dataset schema."""

    def __init__(self, path, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class ConfigError(ClassalignError, ValueError):
    """A configuration document failed strict validation."""
