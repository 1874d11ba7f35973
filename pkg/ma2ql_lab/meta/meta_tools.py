from enum import Enum


class Algorithm(Enum):
    """
    Algorithm tags accepted by experiment specs and written into run logs.
    """

    IQL = "iql"
    MA2QL = "ma2ql"
    MA2QL_DP = "ma2ql-dp"
    ALT_PI = "alt-pi"
    OPTIMAL = "optimal"

    @property
    def sample_based(self) -> bool:
        return self in (Algorithm.IQL, Algorithm.MA2QL)


class CurveColumns(Enum):
    """
    Enums for the curve CSV column header names.
    The order of the members is the order of the columns in every curve file.
    """

    ENV_STEPS = "env_steps"
    LEARN_STEPS = "learn_steps"
    MEAN_RETURN = "mean_return"
    STD_RETURN = "std_return"
    NASH_GAP = "nash_gap"
    SUP_Q_ERROR = "sup_q_error"

    @classmethod
    def header(cls) -> list[str]:
        return [column.value for column in cls]


class Ma2qlLabError(Exception):
    """
    Base class for every error raised on purpose by this package.
    """

    def __init__(self, message="An internal error occurred.") -> None:
        self.message = message
        super().__init__(self.message)


class ParameterError(Ma2qlLabError, ValueError):
    """
    An exception that should be raised when an argument is out of its valid range or has the wrong shape.
    """

    def __init__(self, message="Invalid parameter.") -> None:
        super().__init__(message)


class CapacityError(Ma2qlLabError):
    """
    An exception when a tensor would exceed the index type or the configured size limit.
    """

    def __init__(self, message="Capacity limit exceeded.") -> None:
        super().__init__(message)


class FormatError(Ma2qlLabError):
    """
    An exception when a file can't be parsed or fails validation after parsing.

    Arguments:
        location (str):
            Where the problem was found, e.g. the file path and the offending field.
    """

    def __init__(self, message="Malformed file.", location: str | None = None) -> None:
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class SpecError(Ma2qlLabError):
    """
    An exception when an experiment spec fails validation.
    Every violation found is kept so they can all be reported at once.
    """

    def __init__(self, violations: list[str]) -> None:
        self.violations = list(violations)
        lines = "\n".join(f"  - {violation}" for violation in self.violations)
        super().__init__(f"Invalid experiment spec ({len(self.violations)} problem(s)):\n{lines}")


class SchedulingError(Ma2qlLabError):
    """
    An exception when a trainer breaks its turn-isolation or update-budget contract.
    """

    def __init__(self, message="Trainer scheduling contract violated.") -> None:
        super().__init__(message)
