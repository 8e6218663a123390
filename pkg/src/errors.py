"""Exception hierarchy shared by the CLI and the API.

Every error carries a user-safe message and the process exit code the CLI
returns for it; the API translates the same code into an HTTP status.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3


class QuantbenchError(Exception):
    """Base error. `str(err)` is safe to surface to the user."""

    exit_code = EXIT_DATA

    def __init__(self, message, exit_code=None):
        super().__init__(message)
        if exit_code is not None:
            self.exit_code = exit_code


# --- usage / configuration (exit 1) ------------------------------------------


class ConfigError(QuantbenchError):
    exit_code = EXIT_USAGE


class PeriodOrderViolation(ConfigError):
    pass


class ZeroPeriod(ConfigError):
    pass


class EmptyGrid(ConfigError):
    pass


class InvalidCandidate(ConfigError):
    pass


# --- data (exit 2) -----------------------------------------------------------


class DataError(QuantbenchError):
    exit_code = EXIT_DATA


class MalformedCsv(DataError):
    pass


class EmptySeries(DataError):
    pass


class DuplicateDate(DataError):
    pass


class NetworkError(DataError):
    pass


class UnknownTicker(DataError):
    def __init__(self, ticker):
        super().__init__(f"Provider has no data for ticker '{ticker}'.")
        self.ticker = ticker


class NoDataForTicker(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class PeriodTooLong(DataError):
    pass


class MismatchedSource(DataError):
    pass


class MisalignedInputs(DataError):
    pass


class MisalignedCurves(DataError):
    pass


class EmptyInput(DataError):
    pass


class TooFewValues(DataError):
    pass


class ZeroDenominator(DataError):
    pass


# --- models (exit 3) ---------------------------------------------------------


class ModelError(QuantbenchError):
    exit_code = EXIT_MODEL


class EmptyMatrix(ModelError):
    pass


class TooFewRows(ModelError):
    pass


class SingularSystem(ModelError):
    pass


class DegenerateInput(ModelError):
    pass


class KTooLarge(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class ZeroVariance(ModelError):
    pass


class TooFewRowsForFolds(ModelError):
    pass


class PredictiveStepError(ModelError):
    """A model failure inside the walk-forward loop, tagged with its day."""

    def __init__(self, day_index, day, cause):
        super().__init__(f"Model failed on evaluation day {day_index} ({day}): {cause}")
        self.day_index = day_index
        self.day = day
        self.cause = cause
