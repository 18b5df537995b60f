# dptr_cli/core_api/exceptions.py
class DptrError(Exception):
    """Base exception for dptr application errors."""

    exit_code = 3

    def __init__(self, message, original_exception=None):
        super().__init__(message)
        self.message = message
        self.original_exception = original_exception


# --- Configuration errors (exit code 1) ---
class ConfigError(DptrError):
    """Indicates an invalid run or scenario configuration."""

    exit_code = 1


class InvalidParameterError(ConfigError):
    """Indicates an invalid parameter was provided to an API function."""

    pass


class OddNError(ConfigError):
    """A balanced non-overlapping design needs an even per-experiment sample size."""

    pass


class KTooLargeError(ConfigError):
    """The brute-force sigmoid oracle cannot enumerate 2^K treatment vectors."""

    pass


class NonPositiveTau0Error(ConfigError):
    """The oracle scale parameter needs a strictly positive prior mean."""

    pass


# --- Data errors (exit code 2) ---
class DataError(DptrError):
    """Indicates input data that cannot support the requested computation."""

    exit_code = 2


class EmptyArmError(DataError):
    """Either the treated or the control arm has no units."""

    pass


class InsufficientDataError(DataError):
    """Too few rows for the requested regression."""

    pass


class EmptyInputError(DataError):
    """An operation received an empty sequence."""

    pass


class LengthMismatchError(DataError):
    """Decision, truth and weight lengths disagree."""

    pass


class MissingDesignFactorError(DataError):
    """Personalized pooling needs a design factor b on every estimate."""

    pass


class MissingContextError(DataError):
    """A sigmoid reward was requested for a truth without the sigmoid context."""

    pass


class NoGroupsRetainedError(DataError):
    """Every covariate group fell below the minimum-size threshold."""

    pass


class GroupTooSmallError(DataError):
    """A group cannot supply the requested number of units in one of its arms."""

    def __init__(self, message, group_key=None, original_exception=None):
        super().__init__(message, original_exception=original_exception)
        self.group_key = group_key


class MissingColumnError(DataError):
    """A declared CSV column is absent from the header."""

    pass


class UnparseableRowError(DataError):
    """A CSV row could not be parsed into the declared schema."""

    def __init__(self, message, line_number=None, original_exception=None):
        super().__init__(message, original_exception=original_exception)
        self.line_number = line_number


class EmptyFileError(DataError):
    """The CSV file has no data rows."""

    pass


# --- Numeric failures (exit code 3) ---
class NumericError(DptrError):
    """Indicates an internal numerical failure."""

    exit_code = 3


class RankDeficientError(NumericError):
    """The normal equations are singular beyond the ridge tolerance."""

    pass


class NonFiniteLossError(NumericError):
    """Nuisance training diverged (usually a learning-rate misconfiguration)."""

    pass


class SingularLambdaError(NumericError):
    """The estimated Hessian could not be inverted even with ridge."""

    pass
