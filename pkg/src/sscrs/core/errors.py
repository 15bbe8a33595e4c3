EXIT_SUCCESS = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class SSCError(Exception):
    """
    Ancestor for all errors raised by sscrs.
    """

    exit_code = EXIT_DATA


class UsageError(SSCError):
    """
    Invalid flags, unknown configuration keys, inconsistent settings.
    """

    exit_code = EXIT_USAGE


class DataError(SSCError):
    """
    Malformed files, empty scenes, checkpoints that don't fit the model.
    """

    exit_code = EXIT_DATA


class NumericalCheckError(SSCError):
    """
    Raised when the finite-difference gradient suite fails.
    """

    exit_code = EXIT_NUMERICAL


def exit_code_for(e: BaseException) -> int:
    """
    Determines the process exit code for the exception.

    :param e: the exception to inspect
    :type e: BaseException
    :return: the exit code
    :rtype: int
    """
    if isinstance(e, SSCError):
        return e.exit_code
    # anything else (malformed files, failed kernel preconditions) counts as a data error
    return EXIT_DATA
