"""Exception types raised by rdbtest."""


class RdbError(ValueError):
    """Input or contract violation that the caller can fix."""


class DataFormatError(RdbError):
    """Malformed count or metadata table."""


class DegenerateDesignError(RdbError):
    """The design cannot be tested (empty groups, vanishing active set...)."""


class ConvergenceError(RdbError):
    """Calibration weights could not be found."""
