"""Exception hierarchy shared by all pipeline stages."""


class CermvsError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(CermvsError):
    """Caller passed data that violates an operation's preconditions."""


class InvalidDisparityError(InvalidInputError):
    """Disparity is zero or negative; the pixel has no reconstructable depth."""


class NumericalFailureError(CermvsError):
    """A computation produced non-finite values.

    The message names the first offending layer or quantity so the failure
    can be traced without a debugger.
    """
