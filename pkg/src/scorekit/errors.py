"""Exception hierarchy shared across the package.

The CLI maps InputError (and file/parse problems) to exit code 1 and
NumericError to exit code 2; everything else is a bug and propagates.
"""


class InputError(ValueError):
    """Invalid arguments, shapes, config keys, or serialized payloads."""


class DegenerateDataError(InputError):
    """Sample set carries no usable information (e.g. all points identical)."""


class NumericError(RuntimeError):
    """Numerical failure: NaN/Inf propagation, singular systems, divergence."""


class FitError(NumericError):
    """An estimator fit could not be completed to its stated contract."""
