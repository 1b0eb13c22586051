"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numeric failures exit 3. Library code raises the most specific
class that applies.
"""


class CsknError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(CsknError, ValueError):
    """A caller violated an operation's precondition."""


class UsageError(CsknError):
    """The command line was invoked incorrectly."""


class ConfigError(UsageError):
    """A run-configuration file is malformed or contains unknown keys."""


class DataError(CsknError):
    """Input data (images, manifests, model files) is unusable."""


class DegenerateSampleError(DataError):
    """A statistic could not be estimated from the given sample."""


class DegeneratePoolError(DataError):
    """A sub-patch pool is too small or too uniform to draw from."""


class CapacityExhaustedError(DataError):
    """Every output has reached its sparsity-capacity limit."""


class DecodeError(DataError):
    """An image byte stream could not be decoded."""


class FormatError(DataError):
    """A serialized model or descriptor file is malformed."""


class UndefinedMetricError(DataError):
    """A requested metric is undefined for the given inputs."""


class NumericFailureError(CsknError):
    """An optimization produced a non-finite quantity."""
