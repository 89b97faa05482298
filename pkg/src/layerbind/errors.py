"""Exception hierarchy.

Every error carries a stable machine-readable ``code`` and a distinct process
``exit_code`` so the command line can report failures in one line.
"""


class LayerBindError(Exception):
    code = "LAYERBIND_ERROR"
    exit_code = 1


class ShapeError(LayerBindError, ValueError):
    code = "SHAPE_ERROR"
    exit_code = 10


class NonFiniteError(LayerBindError, ValueError):
    code = "NON_FINITE"
    exit_code = 11


class RangeError(LayerBindError, ValueError):
    code = "RANGE_ERROR"
    exit_code = 12


class OrderingError(LayerBindError, ValueError):
    code = "ORDERING_ERROR"
    exit_code = 13


class EmptyContextError(LayerBindError, ValueError):
    code = "EMPTY_CONTEXT"
    exit_code = 14


class AllMaskedError(LayerBindError, ValueError):
    code = "ALL_MASKED"
    exit_code = 15


class SpecError(LayerBindError, ValueError):
    code = "SPEC_ERROR"
    exit_code = 16


class EmptyForegroundError(LayerBindError, ValueError):
    code = "EMPTY_FOREGROUND"
    exit_code = 17


class CountError(LayerBindError, ValueError):
    code = "COUNT_ERROR"
    exit_code = 18


class SchemaError(LayerBindError, ValueError):
    """A layout document is missing a field or has one of the wrong type.

    ``field`` names the offending key (dotted path for nested entries).
    """

    code = "SCHEMA_ERROR"
    exit_code = 3

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or field)


class ValidationError(LayerBindError, ValueError):
    code = "VALIDATION_ERROR"
    exit_code = 4

    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(str(v) for v in self.violations) or "invalid layout"
        super().__init__(msg)


class FormatError(LayerBindError, ValueError):
    code = "FORMAT_ERROR"
    exit_code = 5


class EmptyRegionError(LayerBindError, ValueError):
    code = "EMPTY_REGION"
    exit_code = 19


class DegenerateContextError(LayerBindError, ValueError):
    code = "DEGENERATE_CONTEXT"
    exit_code = 20


class EmptyRingError(LayerBindError, ValueError):
    code = "EMPTY_RING"
    exit_code = 21


class OrderError(LayerBindError, ValueError):
    code = "ORDER_ERROR"
    exit_code = 22


class ConfigError(LayerBindError, ValueError):
    code = "CONFIG_ERROR"
    exit_code = 6


class ConvergenceWarning(UserWarning):
    """The screened Poisson iteration hit ``max_iters`` before reaching ``tol``."""


ALL_ERRORS = (
    LayerBindError,
    ShapeError,
    NonFiniteError,
    RangeError,
    OrderingError,
    EmptyContextError,
    AllMaskedError,
    SpecError,
    EmptyForegroundError,
    CountError,
    SchemaError,
    ValidationError,
    FormatError,
    EmptyRegionError,
    DegenerateContextError,
    EmptyRingError,
    OrderError,
    ConfigError,
)
