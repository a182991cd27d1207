class FactoredOTError(Exception):
    """
    Base class for every error raised by factoredot.

    The CLI catches this class and turns it into a nonzero exit code.
    """


class ConfigError(FactoredOTError, ValueError):
    pass


class MeasureError(FactoredOTError, ValueError):
    """Invalid measure, plan or dataset (including dimension mismatches)."""


class EmptyInputError(MeasureError):
    pass


class FormatError(MeasureError):
    """Structurally malformed input, such as ragged CSV rows."""


class ParseError(MeasureError):
    """A token that should be a number is not one."""


class CapacityError(FactoredOTError):
    """
    The instance is too large for the exact solver.
    Use the Sinkhorn solver instead.
    """


class ConvergenceError(FactoredOTError):
    """
    An iterative solver hit its iteration cap before reaching tolerance.

    The last iterate is kept so callers can inspect (or use) it.
    """

    def __init__(
        self,
        message: str,
        *,
        violation: float,
        iterations: int,
        last_plans: tuple = (),
        outer_iteration: int = None,
    ):
        super().__init__(message)
        self.violation = violation
        self.iterations = iterations
        self.last_plans = last_plans
        self.outer_iteration = outer_iteration

    @property
    def last_plan(self):
        return self.last_plans[0] if self.last_plans else None


class NumericalError(FactoredOTError, ArithmeticError):
    """NaN or inf where a finite number is required."""


class ConsistencyError(FactoredOTError):
    """
    If you are seeing this exception, two computations of the same
    quantity disagree beyond tolerance.
    """


class AdaptError(FactoredOTError, ValueError):
    pass
