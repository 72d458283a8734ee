"""Exception types shared across the package.

Errors that carry offending rows/cells expose them as attributes so callers
(and the CLI) can report every violation, not just the first.
"""


class OrthopanelError(Exception):
    """Base class for all package errors."""


class MissingCell(OrthopanelError):
    """Unbalanced panel: (id, t) cells absent, or empty values in present rows."""

    def __init__(self, message, cells=None):
        super().__init__(message)
        self.cells = list(cells) if cells is not None else []


class DuplicateRow(OrthopanelError):
    """The same (id, t) pair appears more than once."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = list(rows) if rows is not None else []


class NonNumericValue(OrthopanelError):
    """A numeric column holds a value that does not parse."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = list(rows) if rows is not None else []


class InvalidFoldCount(OrthopanelError):
    """Fold count outside 2 <= L <= n."""


class SingletonGroupPeriod(OrthopanelError):
    """A demeaning group has fewer than 2 members."""


class RankDeficientDesign(OrthopanelError):
    """Within-transformed regressor matrix is rank deficient."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class HorizonTooLarge(OrthopanelError):
    """Requested averaging window exceeds the available periods."""


class FoldTooSmall(OrthopanelError):
    """Shrinkage needs at least 2 individuals in the fold."""


class SpecMismatch(OrthopanelError):
    """Dictionary feature layout differs between fit and predict."""


class NoConvergence(OrthopanelError):
    """Iterative solver exhausted its budget (best iterate attached)."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SingularNestedFit(OrthopanelError):
    """Nested first-stage subset is empty or too small."""


class SingularJacobian(OrthopanelError):
    """Moment Jacobian not usable for a Gauss-Newton step."""


class RankDeficientJacobian(OrthopanelError):
    """G'UG is singular in the sandwich variance."""


class DegenerateRegressor(OrthopanelError):
    """Plug-in regression needs non-degenerate alpha variance."""


class NegativeSignalVariance(OrthopanelError):
    """Corrected variance of the latent effect is not positive (flag, floored)."""


class TooManyFailures(OrthopanelError):
    """More than 10% of Monte Carlo replications failed."""


class EstimationFailure(OrthopanelError):
    """Cross-fit estimation failed on more than half of the sample splits."""
