"""Exception types shared across the package.

Two families matter to the CLI: ValidationError (bad input, exit code 2)
and SolveError (a computation that started but cannot finish, exit code 3).
"""


class SchoutenError(Exception):
    """Base class for all package errors."""


class ValidationError(SchoutenError):
    """Bad configuration, grid, expression, or precondition on user input."""


class ConfigError(ValidationError):
    pass


class ExprSyntaxError(ValidationError):
    """Parse failure; carries the 0-based byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class GridError(ValidationError):
    pass


class MetricError(ValidationError):
    """Metric not positive definite; carries the first offending node."""

    def __init__(self, message: str, node=None):
        if node is not None:
            message = f"{message} at node {tuple(int(i) for i in node)}"
        super().__init__(message)
        self.node = node


class BandUnresolvedError(ValidationError):
    """Grid spacing too coarse for the requested cutoff band."""


class SolveError(SchoutenError):
    """Base for runtime solver failures (CLI exit code 3)."""


class ExprDomainError(SolveError):
    """Evaluation hit log/sqrt of a negative number or a missing variable.

    During config loading these are wrapped into ConfigError; raised bare
    only when an expression is evaluated mid-computation.
    """


class AdmissibilityViolation(SolveError):
    """The tensor inside the determinant is not positive definite."""

    def __init__(self, message: str, node=None, margin=None):
        if node is not None:
            message = f"{message} at node {tuple(int(i) for i in node)}"
        if margin is not None:
            message = f"{message} (min eigenvalue {margin:.3e})"
        super().__init__(message)
        self.node = node
        self.margin = margin


class HypothesisError(SolveError):
    """A lemma/precondition that the input data was required to satisfy fails."""

    def __init__(self, message: str, node=None):
        if node is not None:
            message = f"{message} at node {tuple(int(i) for i in node)}"
        super().__init__(message)
        self.node = node


class LambdaSearchError(SolveError):
    """No admissible shift parameter below the cap satisfies the inequality."""

    def __init__(self, message: str, node=None, deficit=None):
        if node is not None:
            message = f"{message}; worst node {tuple(int(i) for i in node)}"
        if deficit is not None:
            message = f"{message}, deficit {deficit:.3e}"
        super().__init__(message)
        self.node = node
        self.deficit = deficit


class MaxItersExceeded(SolveError):
    pass


class AdmissibilityLost(SolveError):
    """No backtracked Newton step keeps the iterate inside the admissible cone."""


class LinearSolveFailure(SolveError):
    pass
