"""Exception hierarchy shared by every solver and the CLI."""


class HierGameError(Exception):
    """Base class for all package errors."""


class DomainError(HierGameError, ValueError):
    """A function was evaluated outside its admissible domain."""


class ParameterError(HierGameError, ValueError):
    """Invalid construction parameters (functions, boxes, generators, options)."""


class ConvexityError(HierGameError):
    """A scalar subproblem is not convex and no proximal term rescues it."""


class ValidationError(HierGameError):
    """An instance violates its form invariants.

    The full :class:`~hiergame.model.ValidationReport` is kept on ``report``.
    """

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(report.errors) or "invalid instance")


class InfeasibleError(HierGameError):
    """The linear coupling constraints admit no point inside the boxes.

    Solvers attach the (empty) outer trace as ``trace``.
    """

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class InstanceMismatchError(HierGameError):
    """An oracle reference was computed for a different instance."""


class NonConvergenceError(HierGameError):
    """An iteration budget ran out.

    ``trace`` holds whatever was recorded before giving up (an outer
    :class:`~hiergame.trace.SolveTrace` or an inner residual history). When
    an inner loop fails inside an outer one, the outer trace is ``trace``
    and the inner residuals are ``inner_history``.
    """

    def __init__(self, message, trace=None, inner_history=None):
        self.trace = trace
        self.inner_history = inner_history
        super().__init__(message)
