"""Exception taxonomy shared across the toolkit.

Exit-code mapping used by the CLI: ParameterError -> 2,
NumericalFailure -> 3, OSError -> 4.
"""


class ParameterError(ValueError):
    """A caller-supplied parameter is outside its documented domain."""


class ContractViolation(ParameterError):
    """Shapes or lengths of inputs disagree with an operation's contract."""


class NumericalFailure(RuntimeError):
    """An iterative scheme produced a non-finite value.

    Carries the objective trace collected up to the failure so the caller
    can diagnose the divergence.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
