"""Exception hierarchy shared by all modules."""


class AllenCahnError(Exception):
    """Base class for package errors."""


class DomainError(AllenCahnError, ValueError):
    """Input outside the admissible domain of a function."""


class UsageError(AllenCahnError, ValueError):
    """Incompatible arguments, e.g. fields living on different manifolds."""


class ContractError(AllenCahnError, ValueError):
    """A structural requirement of an algorithm is violated."""


class ConfigError(AllenCahnError, ValueError):
    """Invalid run configuration. ``problems`` lists every violation found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class FormatError(AllenCahnError, ValueError):
    """Unreadable or inconsistent on-disk data."""


class NumericalError(AllenCahnError, RuntimeError):
    """A numerical procedure failed to reach its target."""


class NonConvergenceError(NumericalError):
    """Iteration budget exhausted. ``best`` holds the last/best iterate."""

    def __init__(self, message, best=None, residual=None, steps=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.steps = steps


class DegeneratePathError(NumericalError):
    """The energy along a path never rises above its endpoints."""
