"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class AndersonLabError(Exception):
    """Base class for every error raised by this package."""


class ConvergenceFailure(AndersonLabError):
    def __init__(self, index: int, residual: float | None = None):
        self.index = index
        self.residual = residual
        msg = f"eigenpair {index} failed the residual test"
        if residual is not None:
            msg += f" (residual {residual:.3e})"
        super().__init__(msg)


class DegenerateDirection(AndersonLabError):
    """Transfer-matrix iterate lost all precision between renormalizations."""


class EmptyEnsemble(AndersonLabError):
    pass


class MissingCenter(AndersonLabError):
    def __init__(self, site: int):
        self.site = site
        super().__init__(f"no eigenstate is centered at site {site}")


class GridOutOfRange(AndersonLabError):
    pass


class AllSamplesZero(AndersonLabError):
    pass


class DegenerateLevel(AndersonLabError):
    def __init__(self, n: int, k: int, gap: float):
        self.n, self.k, self.gap = n, k, gap
        super().__init__(f"levels {n} and {k} are degenerate (gap {gap:.3e})")


class ConfigError(AndersonLabError):
    pass


class SchemaMismatch(AndersonLabError):
    pass


class DegenerateFit(AndersonLabError):
    pass


class FailureBudgetExceeded(AndersonLabError):
    """More than the tolerated fraction of realizations failed numerically."""
