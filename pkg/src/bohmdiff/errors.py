"""Exception types shared across the package."""


class BohmDiffError(Exception):
    """Base class for recoverable, reportable failures."""


class ForwardSingularity(BohmDiffError, ValueError):
    """The outgoing-wave model is evaluated inside the forward cutoff cone."""


class NodeProximity(BohmDiffError):
    """The density is below the floor, so the velocity is undefined."""


class ClassifyFail(BohmDiffError):
    """A Bragg channel could not be classified from the sampled G(theta)."""


class NoRoot(BohmDiffError):
    pass


class PolishDiverged(BohmDiffError):
    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed


class DegenerateNode(BohmDiffError):
    pass


class NoXPoint(BohmDiffError):
    pass


class NotSaddle(BohmDiffError):
    pass


class SeparatorMissing(BohmDiffError):
    pass


class FitDegenerate(BohmDiffError):
    pass


class BudgetExceeded(BohmDiffError, ValueError):
    """A lattice would exceed the configured atom budget."""
