"""Exception hierarchy shared by every module of the package."""


class MSTCARError(Exception):
    """Base class for all package errors."""


class InvalidEdge(MSTCARError, ValueError):
    pass


class IsolatedSite(MSTCARError, ValueError):
    pass


class DisconnectedGraph(MSTCARError, ValueError):
    pass


class DimensionMismatch(MSTCARError, ValueError):
    pass


class EigenFailure(MSTCARError, RuntimeError):
    pass


class RankDeficiency(MSTCARError, ValueError):
    pass


class InvalidRho(MSTCARError, ValueError):
    pass


class NotPositiveDefinite(MSTCARError, ValueError):
    pass


class SingularDesign(MSTCARError, ValueError):
    pass


class FactorizationFailure(MSTCARError, RuntimeError):
    pass


class InsufficientData(MSTCARError, ValueError):
    pass


class DegenerateResiduals(MSTCARError, ValueError):
    pass


class InsufficientDraws(MSTCARError, ValueError):
    pass


class ZeroTotalPopulation(MSTCARError, ValueError):
    pass


class SamplerAbort(MSTCARError, RuntimeError):
    """A kernel failed inside ``run_chain``; carries the iteration number."""

    def __init__(self, iteration, cause):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"sampler aborted at iteration {iteration}: {cause!r}")
