"""Exception types raised across the package."""


class ParlabError(Exception):
    pass


class EmptyCylinder(ParlabError):
    """Too few lattice points inside a cylinder to resolve it."""


class OutOfDomain(ParlabError):
    pass


class BoundaryNode(ParlabError):
    pass


class FirstSlice(ParlabError):
    pass


class DegenerateTimeStep(ParlabError):
    pass


class UnstableStep(ParlabError):
    pass


class UnsupportedKind(ParlabError):
    pass


class DomainTooSmall(ParlabError):
    pass


class ConfigError(ParlabError):
    pass


class ComputeError(ParlabError):
    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
