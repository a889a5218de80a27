"""Exception types raised across kamlab."""


class KamlabError(Exception):
    """Base class for all kamlab errors."""


class DomainError(KamlabError, ValueError):
    """A point lies outside the model domain."""


class IntegrationError(KamlabError, FloatingPointError):
    """Non-finite state met while integrating a flow."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConvergenceError(KamlabError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``best`` carries whatever the solver had when it gave up.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ResolutionError(KamlabError, ValueError):
    """The grid is too coarse for the requested operation."""


class SamplingError(KamlabError, RuntimeError):
    """Too few valid samples were drawn for a probe."""


class AmbiguityError(KamlabError, RuntimeError):
    """An argmax is attained at two well separated places.

    ``candidates`` lists the competing points, ``index`` names the atom
    (when raised from a measure-level operation).
    """

    def __init__(self, message, candidates=(), index=None):
        super().__init__(message)
        self.candidates = tuple(candidates)
        self.index = index


class ValidationError(KamlabError, ValueError):
    """Inconsistent measure or plan data (marginals, weights)."""


class ConsistencyError(KamlabError, AssertionError):
    """Independent formulas for the same quantity disagree.

    ``values`` holds every formula's result so the failure can be
    serialized for a postmortem.
    """

    def __init__(self, message, values=None):
        super().__init__(message)
        self.values = dict(values or {})


class ConfigError(KamlabError, ValueError):
    """A scenario file failed validation; ``path`` points into the document."""

    def __init__(self, message, path="/"):
        super().__init__(message)
        self.path = path
