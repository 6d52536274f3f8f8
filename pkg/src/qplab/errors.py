"""Exception types shared across the package."""


class QplabError(Exception):
    """Base class for all qplab-specific failures."""


class ConfigError(QplabError):
    """A scenario or sweep configuration is inconsistent or unparseable."""


class GridTooCoarse(QplabError):
    """The actuator grid violates the marching step-size restriction."""


class NonFiniteError(QplabError):
    """A computation produced inf/nan (numerical blowup or bad input).

    When raised from a simulation, ``partial_trace`` carries whatever
    portion of the trace was completed before the blowup.
    """

    def __init__(self, message, partial_trace=None):
        super().__init__(message)
        self.partial_trace = partial_trace


class InvalidDelta(QplabError):
    """The decay-rate design parameter is outside its admissible interval."""


class Infeasible(QplabError):
    """A feasibility search found no admissible point."""


class NotContracting(QplabError):
    """The delay-free nominal loop fails to decay; no certificate exists."""
