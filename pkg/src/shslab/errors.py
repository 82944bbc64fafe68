"""Exception hierarchy. CLI maps these onto exit codes (2 = bad input, 3 = numerics)."""


class ShslabError(Exception):
    """Base class for all errors raised by this package."""


class NetworkFormatError(ShslabError):
    """A network/config document violates the schema. Carries a document location."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class ConfigError(ShslabError):
    """An experiment or stage configuration is inconsistent."""


class SegmentationError(ShslabError):
    """A bus-to-segment assignment cannot produce valid segments."""


class BuildError(ShslabError):
    """State-space assembly failed (bad contingency reference, no equilibrium, ...)."""


class NumericalError(ShslabError):
    """A numerical routine failed (singular matrix, eigensolver non-convergence, ...)."""


class DegenerateDesignError(ShslabError):
    """Probing design is degenerate (zero state bound or indistinguishable scenarios)."""


class EstimationError(ShslabError):
    """Initial-state estimation cannot proceed (unobservable model, shape mismatch)."""
