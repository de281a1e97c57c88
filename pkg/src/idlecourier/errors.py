"""Exception hierarchy. Every error carries the zone or OD pair it concerns when known."""


class ModelError(Exception):
    """Base class for model evaluation failures."""

    def __init__(self, message, zone=None, od=None):
        super().__init__(message)
        self.zone = zone
        self.od = od


class InfeasibleSupplyError(ModelError):
    """Required driver count is outside (0, N0); no finite wage supports it."""


class DegenerateSupplyError(ModelError):
    """Non-positive idle supply passed to a square-root matching law."""


class DegenerateZoneError(ModelError):
    """A zone has no on-demand outflow, so its driver movement is undefined."""


class SingularChainError(ModelError):
    """The zone chain is (nearly) reducible and first-passage times blow up."""


class InvalidRatesError(ModelError):
    """Pick-up plus drop-off probability exceeds one in some CTMC state."""


class InfeasibleRegionError(ModelError):
    """The existence condition for the effective idle supply fails in a zone."""
